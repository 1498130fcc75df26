"""Command-line front end.

Verbs: mask (emit a soft edge mask), attack (one pair), bench (manifest
batch), ablate (mask-variant sweep), report (aggregate persisted logs).

Settings resolve from lowest to highest precedence: built-in defaults, the
YAML --config file, then command-line flags. The TEA_OUT environment
variable overrides any --out. Attack scalars (step factor, momentum, patch
bounds, ...) are set in the config file under the "attack" key.
"""

import argparse
import os
import sys
from dataclasses import fields, replace
from pathlib import Path

import yaml

from . import harness, tensorio
from .attack import AttackConfig
from .edgemask import MaskVariant, create_soft_edge_mask, variant_mask
from .harness import DEFAULT_ALPHAS, PairEntry, PairManifest, RunSpec
from .oracle import OracleError


class _Settings:
    """Flag value if given, else config-file value, else default."""

    def __init__(self, args: argparse.Namespace):
        self.flags = vars(args)
        self.file: dict = {}
        config_path = self.flags.get("config")
        if config_path:
            with open(config_path) as fh:
                loaded = yaml.safe_load(fh) or {}
            if not isinstance(loaded, dict):
                raise ValueError(f"{config_path}: config must be a mapping")
            self.file = loaded

    def get(self, key, default=None):
        value = self.flags.get(key)
        if value is not None:
            return value
        if key in self.file:
            return self.file[key]
        return default

    def out_dir(self) -> Path:
        return Path(os.environ.get("TEA_OUT") or self.get("out", "tea-out"))

    def attack_config(self) -> AttackConfig:
        overrides = self.file.get("attack") or {}
        known = {f.name for f in fields(AttackConfig)}
        unknown = sorted(set(overrides) - known)
        if unknown:
            raise ValueError(f"unknown attack config keys: {unknown}")
        return replace(AttackConfig(), **overrides)

    def variant(self) -> MaskVariant:
        return MaskVariant(self.get("variant", "tea"))

    def seeds(self) -> tuple[int, ...]:
        return _int_tuple(self.get("seeds", (0,)))

    def grid(self):
        raw = self.get("grid")
        return None if raw is None else list(_int_tuple(raw))

    def resize_to(self):
        raw = self.get("resize")
        if raw is None:
            return None
        if isinstance(raw, str):
            h, _, w = raw.lower().partition("x")
            return (int(h), int(w))
        h, w = raw
        return (int(h), int(w))


def _int_tuple(raw) -> tuple[int, ...]:
    if isinstance(raw, str):
        parts = [p for p in raw.split(",") if p.strip()]
    elif isinstance(raw, int):
        parts = [raw]
    else:
        parts = list(raw)
    if not parts:
        raise ValueError("expected at least one integer")
    return tuple(int(p) for p in parts)


def _run_spec(settings: _Settings, manifest: PairManifest) -> RunSpec:
    return RunSpec(
        manifest=manifest,
        oracle_spec=settings.get("oracle", "prototype"),
        config=settings.attack_config(),
        variant=settings.variant(),
        budget=int(settings.get("budget", 500)),
        seeds=settings.seeds(),
        workers=int(settings.get("workers", 1)),
        resize_to=settings.resize_to(),
        resize_method=settings.get("resize_method", "bilinear"),
    )


def _cmd_mask(args) -> int:
    settings = _Settings(args)
    cfg = settings.attack_config()
    img = tensorio.ingest_image(args.image, settings.resize_to(),
                                settings.get("resize_method", "bilinear"))
    mask = variant_mask(create_soft_edge_mask(img, cfg), settings.variant())
    out = settings.out_dir()
    out.mkdir(parents=True, exist_ok=True)
    tensor_path = out / "mask.tea"
    png_path = out / "mask.png"
    tensorio.write_tensor(tensor_path, mask.map[None])
    tensorio.save_png(png_path, mask.map[None])
    print(f"wrote {tensor_path} and {png_path}")
    return 0


def _single_pair_manifest(args) -> PairManifest:
    if args.manifest:
        manifest = PairManifest.load(args.manifest)
        if len(manifest.entries) != 1:
            raise ValueError(
                f"attack runs one pair; manifest has {len(manifest.entries)} "
                "(use bench for batches)"
            )
        return manifest
    if not (args.source and args.target):
        raise ValueError("attack needs --source and --target, or a one-row --manifest")
    return PairManifest(
        [PairEntry(args.pair_id, Path(args.source), Path(args.target))]
    )


def _cmd_attack(args) -> int:
    settings = _Settings(args)
    spec = _run_spec(settings, _single_pair_manifest(args))
    out = settings.out_dir()
    records, skipped = harness.run_experiment(spec, out)
    for row in skipped:
        print(f"skipped {row['pair_id']} (seed {row['seed']}): {row['reason']}", file=sys.stderr)
    if not records:
        return 1
    for r in records:
        reduction = 100.0 * (r.initial_distance - r.final_distance) / r.initial_distance
        print(
            f"{r.pair_id} seed={r.seed}: l2 {r.initial_distance:.4f} -> "
            f"{r.final_distance:.4f} ({reduction:.1f}% reduction, "
            f"{r.queries_used} queries, turning point {r.turning_point})"
        )
    print(f"outputs in {out}")
    return 0


def _cmd_bench(args) -> int:
    settings = _Settings(args)
    spec = _run_spec(settings, PairManifest.load(args.manifest))
    out = settings.out_dir()
    records, skipped = harness.run_experiment(spec, out)
    print(f"{len(records)} runs finished, {len(skipped)} skipped; outputs in {out}")
    return 0 if records else 1


def _cmd_ablate(args) -> int:
    settings = _Settings(args)
    manifest = PairManifest.load(args.manifest)
    out = settings.out_dir()
    variants = [MaskVariant(v) for v in (
        args.variants.split(",") if args.variants else ["tea", "inv", "half"]
    )]
    total = 0
    for variant in variants:
        spec = _run_spec(settings, manifest)
        spec.variant = variant
        records, skipped = harness.run_experiment(spec, out / variant.value)
        total += len(records)
        print(f"{variant.value}: {len(records)} runs, {len(skipped)} skipped")
    if not total:
        return 1
    written = harness.report(out, grid=settings.grid(), figures=not args.no_figures)
    print(f"report tables in {out / 'report'} ({len(written)} files)")
    return 0


def _cmd_report(args) -> int:
    settings = _Settings(args)
    alphas = tuple(float(a) for a in _int_tuple(args.alphas)) if args.alphas else DEFAULT_ALPHAS
    written = harness.report(
        settings.out_dir(),
        grid=settings.grid(),
        alphas=alphas,
        figures=not args.no_figures,
    )
    for name, path in sorted(written.items()):
        print(f"{name}: {path}")
    return 0


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="YAML settings file")
    parser.add_argument("--oracle", help="prototype | prototype:FILES | linear[:classes=K,seed=S] | remote:URL")
    parser.add_argument("--variant", choices=[v.value for v in MaskVariant])
    parser.add_argument("--budget", type=int, help="query budget per run")
    parser.add_argument("--seeds", help="comma-separated seeds, e.g. 0,1,2,3,4")
    parser.add_argument("--workers", type=int, help="concurrent attack runs")
    parser.add_argument("--out", help="output directory (env TEA_OUT overrides)")
    parser.add_argument("--grid", help="comma-separated query grid for reports")
    parser.add_argument("--resize", help="resize inputs to HxW, e.g. 224x224")
    parser.add_argument("--resize-method", dest="resize_method", choices=["nearest", "bilinear"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tea",
        description="Targeted edge-informed hard-label attack engine and benchmark harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_mask = sub.add_parser("mask", help="emit the soft edge mask of an image")
    p_mask.add_argument("image", help="PNG or TEA1 tensor file")
    _add_common(p_mask)
    p_mask.set_defaults(func=_cmd_mask)

    p_attack = sub.add_parser("attack", help="attack a single source/target pair")
    p_attack.add_argument("--source", help="source image path")
    p_attack.add_argument("--target", help="target image path")
    p_attack.add_argument("--pair-id", default="pair")
    p_attack.add_argument("--manifest", help="one-row manifest instead of --source/--target")
    _add_common(p_attack)
    p_attack.set_defaults(func=_cmd_attack)

    p_bench = sub.add_parser("bench", help="run a manifest batch")
    p_bench.add_argument("--manifest", required=True)
    _add_common(p_bench)
    p_bench.set_defaults(func=_cmd_bench)

    p_ablate = sub.add_parser("ablate", help="run the tea/inv/half mask-variant sweep")
    p_ablate.add_argument("--manifest", required=True)
    p_ablate.add_argument("--variants", help="subset, e.g. tea,half")
    p_ablate.add_argument("--no-figures", action="store_true")
    _add_common(p_ablate)
    p_ablate.set_defaults(func=_cmd_ablate)

    p_report = sub.add_parser("report", help="aggregate a persisted run directory")
    p_report.add_argument("--no-figures", action="store_true")
    p_report.add_argument("--alphas", help="comma-separated ASR thresholds, default 50,75")
    _add_common(p_report)
    p_report.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, OracleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
