"""Experiment runner: manifests, batch execution, persistence, reports.

Layout of a run directory:

    run.json                    what was run (variant, budget, seeds, config)
    queries/<pair>_<seed>.csv   one per-query log per (pair, seed)
    results/<pair>_<seed>.tea   final adversarial tensor per (pair, seed)
    summary.jsonl               one line per (pair, seed)
    skipped.csv                 pairs excluded by the precondition policy
    report/                     tables and figures emitted by report()

Reports are computed strictly from the persisted files, so re-running
report() on an existing directory reproduces its tables byte for byte.
"""

import csv
import json
import math
import re
import threading
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import metrics, tensorio
from .attack import AttackConfig, run_tea
from .edgemask import MaskVariant
from .metrics import DistanceCurve, PairRecord, StratifyKey
from .oracle import LinearOracle, OracleError, PrototypeOracle, RemoteOracle

DEFAULT_ALPHAS = (50.0, 75.0)


@dataclass(frozen=True)
class PairEntry:
    pair_id: str
    source_path: Path
    target_path: Path
    source_label: int | None = None
    target_label: int | None = None


@dataclass
class PairManifest:
    """CSV manifest of attack pairs.

    Columns: pair_id, source, target, and optionally source_label and
    target_label. Relative paths resolve against the manifest's directory.
    """

    entries: list[PairEntry]

    def __post_init__(self):
        if not self.entries:
            raise ValueError("manifest has no entries")
        counts = Counter(e.pair_id for e in self.entries)
        dupes = sorted(pid for pid, n in counts.items() if n > 1)
        if dupes:
            raise ValueError(f"duplicate pair ids: {dupes}")
        slugs = Counter(_slug(e.pair_id) for e in self.entries)
        collisions = sorted(s for s, n in slugs.items() if n > 1)
        if collisions:
            raise ValueError(f"pair ids collide after sanitizing: {collisions}")

    @classmethod
    def load(cls, path) -> "PairManifest":
        path = Path(path)
        base = path.parent
        entries = []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = {"pair_id", "source", "target"} - set(reader.fieldnames or [])
            if missing:
                raise ValueError(f"{path}: manifest missing columns {sorted(missing)}")
            for row in reader:
                entries.append(
                    PairEntry(
                        pair_id=row["pair_id"].strip(),
                        source_path=base / row["source"].strip(),
                        target_path=base / row["target"].strip(),
                        source_label=_opt_int(row.get("source_label")),
                        target_label=_opt_int(row.get("target_label")),
                    )
                )
        return cls(entries)


def _opt_int(value) -> int | None:
    value = (value or "").strip()
    return int(value) if value else None


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "-", name)


@dataclass
class RunSpec:
    manifest: PairManifest
    oracle_spec: str = "prototype"
    config: AttackConfig = field(default_factory=AttackConfig)
    variant: MaskVariant = MaskVariant.TEA
    budget: int = 500
    seeds: tuple[int, ...] = (0,)
    workers: int = 1
    resize_to: tuple[int, int] | None = None
    resize_method: str = "bilinear"

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        if self.budget < 0:
            raise ValueError(f"budget must be >= 0, got {self.budget}")
        if not self.seeds:
            raise ValueError("need at least one seed")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")


class OracleFactory:
    """Turns a CLI-style oracle spec string into per-pair oracle instances.

    "prototype"                  per-pair 2-class oracle whose class 0 is the
                                 pair's target image and class 1 its source
    "prototype:p0.tea,p1.tea"    one shared oracle over listed prototype files
    "linear[:classes=K,seed=S]"  one shared random affine oracle
    "remote:URL"                 client for a live classification server
    """

    def __init__(self, spec: str, resize_to=None, resize_method: str = "bilinear"):
        self.spec = spec.strip()
        kind, _, arg = self.spec.partition(":")
        if kind not in ("prototype", "linear", "remote"):
            raise ValueError(f"unknown oracle spec {self.spec!r}")
        if kind == "remote" and not arg:
            raise ValueError("remote oracle needs an endpoint, e.g. remote:http://host:port")
        self._kind, self._arg = kind, arg
        self._resize_to = resize_to
        self._resize_method = resize_method
        self._shared = None
        self._lock = threading.Lock()

    def for_pair(self, x_s: np.ndarray, x_t: np.ndarray):
        if self._kind == "prototype" and not self._arg:
            return PrototypeOracle([x_t, x_s])
        with self._lock:
            if self._shared is None:
                self._shared = self._build_shared(x_s.shape)
            return self._shared

    def _build_shared(self, shape):
        if self._kind == "prototype":
            protos = [
                tensorio.ingest_image(p.strip(), self._resize_to, self._resize_method)
                for p in self._arg.split(",")
                if p.strip()
            ]
            return PrototypeOracle(protos)
        if self._kind == "linear":
            params = dict(kv.split("=", 1) for kv in self._arg.split(",") if kv)
            classes = int(params.pop("classes", 10))
            seed = int(params.pop("seed", 0))
            if params:
                raise ValueError(f"unknown linear oracle params: {sorted(params)}")
            return LinearOracle.random(classes, shape, seed)
        return RemoteOracle(self._arg)


def run_experiment(spec: RunSpec, out_dir) -> tuple[list[PairRecord], list[dict]]:
    """Run every (pair, seed) job, persist all outputs, return the records.

    Pairs that fail to load or violate the label precondition are skipped,
    listed in skipped.csv, and excluded from the returned records, so
    aggregate metrics cover attacked pairs only. Jobs run concurrently up to
    spec.workers; outputs are sorted before writing so the files do not
    depend on scheduling.
    """
    out = Path(out_dir)
    (out / "queries").mkdir(parents=True, exist_ok=True)
    (out / "results").mkdir(exist_ok=True)
    factory = OracleFactory(spec.oracle_spec, spec.resize_to, spec.resize_method)

    skipped: list[dict] = []

    def skip(pair_id, seed, reason):
        skipped.append({"pair_id": pair_id, "seed": seed, "reason": reason})

    jobs = []
    for entry in spec.manifest.entries:
        try:
            x_s = tensorio.ingest_image(entry.source_path, spec.resize_to, spec.resize_method)
            x_t = tensorio.ingest_image(entry.target_path, spec.resize_to, spec.resize_method)
            if x_s.shape != x_t.shape:
                raise ValueError(f"source shape {x_s.shape} != target shape {x_t.shape}")
            oracle = factory.for_pair(x_s, x_t)
            y_s = oracle.classify(x_s)
            y_t = oracle.classify(x_t)
        except (OSError, ValueError, OracleError) as exc:
            skip(entry.pair_id, "*", str(exc))
            continue
        if y_s == y_t:
            skip(entry.pair_id, "*", f"source and target both classify as {y_s}")
            continue
        if entry.source_label is not None and y_s != entry.source_label:
            skip(entry.pair_id, "*", f"source label {y_s} != expected {entry.source_label}")
            continue
        if entry.target_label is not None and y_t != entry.target_label:
            skip(entry.pair_id, "*", f"target label {y_t} != expected {entry.target_label}")
            continue
        for seed in spec.seeds:
            jobs.append((entry, x_s, x_t, oracle, seed))

    def execute(job):
        entry, x_s, x_t, oracle, seed = job
        try:
            result = run_tea(
                oracle,
                x_s,
                x_t,
                cfg=spec.config,
                variant=spec.variant,
                budget=spec.budget,
                rng=np.random.default_rng(seed),
            )
            curve = DistanceCurve.from_log(result.initial_distance, result.log)
            try:
                ssim_value = metrics.ssim(result.x_adv, x_s)
            except ValueError:
                ssim_value = float("nan")
            record = PairRecord(
                pair_id=entry.pair_id,
                initial_distance=result.initial_distance,
                curve=curve,
                turning_point=result.turning_point,
                ssim_to_source=ssim_value,
                edge_density_source=metrics.edge_density(x_s),
                edge_density_target=metrics.edge_density(x_t),
                seed=seed,
                variant=spec.variant.value,
            )
            return "ok", entry, seed, result, record
        except Exception as exc:
            return "skip", entry.pair_id, seed, f"{type(exc).__name__}: {exc}"

    if spec.workers == 1:
        outcomes = [execute(job) for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=spec.workers) as pool:
            outcomes = list(pool.map(execute, jobs))

    finished = []
    for outcome in outcomes:
        if outcome[0] == "ok":
            finished.append(outcome[1:])
        else:
            skip(*outcome[1:])
    finished.sort(key=lambda item: (item[0].pair_id, item[1]))
    skipped.sort(key=lambda item: (item["pair_id"], str(item["seed"])))

    _persist(out, spec, finished, skipped)
    return [record for (_, _, _, record) in finished], skipped


def _persist(out: Path, spec: RunSpec, finished, skipped) -> None:
    with open(out / "run.json", "w") as fh:
        json.dump(
            {
                "variant": spec.variant.value,
                "budget": spec.budget,
                "seeds": list(spec.seeds),
                "oracle": spec.oracle_spec,
                "workers": spec.workers,
                "config": asdict(spec.config),
            },
            fh,
            indent=2,
        )
        fh.write("\n")

    for entry, seed, result, _ in finished:
        stem = f"{_slug(entry.pair_id)}_{seed}"
        tensorio.write_tensor(out / "results" / f"{stem}.tea", result.x_adv)
        with open(out / "queries" / f"{stem}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["pair_id", "seed", "query", "stage", "accepted", "distance"])
            for e in result.log:
                writer.writerow(
                    [entry.pair_id, seed, e.query_index, e.stage.value, int(e.accepted), e.distance]
                )

    with open(out / "summary.jsonl", "w") as fh:
        for entry, seed, result, record in finished:
            ssim_value = record.ssim_to_source
            fh.write(
                json.dumps(
                    {
                        "pair_id": entry.pair_id,
                        "seed": seed,
                        "initial_distance": record.initial_distance,
                        "final_distance": record.final_distance,
                        "turning_point": record.turning_point,
                        "queries_used": record.queries_used,
                        "auc": metrics.auc(record.curve, float(record.curve.queries[-1])),
                        "ssim": None if math.isnan(ssim_value) else ssim_value,
                        "edge_density_source": record.edge_density_source,
                        "edge_density_target": record.edge_density_target,
                    }
                )
                + "\n"
            )

    with open(out / "skipped.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pair_id", "seed", "reason"])
        for row in skipped:
            writer.writerow([row["pair_id"], row["seed"], row["reason"]])


def load_run(out_dir, variant: str = "tea") -> list[PairRecord]:
    """Rebuild PairRecords from a persisted run directory."""
    out = Path(out_dir)
    records = []
    with open(out / "summary.jsonl") as fh:
        summaries = [json.loads(line) for line in fh if line.strip()]
    summaries.sort(key=lambda row: (row["pair_id"], row["seed"]))
    for row in summaries:
        stem = f"{_slug(row['pair_id'])}_{row['seed']}"
        queries = [0.0]
        distances = [float(row["initial_distance"])]
        with open(out / "queries" / f"{stem}.csv", newline="") as fh:
            for line in csv.DictReader(fh):
                queries.append(float(line["query"]))
                distances.append(float(line["distance"]))
        if int(queries[-1]) != int(row["queries_used"]):
            raise ValueError(
                f"{stem}: query log ends at {int(queries[-1])} but summary says "
                f"{row['queries_used']}"
            )
        ssim_value = row["ssim"]
        records.append(
            PairRecord(
                pair_id=row["pair_id"],
                initial_distance=float(row["initial_distance"]),
                curve=DistanceCurve(np.array(queries), np.array(distances)),
                turning_point=int(row["turning_point"]),
                ssim_to_source=float("nan") if ssim_value is None else float(ssim_value),
                edge_density_source=float(row["edge_density_source"]),
                edge_density_target=float(row["edge_density_target"]),
                seed=int(row["seed"]),
                variant=variant,
            )
        )
    return records


def _read_meta(run_dir: Path) -> dict:
    meta_path = run_dir / "run.json"
    if meta_path.exists():
        with open(meta_path) as fh:
            return json.load(fh)
    # directory produced elsewhere: fall back to names and log extents
    records = load_run(run_dir)
    budget = max((int(r.curve.queries[-1]) for r in records), default=0)
    return {"variant": run_dir.name or "tea", "budget": budget}


_VARIANT_ORDER = {"tea": 0, "half": 1, "inv": 2}


def _label_sort(label: str):
    return (_VARIANT_ORDER.get(label, len(_VARIANT_ORDER)), label)


def _reduction_at(record: PairRecord, query: float) -> float:
    return metrics.pct_reduction(record.initial_distance, record.curve.value_at(query))


def report(out_dir, grid=None, alphas=DEFAULT_ALPHAS, figures: bool = True) -> dict[str, Path]:
    """Aggregate a run directory (or a directory of variant runs) into tables.

    Writes CSV tables under <out_dir>/report and, unless disabled, PNG
    figures next to them. Returns the written paths keyed by table name.
    """
    out = Path(out_dir)
    runs: dict[str, list[PairRecord]] = {}
    budget = 0
    if (out / "summary.jsonl").exists():
        meta = _read_meta(out)
        runs[meta["variant"]] = load_run(out, meta["variant"])
        budget = int(meta["budget"])
    else:
        for sub in sorted(p for p in out.iterdir() if (p / "summary.jsonl").exists()):
            meta = _read_meta(sub)
            runs[meta["variant"]] = load_run(sub, meta["variant"])
            budget = max(budget, int(meta["budget"]))
    runs = {label: recs for label, recs in runs.items() if recs}
    if not runs:
        raise ValueError(f"{out}: no runs with records to report")
    labels = sorted(runs, key=_label_sort)

    if grid is None:
        grid = list(range(100, budget + 1, 100))
        if not grid or grid[-1] != budget:
            grid.append(max(budget, 1))
    grid = [float(g) for g in grid]

    report_dir = out / "report"
    report_dir.mkdir(exist_ok=True)
    written: dict[str, Path] = {}

    def table(name, header, rows):
        path = report_dir / f"{name}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)
        written[name] = path
        return path

    median_curves = {
        label: metrics.median_curve(runs[label], grid) for label in labels
    }
    table(
        "median_curve",
        ["query"] + labels,
        [
            [int(g)] + [median_curves[label].distances[i] for label in labels]
            for i, g in enumerate(grid)
        ],
    )

    table(
        "asr_curves",
        ["query", "alpha"] + labels,
        [
            [int(g), alpha] + [metrics.asr(runs[label], alpha, g) for label in labels]
            for g in grid
            for alpha in alphas
        ],
    )

    table(
        "auc",
        ["variant", "n", "mean_auc", "median_auc"],
        [
            [
                label,
                len(runs[label]),
                float(np.mean([metrics.auc(r.curve, float(r.curve.queries[-1])) for r in runs[label]])),
                float(np.median([metrics.auc(r.curve, float(r.curve.queries[-1])) for r in runs[label]])),
            ]
            for label in labels
        ],
    )

    cdf_rows = []
    for label in labels:
        reductions = sorted(_reduction_at(r, grid[-1]) for r in runs[label])
        for i, value in enumerate(reductions):
            cdf_rows.append([label, value, (i + 1) / len(reductions)])
    table("reduction_cdf", ["variant", "reduction_pct", "cdf"], cdf_rows)

    table(
        "ablation",
        ["variant", "n", "mean_final_l2", "median_final_l2", "mean_reduction_pct"]
        + [f"asr{int(a)}" for a in alphas],
        [
            [
                label,
                len(runs[label]),
                float(np.mean([r.curve.value_at(grid[-1]) for r in runs[label]])),
                float(np.median([r.curve.value_at(grid[-1]) for r in runs[label]])),
                float(np.mean([_reduction_at(r, grid[-1]) for r in runs[label]])),
            ]
            + [metrics.asr(runs[label], alpha, grid[-1]) for alpha in alphas]
            for label in labels
        ],
    )

    primary = labels[0]
    primary_records = runs[primary]
    if len(primary_records) >= 10 and not any(
        math.isnan(r.ssim_to_source) for r in primary_records
    ):
        groups = metrics.stratify(primary_records, StratifyKey.SSIM_DECILE)
        table(
            "strat_ssim",
            ["bin", "n", "mean_ssim", "mean_reduction_pct"],
            [
                [
                    name,
                    len(group),
                    float(np.mean([r.ssim_to_source for r in group])),
                    float(np.mean([_reduction_at(r, grid[-1]) for r in group])),
                ]
                for name, group in groups.items()
            ],
        )

    regimes = metrics.stratify(primary_records, StratifyKey.DENSITY_REGIME)
    table(
        "strat_density",
        ["regime", "n", "mean_reduction_pct"],
        [
            [
                name,
                len(group),
                float(np.mean([_reduction_at(r, grid[-1]) for r in group])) if group else "",
            ]
            for name, group in regimes.items()
        ],
    )

    stability_rows = []
    for label in labels:
        by_seed: dict[int, list[float]] = {}
        for r in runs[label]:
            by_seed.setdefault(r.seed, []).append(r.curve.value_at(grid[-1]))
        seed_means = [float(np.mean(v)) for _, v in sorted(by_seed.items())]
        std = float(np.std(seed_means, ddof=1)) if len(seed_means) > 1 else 0.0
        stability_rows.append([label, len(seed_means), float(np.mean(seed_means)), std])
    table("seed_stability", ["variant", "n_seeds", "mean_final_l2", "std_final_l2"], stability_rows)

    if figures:
        from . import figures as figs

        written.update(
            figs.render_report(
                report_dir,
                grid=grid,
                labels=labels,
                median_curves=median_curves,
                runs=runs,
                alphas=alphas,
            )
        )
    return written
