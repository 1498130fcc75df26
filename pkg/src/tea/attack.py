"""Two-stage targeted attack driver and its state machines.

Stage one interpolates the whole image toward the source along a fixed
direction, masked away from edges, growing the step while the oracle keeps
returning the target label. Stage two refines locally: Gaussian-windowed
updates on randomly sized patches picked where the remaining difference is
largest. Both stages share one query budget and one log.

Conventions: images are (C, H, W) float arrays in [0, 1]; the mask is a
single (H, W) map broadcast across channels; every candidate is clamped to
[0, 1] before it is ever shown to the oracle.
"""

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from . import imageops
from .edgemask import MaskVariant, SoftEdgeMask, create_soft_edge_mask, variant_mask
from .oracle import BudgetExhaustedError, CountedOracle, OracleError, QueryBudget


class MisclassifiedInputError(OracleError):
    """Source/target pair fails the distinct-label precondition."""


class Stage(Enum):
    GLOBAL = "global"
    PATCH = "patch"


@dataclass(frozen=True)
class QueryRecord:
    """One oracle call: 1-based index, stage, verdict, and the l2 distance
    from the current adversarial image to the source after the call."""

    query_index: int
    stage: Stage
    accepted: bool
    distance: float


@dataclass
class QueryLog:
    entries: list[QueryRecord] = field(default_factory=list)

    def append(self, record: QueryRecord) -> None:
        last = self.entries[-1].query_index if self.entries else 0
        if record.query_index <= last:
            raise ValueError(
                f"query_index must increase: got {record.query_index} after {last}"
            )
        self.entries.append(record)

    def accepted_entries(self) -> list[QueryRecord]:
        return [e for e in self.entries if e.accepted]

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


@dataclass(frozen=True)
class AttackConfig:
    """Every tunable scalar of the attack, mask construction included.

    p_min, p_max, pool_kernel, and pool_stride default to None and are
    derived from the image height by resolved(); all other defaults stand
    on their own.
    """

    # mask construction
    t_low: float = 50.0
    t_high: float = 255.0
    blur_kernel: int = 5
    blur_sigma: float | None = None
    gamma: float = 1.0
    epsilon: float = 1e-8
    # global stage
    eta: float = 0.05
    momentum: float = 0.9
    tau: float = 1e-4
    qc_max: int = 200
    growth: float = 1.1
    # patch stage
    p_min: int | None = None
    p_max: int | None = None
    n_max: int = 10
    patience: int = 25
    improve_factor: float = 0.999
    pool_kernel: int | None = None
    pool_stride: int | None = None
    top_quantile: float = 0.1
    # cap on consecutive patch selections that issue no query at all, so a
    # run whose candidates all fail the improvement check still terminates
    stall_limit: int = 1000
    seed: int = 0

    def resolved(self, shape) -> "AttackConfig":
        """Fill size-dependent fields from the image shape and validate."""
        _, h, w = shape
        p_min = self.p_min if self.p_min is not None else max(1, round(16 * h / 224))
        p_max = self.p_max if self.p_max is not None else max(p_min, round(64 * h / 224))
        pool_k = self.pool_kernel if self.pool_kernel is not None else max(1, round(h / 28))
        pool_s = self.pool_stride if self.pool_stride is not None else pool_k
        cfg = replace(
            self,
            p_min=int(p_min),
            p_max=int(p_max),
            pool_kernel=int(pool_k),
            pool_stride=int(pool_s),
        )
        cfg.validate(shape)
        return cfg

    def validate(self, shape=None) -> None:
        if not 0.0 <= self.t_low <= self.t_high <= 255.0:
            raise ValueError(f"need 0 <= t_low <= t_high <= 255, got ({self.t_low}, {self.t_high})")
        if self.blur_kernel < 1 or self.blur_kernel % 2 == 0:
            raise ValueError(f"blur_kernel must be odd and positive, got {self.blur_kernel}")
        if self.blur_sigma is not None and self.blur_sigma <= 0:
            raise ValueError(f"blur_sigma must be positive, got {self.blur_sigma}")
        if self.gamma <= 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.eta <= 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.tau < 0:
            raise ValueError(f"tau must be >= 0, got {self.tau}")
        if self.qc_max < 0:
            raise ValueError(f"qc_max must be >= 0, got {self.qc_max}")
        if self.growth <= 1.0:
            raise ValueError(f"growth must exceed 1, got {self.growth}")
        if not 0.0 < self.improve_factor <= 1.0:
            raise ValueError(f"improve_factor must be in (0, 1], got {self.improve_factor}")
        if self.n_max < 1:
            raise ValueError(f"n_max must be >= 1, got {self.n_max}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if not 0.0 < self.top_quantile <= 1.0:
            raise ValueError(f"top_quantile must be in (0, 1], got {self.top_quantile}")
        if self.stall_limit < 1:
            raise ValueError(f"stall_limit must be >= 1, got {self.stall_limit}")
        if self.p_min is not None and self.p_max is not None:
            if not 1 <= self.p_min <= self.p_max:
                raise ValueError(f"need 1 <= p_min <= p_max, got ({self.p_min}, {self.p_max})")
            if shape is not None and self.p_max > min(shape[1], shape[2]):
                raise ValueError(f"p_max={self.p_max} exceeds image extent {min(shape[1], shape[2])}")
        if self.pool_kernel is not None and self.pool_kernel < 1:
            raise ValueError(f"pool_kernel must be >= 1, got {self.pool_kernel}")
        if self.pool_stride is not None and self.pool_stride < 1:
            raise ValueError(f"pool_stride must be >= 1, got {self.pool_stride}")
        if shape is not None and self.pool_kernel is not None:
            if self.pool_kernel > min(shape[1], shape[2]):
                raise ValueError(f"pool_kernel={self.pool_kernel} exceeds image extent")

    def _is_resolved(self) -> bool:
        return None not in (self.p_min, self.p_max, self.pool_kernel, self.pool_stride)


@dataclass
class AttackState:
    """Mutable carrier threaded through the stages.

    Invariant: d_base equals the l2 distance from x_current to the source,
    and x_current classifies as the target label whenever at least the
    starting image did.
    """

    x_current: np.ndarray
    v: np.ndarray
    step: float
    d_base: float
    n_break: int = 0
    log: QueryLog = field(default_factory=QueryLog)
    exhausted: bool = False


@dataclass
class StageStats:
    queries: int = 0
    accepted: int = 0
    end_distance: float = 0.0


@dataclass
class AttackResult:
    x_adv: np.ndarray
    turning_point: int
    queries_used: int
    log: QueryLog
    final_distance: float
    initial_distance: float
    exhausted: bool
    stage_stats: dict[str, StageStats]


def _check_mask(mask: SoftEdgeMask, shape) -> None:
    if mask.shape != (shape[1], shape[2]):
        raise ValueError(f"mask shape {mask.shape} != image spatial shape {shape[1:]}")


def global_search(oracle, x_s, x_t, mask, cfg, budget, y_target) -> AttackState:
    """Masked straight-line interpolation toward the source.

    The direction d = x_s - x_t is fixed at entry; momentum makes the
    effective step converge to d geometrically. The step grows after every
    accepted candidate and the stage ends on the first rejection, on the
    stage query cap, or when the shared budget runs dry. The oracle must be
    the counted wrapper charged against `budget` so log indices line up.
    """
    x_s = imageops.validate_image(x_s, "x_s")
    x_t = imageops.validate_image(x_t, "x_t")
    if x_s.shape != x_t.shape:
        raise ValueError(f"shape mismatch: {x_s.shape} vs {x_t.shape}")
    _check_mask(mask, x_s.shape)
    if not cfg._is_resolved():
        cfg = cfg.resolved(x_s.shape)

    d = x_s - x_t
    state = AttackState(
        x_current=x_t.copy(),
        v=np.zeros_like(x_t),
        step=cfg.eta * float(np.linalg.norm(d.ravel())),
        d_base=imageops.l2_distance(x_s, x_t),
    )
    keep = (1.0 - mask.map)[None]
    qc = 0
    while qc < cfg.qc_max and state.step >= cfg.tau:
        if budget.remaining <= 0:
            state.exhausted = True
            break
        state.v = cfg.momentum * state.v + (1.0 - cfg.momentum) * d
        candidate = imageops.clamp01(state.x_current + state.step * (state.v * keep))
        qc += 1
        try:
            label = oracle.classify(candidate)
        except BudgetExhaustedError:
            state.exhausted = True
            break
        if label == y_target:
            state.x_current = candidate
            state.d_base = imageops.l2_distance(x_s, candidate)
            state.step *= cfg.growth
            state.log.append(QueryRecord(budget.used, Stage.GLOBAL, True, state.d_base))
        else:
            state.log.append(QueryRecord(budget.used, Stage.GLOBAL, False, state.d_base))
            break
    return state


def select_patch(x_s, x_adv, cfg, rng) -> tuple[tuple[int, int], int]:
    """Pick a patch center among high-difference pooled cells, plus a size.

    Returns ((i_c, j_c), p) in full-resolution pixel coordinates. When the
    images are identical every cell is a candidate. Draw order is fixed,
    center first then size, so runs replay exactly.
    """
    if x_s.shape != x_adv.shape:
        raise ValueError(f"shape mismatch: {x_s.shape} vs {x_adv.shape}")
    if not cfg._is_resolved():
        cfg = cfg.resolved(x_s.shape)
    diff = np.sum(np.abs(x_s - x_adv), axis=0)
    pooled = imageops.avg_pool(diff, cfg.pool_kernel, cfg.pool_stride)
    flat = pooled.ravel()
    if flat.max() <= 0.0:
        candidates = np.arange(flat.size)
    else:
        n_top = max(1, int(np.ceil(cfg.top_quantile * flat.size)))
        candidates = np.argsort(-flat, kind="stable")[:n_top]
    cell = int(candidates[rng.integers(len(candidates))])
    ci, cj = divmod(cell, pooled.shape[1])
    center = (ci * cfg.pool_stride + cfg.pool_kernel // 2,
              cj * cfg.pool_stride + cfg.pool_kernel // 2)
    size = int(rng.integers(cfg.p_min, cfg.p_max + 1))
    return center, size


def patch_search(oracle, x_s, state, mask, cfg, budget, rng, y_target) -> AttackState:
    """Localized Gaussian-windowed refinement on high-difference patches.

    Each patch gets up to n_max inner iterations driven by local momentum
    toward the source. Candidates that cannot beat improve_factor times the
    current distance are dropped before querying, so they cost nothing. Only
    oracle rejections count toward patience; an acceptance resets it.
    """
    x_s = imageops.validate_image(x_s, "x_s")
    if x_s.shape != state.x_current.shape:
        raise ValueError(f"shape mismatch: {x_s.shape} vs {state.x_current.shape}")
    _check_mask(mask, x_s.shape)
    if not cfg._is_resolved():
        cfg = cfg.resolved(x_s.shape)

    _, h, w = x_s.shape
    stalled = 0
    while state.n_break < cfg.patience and not state.exhausted:
        if budget.remaining <= 0:
            state.exhausted = True
            break
        if state.d_base <= 1e-12:
            break
        (ic, jc), p = select_patch(x_s, state.x_current, cfg, rng)
        half = p // 2
        rows = slice(max(0, ic - half), min(h, ic + half + 1))
        cols = slice(max(0, jc - half), min(w, jc + half + 1))
        # slice of the full window so clipping at borders keeps the peak at
        # the drawn center rather than re-centering it
        full = imageops.gaussian_window(2 * half + 1, p / 3.0)
        window = full[rows.start - (ic - half): rows.stop - (ic - half),
                      cols.start - (jc - half): cols.stop - (jc - half)]
        keep = (window * (1.0 - mask.map[rows, cols]))[None]

        source_patch = x_s[:, rows, cols]
        x_patch = state.x_current[:, rows, cols].copy()
        m_patch = np.zeros_like(x_patch)
        queried = False
        for _ in range(cfg.n_max):
            if budget.remaining <= 0:
                state.exhausted = True
                break
            d_local = source_patch - x_patch
            m_patch = cfg.momentum * m_patch + (1.0 - cfg.momentum) * d_local
            s_patch = cfg.eta * state.d_base
            candidate = state.x_current.copy()
            candidate[:, rows, cols] = x_patch + s_patch * (m_patch * keep)
            candidate = imageops.clamp01(candidate)
            d_new = imageops.l2_distance(x_s, candidate)
            if d_new >= cfg.improve_factor * state.d_base:
                # geometrically useless; spend no query and try another patch
                break
            try:
                label = oracle.classify(candidate)
            except BudgetExhaustedError:
                state.exhausted = True
                break
            queried = True
            if label == y_target:
                state.x_current = candidate
                x_patch = candidate[:, rows, cols].copy()
                state.d_base = d_new
                state.n_break = 0
                state.log.append(QueryRecord(budget.used, Stage.PATCH, True, d_new))
            else:
                state.n_break += 1
                state.log.append(QueryRecord(budget.used, Stage.PATCH, False, state.d_base))
                break
        stalled = 0 if queried else stalled + 1
        if stalled >= cfg.stall_limit:
            break
    return state


def run_tea(oracle, x_s, x_t, cfg=None, variant=MaskVariant.TEA, budget=500, rng=None) -> AttackResult:
    """Full attack: mask from the target image, global stage, then patch stage.

    `oracle` is queried twice up front, outside the budget, to verify that
    source and target classify differently; those probes are setup checks,
    not attack queries. `budget` is an int or a QueryBudget; `rng` is a seed
    or Generator, defaulting to cfg.seed.
    """
    x_s = imageops.validate_image(x_s, "x_s")
    x_t = imageops.validate_image(x_t, "x_t")
    if x_s.shape != x_t.shape:
        raise ValueError(f"shape mismatch: {x_s.shape} vs {x_t.shape}")
    cfg = (cfg if cfg is not None else AttackConfig()).resolved(x_s.shape)

    y_s = oracle.classify(x_s)
    y_t = oracle.classify(x_t)
    if y_s == y_t:
        raise MisclassifiedInputError(
            f"source and target both classify as {y_s}; need distinct labels"
        )

    mask = variant_mask(create_soft_edge_mask(x_t, cfg), variant)
    shared = budget if isinstance(budget, QueryBudget) else QueryBudget(int(budget))
    counted = CountedOracle(oracle, shared)
    rng = np.random.default_rng(cfg.seed if rng is None else rng)
    initial = imageops.l2_distance(x_s, x_t)

    state = global_search(counted, x_s, x_t, mask, cfg, shared, y_target=y_t)
    global_n = len(state.log)
    global_acc = len(state.log.accepted_entries())
    global_end = state.d_base
    if not state.exhausted:
        state = patch_search(counted, x_s, state, mask, cfg, shared, rng, y_target=y_t)

    stats = {
        "global": StageStats(global_n, global_acc, global_end),
        "patch": StageStats(
            len(state.log) - global_n,
            len(state.log.accepted_entries()) - global_acc,
            state.d_base,
        ),
    }
    entries = state.log.entries
    return AttackResult(
        x_adv=state.x_current,
        turning_point=entries[-1].query_index if entries else 0,
        queries_used=shared.used,
        log=state.log,
        final_distance=state.d_base,
        initial_distance=initial,
        exhausted=state.exhausted,
        stage_stats=stats,
    )
