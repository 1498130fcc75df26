"""Evaluation metrics over recorded attack runs.

A run is summarized by its distance-versus-queries curve; everything here
(percent reduction, success rates, area under the curve, medians, similarity
and edge-density stratification) derives from those curves plus the images.
Distances between recorded queries carry the last value forward, so runs
that stopped early still contribute at larger budgets.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import imageops
from .edgemask import _minmax_normalize


@dataclass(frozen=True)
class DistanceCurve:
    """Sampled (query, distance) pairs with strictly increasing queries."""

    queries: np.ndarray
    distances: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.queries, dtype=np.float64)
        d = np.asarray(self.distances, dtype=np.float64)
        if q.ndim != 1 or q.shape != d.shape or q.size == 0:
            raise ValueError("queries and distances must be equal-length 1-D, nonempty")
        if np.any(np.diff(q) <= 0):
            raise ValueError("queries must be strictly increasing")
        if np.any(d < 0):
            raise ValueError("distances must be >= 0")
        object.__setattr__(self, "queries", q)
        object.__setattr__(self, "distances", d)

    @classmethod
    def from_log(cls, initial_distance: float, log) -> "DistanceCurve":
        """Curve starting at (0, initial_distance), one sample per query."""
        queries = [0.0]
        distances = [float(initial_distance)]
        for entry in log:
            queries.append(float(entry.query_index))
            distances.append(float(entry.distance))
        return cls(np.array(queries), np.array(distances))

    def value_at(self, query: float) -> float:
        return float(self.values_at([query])[0])

    def values_at(self, grid) -> np.ndarray:
        """Carry-forward lookup: the value of the most recent sample."""
        grid = np.asarray(grid, dtype=np.float64)
        if np.any(grid < self.queries[0]):
            raise ValueError(f"grid point before first sample at {self.queries[0]}")
        idx = np.searchsorted(self.queries, grid, side="right") - 1
        return self.distances[idx]


def pct_reduction(d0: float, d: float) -> float:
    if d0 <= 0:
        raise ValueError(f"initial distance must be positive, got {d0}")
    return 100.0 * (d0 - d) / d0


def auc(curve: DistanceCurve, up_to: float) -> float:
    """Trapezoid integral of the curve over [first sample, up_to].

    Distance is linear between samples and flat past the last one.
    """
    q, d = curve.queries, curve.distances
    if up_to < q[0]:
        raise ValueError(f"up_to={up_to} precedes first sample at {q[0]}")
    inside = q <= up_to
    qs, ds = q[inside], d[inside]
    if qs[-1] < up_to:
        qs = np.append(qs, up_to)
        ds = np.append(ds, np.interp(up_to, q, d))
    return float(np.trapezoid(ds, qs))


@dataclass
class PairRecord:
    """One (pair, seed) attack run reduced to its reportable quantities."""

    pair_id: str
    initial_distance: float
    curve: DistanceCurve
    turning_point: int
    ssim_to_source: float
    edge_density_source: float
    edge_density_target: float
    seed: int = 0
    variant: str = "tea"
    final_distance: float | None = None
    queries_used: int | None = None

    def __post_init__(self):
        if abs(self.curve.value_at(0) - self.initial_distance) > 1e-9:
            raise ValueError("curve must start at the initial distance")
        if self.final_distance is None:
            self.final_distance = float(self.curve.distances[-1])
        if self.queries_used is None:
            self.queries_used = int(self.curve.queries[-1])


def asr(records, alpha: float, query: float) -> float:
    """Fraction of records reaching at least alpha percent reduction by `query`."""
    if not records:
        raise ValueError("no records")
    if not 0.0 <= alpha <= 100.0:
        raise ValueError(f"alpha must be in [0, 100], got {alpha}")
    hits = sum(
        1
        for r in records
        if pct_reduction(r.initial_distance, r.curve.value_at(query)) >= alpha
    )
    return hits / len(records)


def median_curve(records, query_grid) -> DistanceCurve:
    if not records:
        raise ValueError("no records")
    grid = np.asarray(query_grid, dtype=np.float64)
    table = np.stack([r.curve.values_at(grid) for r in records])
    return DistanceCurve(grid, np.median(table, axis=0))


def _windowed_mean(plane: np.ndarray, window: np.ndarray) -> np.ndarray:
    # valid-mode weighted local mean; window sums to 1
    views = sliding_window_view(plane, window.shape)
    return np.einsum("ijkl,kl->ij", views, window)


def ssim(
    a: np.ndarray,
    b: np.ndarray,
    window_size: int = 11,
    sigma: float = 1.5,
    k1: float = 0.01,
    k2: float = 0.03,
    data_range: float = 1.0,
) -> float:
    """Mean local structural similarity, averaged over channels.

    Gaussian-weighted local statistics over valid windows only; no padding.
    """
    a = imageops.validate_image(a, "a")
    b = imageops.validate_image(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if min(a.shape[1], a.shape[2]) < window_size:
        raise ValueError(f"image smaller than the {window_size}x{window_size} window")
    k = imageops.gaussian_kernel1d(window_size, sigma)
    window = np.outer(k, k)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    per_channel = []
    for ch in range(a.shape[0]):
        pa, pb = a[ch], b[ch]
        mu_a = _windowed_mean(pa, window)
        mu_b = _windowed_mean(pb, window)
        var_a = _windowed_mean(pa * pa, window) - mu_a**2
        var_b = _windowed_mean(pb * pb, window) - mu_b**2
        cov = _windowed_mean(pa * pb, window) - mu_a * mu_b
        num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
        den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
        per_channel.append(float(np.mean(num / den)))
    return float(np.mean(per_channel))


def edge_density(img: np.ndarray, threshold: float = 0.2) -> float:
    """Fraction of pixels whose normalized gradient magnitude exceeds threshold."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    img = imageops.validate_image(img, "image")
    gray = imageops.grayscale(img)
    mag = imageops.gradient_magnitude(
        imageops.sobel(gray, 0), imageops.sobel(gray, 1)
    )
    normed = _minmax_normalize(mag)
    return float(np.mean(normed > threshold))


class StratifyKey(Enum):
    SSIM_DECILE = "ssim_decile"
    DENSITY_REGIME = "density_regime"


def stratify(records, key: StratifyKey) -> dict[str, list]:
    """Group records for reporting.

    SSIM deciles: ten near-equal bins in ascending similarity order.
    Density regimes: the corpus-wide median of all source and target edge
    densities splits each image into dense (>) or sparse (<=); keys are
    "<source>-<target>" and all four appear even when empty.
    """
    if key is StratifyKey.SSIM_DECILE:
        if len(records) < 10:
            raise ValueError(f"need >= 10 records for deciles, got {len(records)}")
        ranked = sorted(records, key=lambda r: r.ssim_to_source)
        chunks = np.array_split(np.arange(len(ranked)), 10)
        return {
            f"decile-{i + 1:02d}": [ranked[j] for j in chunk]
            for i, chunk in enumerate(chunks)
        }
    if key is StratifyKey.DENSITY_REGIME:
        if not records:
            raise ValueError("no records")
        pooled = [r.edge_density_source for r in records]
        pooled += [r.edge_density_target for r in records]
        cut = float(np.median(pooled))
        regime = lambda value: "dense" if value > cut else "sparse"
        groups: dict[str, list] = {
            "dense-dense": [], "dense-sparse": [], "sparse-dense": [], "sparse-sparse": [],
        }
        for r in records:
            groups[f"{regime(r.edge_density_source)}-{regime(r.edge_density_target)}"].append(r)
        return groups
    raise ValueError(f"unknown stratify key: {key!r}")
