"""Soft edge mask construction and its ablation variants.

The mask is a single (H, W) map in [0, min(gamma, 1)], high near structural
edges of the target image. Attack updates scale by (1 - mask), so edge pixels
are protected while smooth regions absorb the perturbation. The INV variant
flips protection onto non-edge pixels; HALF spreads the same total editable
budget uniformly as a control.
"""

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from . import imageops


class MaskVariant(Enum):
    TEA = "tea"
    INV = "inv"
    HALF = "half"


@dataclass(frozen=True)
class SoftEdgeMask:
    """An (H, W) edge-protection map plus the parameters that built it."""

    map: np.ndarray
    gamma: float
    thresholds: tuple[float, float]
    blur_kernel: int
    epsilon: float

    @property
    def max_value(self) -> float:
        return min(self.gamma, 1.0)

    @property
    def shape(self) -> tuple[int, int]:
        return self.map.shape

    def editable_budget(self) -> float:
        """Total per-pixel editability, sum(1 - mask)."""
        return float(np.sum(1.0 - self.map))


def _minmax_normalize(m: np.ndarray) -> np.ndarray:
    # Constant maps: all-zeros if the constant is 0, all-ones otherwise,
    # preserving the no-edges / all-edges semantics without dividing by zero.
    lo = float(m.min())
    hi = float(m.max())
    if hi - lo <= 1e-12:
        if abs(hi) <= 1e-12:
            return np.zeros_like(m)
        return np.ones_like(m)
    return (m - lo) / (hi - lo)


def create_soft_edge_mask(img: np.ndarray, cfg) -> SoftEdgeMask:
    """Build the soft edge mask of an image.

    Pipeline: grayscale, Sobel x/y, gradient magnitude, rescale to [0, 255]
    against the map maximum, keep the [t_low, t_high] band as a binary mask,
    Gaussian-blur it, min-max normalize, scale by gamma and clamp to [0, 1].
    """
    img = imageops.validate_image(img)
    if not (0.0 <= cfg.t_low <= cfg.t_high <= 255.0):
        raise ValueError(f"need 0 <= t_low <= t_high <= 255, got ({cfg.t_low}, {cfg.t_high})")
    gray = imageops.grayscale(img)
    sx = imageops.sobel(gray, 0)
    sy = imageops.sobel(gray, 1)
    g = imageops.gradient_magnitude(sx, sy)
    g = 255.0 * g / (float(g.max()) + cfg.epsilon)
    band = np.where((g >= cfg.t_low) & (g <= cfg.t_high), 255.0, 0.0)
    blurred = imageops.gaussian_blur(band, cfg.blur_kernel, getattr(cfg, "blur_sigma", None))
    mask = np.clip(cfg.gamma * _minmax_normalize(blurred), 0.0, 1.0)
    return SoftEdgeMask(
        map=mask,
        gamma=float(cfg.gamma),
        thresholds=(float(cfg.t_low), float(cfg.t_high)),
        blur_kernel=int(cfg.blur_kernel),
        epsilon=float(cfg.epsilon),
    )


def variant_mask(mask: SoftEdgeMask, kind: MaskVariant) -> SoftEdgeMask:
    """Apply an ablation transform to a mask.

    TEA is the identity. INV reflects the map about its ceiling, so formerly
    protected pixels become editable and vice versa. HALF replaces the map by
    the constant whose total editable budget sum(1 - m) matches the input's.
    """
    if kind is MaskVariant.TEA:
        return mask
    if kind is MaskVariant.INV:
        return replace(mask, map=mask.max_value - mask.map)
    if kind is MaskVariant.HALF:
        c = float(mask.map.mean())
        return replace(mask, map=np.full_like(mask.map, c))
    raise ValueError(f"unknown mask variant {kind!r}")
