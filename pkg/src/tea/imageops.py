"""Deterministic image-processing primitives shared by the mask builder, the
attack loops, and the metrics.

Images are float arrays of shape (C, H, W) with values in [0, 1]; scalar maps
are (H, W) float arrays with no range restriction. All functions are pure.
"""

import numpy as np

# BT.601 luminance weights, the convention used by common Sobel pipelines.
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114], dtype=np.float64)


def validate_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    """Check the (C, H, W) / [0, 1] contract and return the array as float64."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError(f"{name} must have shape (C, H, W), got {arr.shape}")
    if min(arr.shape) < 1:
        raise ValueError(f"{name} has an empty dimension: {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(f"{name} has values outside [0, 1]")
    return arr


def grayscale(img: np.ndarray) -> np.ndarray:
    """Collapse a (C, H, W) image to an (H, W) luminance map.

    3-channel images use BT.601 weights; 1-channel images pass through.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3:
        raise ValueError(f"expected (C, H, W) image, got shape {img.shape}")
    if img.shape[0] == 1:
        return img[0].copy()
    if img.shape[0] == 3:
        return np.tensordot(LUMA_WEIGHTS, img, axes=1)
    raise ValueError(f"unsupported channel count {img.shape[0]}; expected 1 or 3")


def sobel(gray: np.ndarray, axis: int) -> np.ndarray:
    """3x3 Sobel derivative along the given axis with replicate padding.

    axis=0 differentiates down rows (kernel [1,2,1] x [-1,0,1] transposed),
    axis=1 across columns. Applied as correlation; matches the usual
    image-library convention. Gradient magnitude is sign-independent.
    """
    gray = np.asarray(gray, dtype=np.float64)
    if gray.ndim != 2:
        raise ValueError(f"expected (H, W) map, got shape {gray.shape}")
    if gray.shape[0] < 3 or gray.shape[1] < 3:
        raise ValueError(f"map {gray.shape} smaller than the 3x3 kernel")
    p = np.pad(gray, 1, mode="edge")
    if axis == 0:
        smooth = p[:, :-2] + 2.0 * p[:, 1:-1] + p[:, 2:]
        return smooth[2:, :] - smooth[:-2, :]
    if axis == 1:
        smooth = p[:-2, :] + 2.0 * p[1:-1, :] + p[2:, :]
        return smooth[:, 2:] - smooth[:, :-2]
    raise ValueError(f"axis must be 0 or 1, got {axis}")


def gradient_magnitude(sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    """Element-wise Euclidean magnitude of two same-shape gradient maps."""
    sx = np.asarray(sx, dtype=np.float64)
    sy = np.asarray(sy, dtype=np.float64)
    if sx.shape != sy.shape:
        raise ValueError(f"shape mismatch: {sx.shape} vs {sy.shape}")
    return np.sqrt(sx * sx + sy * sy)


def gaussian_kernel1d(size: int, sigma: float | None = None) -> np.ndarray:
    """Normalized 1-D Gaussian taps of odd length.

    When sigma is omitted it follows the mainstream image-library default
    sigma = 0.3*((size-1)*0.5 - 1) + 0.8.
    """
    if size < 1 or size % 2 == 0:
        raise ValueError(f"kernel size must be odd and positive, got {size}")
    if sigma is None:
        sigma = 0.3 * ((size - 1) * 0.5 - 1.0) + 0.8
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    c = (size - 1) / 2.0
    w = np.exp(-((np.arange(size, dtype=np.float64) - c) ** 2) / (2.0 * sigma * sigma))
    return w / w.sum()


def gaussian_blur(map_: np.ndarray, kernel_size: int, sigma: float | None = None) -> np.ndarray:
    """Separable Gaussian blur with replicate padding; kernel sums to 1."""
    m = np.asarray(map_, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected (H, W) map, got shape {m.shape}")
    k = gaussian_kernel1d(kernel_size, sigma)
    r = kernel_size // 2
    if r == 0:
        return m.copy()
    h, w = m.shape
    p = np.pad(m, ((r, r), (0, 0)), mode="edge")
    tmp = np.zeros_like(m)
    for i, tap in enumerate(k):
        tmp += tap * p[i : i + h, :]
    p = np.pad(tmp, ((0, 0), (r, r)), mode="edge")
    out = np.zeros_like(m)
    for j, tap in enumerate(k):
        out += tap * p[:, j : j + w]
    return out


def avg_pool(map_: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    """Mean over each kernel x kernel window; output dims floor((d-k)/s)+1."""
    m = np.asarray(map_, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected (H, W) map, got shape {m.shape}")
    if kernel < 1 or kernel > m.shape[0] or kernel > m.shape[1]:
        raise ValueError(f"kernel {kernel} does not fit map {m.shape}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    windows = np.lib.stride_tricks.sliding_window_view(m, (kernel, kernel))
    return windows[::stride, ::stride].mean(axis=(2, 3))


def gaussian_window(patch_size: int, sigma: float) -> np.ndarray:
    """Unnormalized radial Gaussian over a patch_size x patch_size grid.

    Peaks at 1 at the patch center (exact for odd sizes) and decays with
    squared distance; used to fade patch updates toward the borders.
    """
    if patch_size < 1:
        raise ValueError(f"patch size must be >= 1, got {patch_size}")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    c = (patch_size - 1) / 2.0
    ii = np.arange(patch_size, dtype=np.float64)[:, None]
    jj = np.arange(patch_size, dtype=np.float64)[None, :]
    return np.exp(-((ii - c) ** 2 + (jj - c) ** 2) / (2.0 * sigma * sigma))


def l2_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Euclidean distance over all elements of two same-shape arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm((a - b).ravel()))


def clamp01(img: np.ndarray) -> np.ndarray:
    """Clamp every element into [0, 1]."""
    return np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
