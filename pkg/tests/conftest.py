"""Shared builders for the test suite.

Synthetic scenes are piecewise-constant block images: their Sobel response
concentrates on block borders, so edge masks are sparse and the patch stage
has smooth interior to work with. Uniform-noise images are useless here
(gradient everywhere, mask nearly solid), which is why every suite below
builds blocks instead.

Oracles with closed-form geometry come in two flavors: nearest-prototype
pairs whose bisector crosses the source-target segment at a chosen fraction,
and linear two-class oracles over the same crossing whose normal is weighted
toward the target's edge pixels, so the label actually depends on where an
edit lands.
"""

import numpy as np

from tea.attack import AttackConfig
from tea.edgemask import create_soft_edge_mask
from tea.oracle import LinearOracle, PrototypeOracle


def block_image(rng, shape=(3, 32, 32), grid=4):
    """Random grid x grid color blocks upsampled to the full resolution."""
    c, h, w = shape
    if h % grid or w % grid:
        raise ValueError(f"grid {grid} must divide {h}x{w}")
    blocks = rng.uniform(0.05, 0.95, size=(c, grid, grid))
    return np.repeat(np.repeat(blocks, h // grid, axis=1), w // grid, axis=2)


def segment_prototypes(x_s, x_t, beta):
    """Prototype pair whose perpendicular bisector crosses the segment
    x_t -> x_s exactly at fraction beta; both lie on the segment, so they
    stay inside [0, 1] automatically."""
    d = x_s - x_t
    return x_t + (beta - 0.2) * d, x_t + (beta + 0.2) * d


def segment_prototype_oracle(x_s, x_t, beta):
    """K=2 nearest-prototype oracle; class 0 is the target side."""
    p_t, p_s = segment_prototypes(x_s, x_t, beta)
    return PrototypeOracle([p_t, p_s])


def halfspace_membership(x, p_t, p_s):
    """Closed-form side test for the prototype bisector, target side when
    2 (p_s - p_t) . x <= |p_s|^2 - |p_t|^2 (ties go to the target, matching
    argmin's lowest-index preference)."""
    n = (p_s - p_t).ravel()
    rhs = float(np.dot(p_s.ravel(), p_s.ravel()) - np.dot(p_t.ravel(), p_t.ravel()))
    return bool(2.0 * float(np.dot(n, np.asarray(x, dtype=np.float64).ravel())) <= rhs)


def edge_halfspace_oracle(x_s, x_t, beta, amp=6.0):
    """K=2 linear oracle over a single halfspace crossing the segment at beta.

    The boundary normal is d * (1 + amp * E) with E the target image's soft
    edge map, so edits on edge pixels push toward the boundary amp times
    harder than interior edits of the same size. The target keeps class 0
    exactly while n . (x - q) <= 0, with q the crossing point on the segment.
    """
    d = x_s - x_t
    edge = create_soft_edge_mask(x_t, AttackConfig().resolved(x_t.shape)).map
    n = (d * (1.0 + amp * edge)[None]).ravel()
    q = (x_t + beta * d).ravel()
    weights = np.stack([-n, n])
    biases = np.array([np.dot(n, q), -np.dot(n, q)])
    return LinearOracle(weights, biases, x_s.shape)


class RecordingOracle:
    """Pass-through wrapper that keeps a copy of every queried image."""

    def __init__(self, inner):
        self.inner = inner
        self.images = []
        self.labels = []

    @property
    def num_classes(self):
        return self.inner.num_classes

    @property
    def shape(self):
        return self.inner.shape

    def classify(self, img):
        label = self.inner.classify(img)
        self.images.append(np.array(img, dtype=np.float64, copy=True))
        self.labels.append(label)
        return label


class ConstantOracle:
    """Always answers the same label; for forcing accept or reject paths."""

    def __init__(self, label, shape=(3, 32, 32), num_classes=2):
        self.label = int(label)
        self.shape = tuple(shape)
        self.num_classes = int(num_classes)
        self.calls = 0

    def classify(self, img):
        if np.asarray(img).shape != self.shape:
            raise ValueError(f"shape {np.asarray(img).shape} != {self.shape}")
        self.calls += 1
        return self.label
