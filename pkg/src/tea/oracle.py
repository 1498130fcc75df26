"""Hard-label oracles: synthetic classifiers with known geometry, the
budget-enforcing counter, and the remote HTTP client.

Every oracle exposes exactly one observation channel, ``classify(img) -> int``.
Scores, logits, and prototype distances never leave this module.
"""

import threading
from dataclasses import dataclass

import numpy as np
import requests

from . import imageops


class OracleError(Exception):
    """Base class for oracle failures."""


class BudgetExhaustedError(OracleError):
    """Raised on the first classify call past the query budget."""


class TransportError(OracleError):
    """Remote oracle could not be reached or returned an HTTP error."""


class ProtocolError(OracleError):
    """Remote oracle answered with a malformed or out-of-range payload."""


@dataclass
class QueryBudget:
    """Hard cap on classifier invocations for one attack run."""

    max_queries: int
    used: int = 0

    def __post_init__(self):
        if self.max_queries < 0:
            raise ValueError(f"max_queries must be >= 0, got {self.max_queries}")
        if not 0 <= self.used <= self.max_queries:
            raise ValueError(f"used={self.used} outside [0, {self.max_queries}]")

    @property
    def remaining(self) -> int:
        return self.max_queries - self.used


class PrototypeOracle:
    """Nearest-prototype classifier; decision regions are polyhedra.

    With K=2 the target region is the halfspace of points at least as close
    to the target prototype as to the other one, which makes accept/reject
    decisions checkable in closed form.
    """

    def __init__(self, prototypes):
        protos = [imageops.validate_image(p, f"prototype {i}") for i, p in enumerate(prototypes)]
        if len(protos) < 2:
            raise ValueError("need at least 2 prototypes")
        shape = protos[0].shape
        for i, p in enumerate(protos):
            if p.shape != shape:
                raise ValueError(f"prototype {i} shape {p.shape} != {shape}")
        self._protos = np.stack(protos)

    @property
    def num_classes(self) -> int:
        return self._protos.shape[0]

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self._protos.shape[1:])

    def classify(self, img: np.ndarray) -> int:
        img = np.asarray(img, dtype=np.float64)
        if img.shape != self.shape:
            raise ValueError(f"image shape {img.shape} != oracle shape {self.shape}")
        d2 = np.sum((self._protos - img[None]) ** 2, axis=(1, 2, 3))
        # np.argmin breaks ties toward the lowest index.
        return int(np.argmin(d2))


class LinearOracle:
    """argmax of K affine score functions over the flattened image."""

    def __init__(self, weights, biases, shape):
        self._w = np.asarray(weights, dtype=np.float64)
        self._b = np.asarray(biases, dtype=np.float64)
        self._shape = tuple(shape)
        n = int(np.prod(self._shape))
        if self._w.ndim != 2 or self._w.shape[1] != n:
            raise ValueError(f"weights must be (K, {n}), got {self._w.shape}")
        if self._w.shape[0] < 2:
            raise ValueError("need at least 2 classes")
        if self._b.shape != (self._w.shape[0],):
            raise ValueError(f"biases must be ({self._w.shape[0]},), got {self._b.shape}")

    @classmethod
    def random(cls, num_classes: int, shape, seed: int = 0) -> "LinearOracle":
        rng = np.random.default_rng(seed)
        n = int(np.prod(shape))
        return cls(rng.standard_normal((num_classes, n)), rng.standard_normal(num_classes), shape)

    @property
    def num_classes(self) -> int:
        return self._w.shape[0]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self._shape

    def classify(self, img: np.ndarray) -> int:
        img = np.asarray(img, dtype=np.float64)
        if img.shape != self._shape:
            raise ValueError(f"image shape {img.shape} != oracle shape {self._shape}")
        scores = self._w @ img.ravel() + self._b
        return int(np.argmax(scores))


class CountedOracle:
    """Wrapper that charges every classify call against a shared budget.

    The call past the budget raises BudgetExhaustedError instead of silently
    truncating, so harness totals stay provably exact. The counter is locked;
    use one budget per attack run.
    """

    def __init__(self, inner, budget: QueryBudget):
        self._inner = inner
        self.budget = budget
        self.calls: list[tuple[int, int]] = []
        self._lock = threading.Lock()

    @property
    def num_classes(self) -> int:
        return self._inner.num_classes

    @property
    def shape(self):
        return self._inner.shape

    def classify(self, img: np.ndarray) -> int:
        with self._lock:
            if self.budget.used >= self.budget.max_queries:
                raise BudgetExhaustedError(
                    f"query budget of {self.budget.max_queries} exhausted"
                )
            label = self._inner.classify(img)
            self.budget.used += 1
            self.calls.append((self.budget.used, label))
            return label


class RemoteOracle:
    """Client for the hard-label wire protocol.

    GET /info advertises {"classes", "channels", "height", "width"};
    POST /classify takes {"data": [C*H*W floats]} and answers {"label": int}.
    """

    def __init__(self, endpoint: str, timeout: float = 30.0, session=None):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self._session = session or requests.Session()
        info = self._get_json(f"{self.endpoint}/info")
        try:
            self.num_classes = int(info["classes"])
            self.shape = (int(info["channels"]), int(info["height"]), int(info["width"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed /info response: {info!r}") from exc

    def _get_json(self, url: str):
        try:
            resp = self._session.get(url, timeout=self.timeout)
            resp.raise_for_status()
        except requests.RequestException as exc:
            raise TransportError(f"GET {url} failed: {exc}") from exc
        # requests' JSONDecodeError is also a RequestException, so decode
        # outside the transport block or it gets misfiled as a network fault
        try:
            return resp.json()
        except ValueError as exc:
            raise ProtocolError(f"non-JSON response from {url}") from exc

    def classify(self, img: np.ndarray) -> int:
        img = np.asarray(img, dtype=np.float64)
        if img.shape != self.shape:
            raise ValueError(f"image shape {img.shape} != server shape {self.shape}")
        payload = {"data": img.ravel().tolist()}
        url = f"{self.endpoint}/classify"
        try:
            resp = self._session.post(url, json=payload, timeout=self.timeout)
            resp.raise_for_status()
        except requests.RequestException as exc:
            raise TransportError(f"POST {url} failed: {exc}") from exc
        try:
            body = resp.json()
        except ValueError as exc:
            raise ProtocolError(f"non-JSON response from {url}") from exc
        try:
            label = int(body["label"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed /classify response: {body!r}") from exc
        if not 0 <= label < self.num_classes:
            raise ProtocolError(f"label {label} outside [0, {self.num_classes})")
        return label


def remote_classify(endpoint: str, img: np.ndarray) -> int:
    """One-shot remote classification; negotiates shape via /info first."""
    return RemoteOracle(endpoint).classify(img)
