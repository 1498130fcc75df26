"""Prototype classifier over tensors loaded from disk."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"TEA1"
_HEADER = struct.Struct("<III")


def read_tensor(path) -> np.ndarray:
    """Read a TEA1 tensor file: 4-byte magic, <III dims, float32 LE payload."""
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: not a TEA1 tensor file")
    if len(blob) < 4 + _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    channels, height, width = _HEADER.unpack_from(blob, 4)
    payload = blob[4 + _HEADER.size :]
    expected = channels * height * width * 4
    if expected == 0 or len(payload) != expected:
        raise ValueError(
            f"{path}: payload is {len(payload)} bytes, header promises {expected}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(channels, height, width)
    return data.astype(np.float64)


class PrototypeModel:
    """Nearest prototype under squared L2; class index = file position."""

    def __init__(self, prototypes: np.ndarray):
        prototypes = np.asarray(prototypes, dtype=np.float64)
        if prototypes.ndim != 4 or prototypes.shape[0] < 2:
            raise ValueError("need a (K, C, H, W) stack with K >= 2")
        self._protos = prototypes

    @classmethod
    def from_files(cls, paths) -> "PrototypeModel":
        paths = list(paths)
        if len(paths) < 2:
            raise ValueError("need at least 2 prototype files")
        protos = [read_tensor(p) for p in paths]
        shape = protos[0].shape
        for path, proto in zip(paths, protos):
            if proto.shape != shape:
                raise ValueError(f"{path}: shape {proto.shape} != {shape}")
        return cls(np.stack(protos))

    @property
    def num_classes(self) -> int:
        return int(self._protos.shape[0])

    @property
    def shape(self) -> tuple:
        return tuple(self._protos.shape[1:])

    def classify(self, img: np.ndarray) -> int:
        img = np.asarray(img, dtype=np.float64)
        if img.shape != self.shape:
            raise ValueError(f"image shape {img.shape} != model shape {self.shape}")
        d2 = np.sum((self._protos - img[None]) ** 2, axis=(1, 2, 3))
        # ties resolve to the lowest class index
        return int(np.argmin(d2))
