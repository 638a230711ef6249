"""Shared substrate: keys, messages, weight flattening and projection.

Flattening of a convolution weight tensor of shape ``(s, s, d, n)`` averages
over the ``n`` filters and then flattens the remaining ``(s, s, d)`` block in
row-major (C) order, i.e. ``i`` outermost, then ``j``, then ``k``.  The same
order is used for embedding and extraction.  Dense weights are stored as
``(1, 1, fan_in * fan_out, 1)`` so both layer kinds share one path.

All arithmetic is float64.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Key matrices come from numpy's PCG64 bit generator with the ziggurat
# standard-normal sampler (Generator.standard_normal).  Both are part of
# numpy's stable stream policy for a given seed.
KEY_GENERATOR = "numpy.random.PCG64/standard_normal"


class ShapeError(ValueError):
    """Raised on dimension mismatches between keys, hosts and messages."""


def _as_bits(bits) -> np.ndarray:
    arr = np.asarray(bits)
    if arr.ndim != 1 or arr.size < 1:
        raise ValueError("message must be a non-empty 1-D bit sequence")
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError("message bits must be 0 or 1")
    return arr.astype(np.int8)


@dataclass(frozen=True, eq=False)
class WatermarkMessage:
    bits: np.ndarray

    def __post_init__(self):
        arr = _as_bits(self.bits)
        arr.setflags(write=False)
        object.__setattr__(self, "bits", arr)

    def __len__(self) -> int:
        return self.bits.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, WatermarkMessage):
            return NotImplemented
        return np.array_equal(self.bits, other.bits)

    @classmethod
    def random(cls, length: int, seed: int) -> "WatermarkMessage":
        rng = np.random.default_rng(seed)
        return cls(rng.integers(0, 2, size=length))

    def to_string(self) -> str:
        return "".join(str(int(b)) for b in self.bits)

    @classmethod
    def from_string(cls, text: str) -> "WatermarkMessage":
        text = text.strip()
        if not text or set(text) - {"0", "1"}:
            raise ValueError(f"not a bit string: {text!r}")
        return cls(np.array([int(c) for c in text]))


@dataclass(frozen=True, eq=False)
class ProjectionKey:
    """Secret ``rows x cols`` Gaussian matrix, regenerated from ``seed``."""

    seed: int
    rows: int
    cols: int
    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (self.rows, self.cols):
            raise ShapeError(f"key matrix has shape {m.shape}, expected {(self.rows, self.cols)}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ProjectionKey):
            return NotImplemented
        return (self.seed, self.rows, self.cols) == (other.seed, other.rows, other.cols) and np.array_equal(
            self.matrix, other.matrix
        )

    def to_dict(self) -> dict:
        return {"seed": self.seed, "rows": self.rows, "cols": self.cols, "generator": KEY_GENERATOR}


def generate_key(seed: int, l: int, v: int) -> ProjectionKey:
    """Draw an ``l x v`` key with i.i.d. N(0, 1) entries from ``seed``."""
    if l < 1 or v < 1:
        raise ValueError("key dimensions must be positive")
    if not 0 <= seed < 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    rng = np.random.Generator(np.random.PCG64(seed))
    return ProjectionKey(seed=int(seed), rows=int(l), cols=int(v), matrix=rng.standard_normal((l, v)))


def _check_shape(shape) -> tuple[int, int, int, int]:
    shape = tuple(int(x) for x in shape)
    if len(shape) != 4 or min(shape) < 1:
        raise ShapeError(f"weight shape must be (s, s, d, n) with positive entries, got {shape}")
    return shape


def flatten_weights(W: np.ndarray) -> np.ndarray:
    """Mean over the filter axis, flattened row-major over ``(i, j, k)``."""
    W = np.asarray(W, dtype=np.float64)
    _check_shape(W.shape)
    return W.mean(axis=3).reshape(-1)


def unflatten_gradient(g, shape) -> np.ndarray:
    """Adjoint of :func:`flatten_weights`: every filter receives ``g / n``."""
    s1, s2, d, n = _check_shape(shape)
    g = np.asarray(g, dtype=np.float64)
    if g.shape != (s1 * s2 * d,):
        raise ShapeError(f"gradient has length {g.size}, expected {s1 * s2 * d}")
    G = np.empty((s1, s2, d, n))
    G[...] = (g / n).reshape(s1, s2, d, 1)
    return G


def project(w, X) -> np.ndarray:
    """Correlations of the host with each key row."""
    M = X.matrix if isinstance(X, ProjectionKey) else np.asarray(X, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if M.ndim != 2 or w.ndim != 1 or M.shape[1] != w.size:
        raise ShapeError(f"cannot project host of length {w.size} with key of shape {M.shape}")
    return M @ w


@dataclass(frozen=True)
class Hyperparams:
    alpha: float = 10.0
    beta: float = 10.0
    gamma: float = 10.0
    lam: float = 0.01
    delta: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "delta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if not self.lam >= 0:
            raise ValueError("lam must be >= 0")
