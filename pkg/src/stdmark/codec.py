"""Classical dither modulation (DM) and spread-transform DM.

Codebooks are ``U0 = {k*delta}`` and ``U1 = {k*delta + delta/2}``.  Exact
midpoints between two codewords resolve toward the smaller codeword.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import WatermarkMessage

ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class QuantizerConfig:
    delta: float = 1.0
    tie_rule: str = "toward-negative"

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be > 0")
        if self.tie_rule != "toward-negative":
            raise ValueError(f"unsupported tie rule {self.tie_rule!r}")


def _nearest(x, step, offset):
    # Nearest point of {k*step + offset}; ceil(t - 0.5) sends t = m + 0.5 to m.
    t = (np.asarray(x, dtype=np.float64) - offset) / step
    return np.ceil(t - 0.5) * step + offset


def quantize_dm(x, b, cfg: QuantizerConfig):
    """Quantize ``x`` onto the codebook of bit ``b``. Works elementwise."""
    b = np.asarray(b)
    out = np.where(b == 1, _nearest(x, cfg.delta, cfg.delta / 2), _nearest(x, cfg.delta, 0.0))
    return out[()] if out.ndim == 0 else out


def decode_dm(x, cfg: QuantizerConfig):
    """Bit of the codebook holding the codeword nearest to ``x``.

    ``U0 | U1`` is a grid of step ``delta/2``; the nearest grid index is even
    for U0 and odd for U1.
    """
    k = np.ceil(np.asarray(x, dtype=np.float64) / (cfg.delta / 2) - 0.5)
    out = np.mod(k, 2).astype(np.int8)
    return int(out) if out.ndim == 0 else out


def orthonormal_directions(l: int, v: int, seed: int) -> np.ndarray:
    """``l`` orthonormal rows in R^v from Gaussian draws (QR = Gram-Schmidt)."""
    if l > v:
        raise ValueError("cannot build more than v orthonormal directions")
    rng = np.random.Generator(np.random.PCG64(seed))
    q, r = np.linalg.qr(rng.standard_normal((v, l)))
    # fix signs so the result is a deterministic function of the draws
    q = q * np.sign(np.diag(r))
    return q.T.copy()


def _check_unit(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or abs(np.linalg.norm(x) - 1.0) > ORTHO_TOL:
        raise ValueError("spreading direction must have unit norm")
    return x


def _check_orthonormal(dirs):
    D = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    if np.max(np.abs(D @ D.T - np.eye(D.shape[0]))) > ORTHO_TOL:
        raise ValueError("directions must be orthonormal")
    return D


def stdm_embed(w, x, b: int, cfg: QuantizerConfig) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    x = _check_unit(x)
    if x.size != w.size:
        raise ValueError("direction and host lengths differ")
    rho = w @ x
    return w - rho * x + quantize_dm(rho, b, cfg) * x


def stdm_embed_multi(w, dirs, b, cfg: QuantizerConfig) -> np.ndarray:
    """Apply single-bit ST-DM along each direction in turn.

    With orthonormal directions the order does not matter and every
    projection lands exactly on its codeword.
    """
    D = _check_orthonormal(dirs)
    bits = b.bits if isinstance(b, WatermarkMessage) else np.asarray(b)
    if bits.size != D.shape[0]:
        raise ValueError("message length must equal the number of directions")
    wm = np.asarray(w, dtype=np.float64).copy()
    for x, bit in zip(D, bits):
        rho = wm @ x
        wm = wm - rho * x + quantize_dm(rho, bit, cfg) * x
    return wm


def stdm_decode(wm, dirs, cfg: QuantizerConfig) -> WatermarkMessage:
    D = _check_orthonormal(dirs)
    return WatermarkMessage(decode_dm(D @ np.asarray(wm, dtype=np.float64), cfg))
