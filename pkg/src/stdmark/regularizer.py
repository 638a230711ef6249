"""Watermark regularizers, their gradients, and bit extraction.

Two soft decoders map a projection ``rho`` to a response in (0, 1):

* ``SS``    : ``sigmoid(gamma * rho)``
* ``STDM``  : ``theta(rho) = logistic(alpha * sin(beta * rho))``

The regularizer is the binary cross-entropy between the responses and the
message bits, summed over bits.  Bits are read back by thresholding the
responses at 0.5 (``>=`` decodes 1).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .core import ProjectionKey, ShapeError, WatermarkMessage, project

CLAMP_EPS = 1e-12
# logit of 1 - CLAMP_EPS; clipping logits here is the same as clamping responses
LOGIT_BOUND = float(np.log((1 - CLAMP_EPS) / CLAMP_EPS))


@dataclass(frozen=True)
class DecoderKind:
    kind: str
    gamma: float = 10.0
    alpha: float = 10.0
    beta: float = 10.0

    def __post_init__(self):
        if self.kind not in ("SS", "STDM"):
            raise ValueError(f"unknown decoder kind {self.kind!r}")
        for name in ("gamma", "alpha", "beta"):
            value = float(getattr(self, name))
            if not value > 0:
                raise ValueError(f"{name} must be > 0")
            object.__setattr__(self, name, value)

    @classmethod
    def ss(cls, gamma: float = 10.0) -> "DecoderKind":
        return cls("SS", gamma=gamma)

    @classmethod
    def stdm(cls, alpha: float = 10.0, beta: float = 10.0) -> "DecoderKind":
        return cls("STDM", alpha=alpha, beta=beta)

    def to_dict(self) -> dict:
        if self.kind == "SS":
            return {"kind": "SS", "gamma": self.gamma}
        return {"kind": "STDM", "alpha": self.alpha, "beta": self.beta}

    @classmethod
    def from_dict(cls, d: dict) -> "DecoderKind":
        kind = d["kind"].upper()
        if kind == "SS":
            return cls.ss(float(d.get("gamma", 10.0)))
        return cls.stdm(float(d.get("alpha", 10.0)), float(d.get("beta", 10.0)))


def theta(x, alpha: float = 10.0, beta: float = 10.0):
    return expit(alpha * np.sin(beta * np.asarray(x, dtype=np.float64)))


def sigmoid_gamma(x, gamma: float = 10.0):
    return expit(gamma * np.asarray(x, dtype=np.float64))


def _bits(b) -> np.ndarray:
    return (b.bits if isinstance(b, WatermarkMessage) else np.asarray(b)).astype(np.float64)


def _logits(rho, dec: DecoderKind):
    rho = np.asarray(rho, dtype=np.float64)
    if dec.kind == "SS":
        return dec.gamma * rho
    return dec.alpha * np.sin(dec.beta * rho)


def _responses_from_rho(rho, dec: DecoderKind):
    return expit(_logits(rho, dec))


def soft_responses(w, X: ProjectionKey, dec: DecoderKind) -> np.ndarray:
    return _responses_from_rho(project(w, X), dec)


def _check_message(X: ProjectionKey, b) -> np.ndarray:
    bits = _bits(b)
    if bits.shape != (X.rows,):
        raise ShapeError(f"message length {bits.size} does not match key rows {X.rows}")
    return bits


def loss(w, X: ProjectionKey, b, dec: DecoderKind) -> float:
    bits = _check_message(X, b)
    # -log r = softplus(-z) and -log(1 - r) = softplus(z); forming 1 - r
    # directly would lose most digits once r is close to 1
    z = np.clip(_logits(project(w, X), dec), -LOGIT_BOUND, LOGIT_BOUND)
    return float(np.sum(bits * np.logaddexp(0.0, -z) + (1 - bits) * np.logaddexp(0.0, z)))


def loss_gradient(w, X: ProjectionKey, b, dec: DecoderKind) -> np.ndarray:
    """Gradient of :func:`loss` with respect to the flattened host.

    d/d rho of the cross-entropy composed with a logistic of ``u(rho)`` is
    ``(r - b) * u'(rho)``, evaluated with the clamped responses.  Inside the
    clamp this is the exact gradient; on a saturated wrong bit it keeps the
    full pull where the clamped loss itself is flat.
    """
    bits = _check_message(X, b)
    rho = project(w, X)
    r = np.clip(_responses_from_rho(rho, dec), CLAMP_EPS, 1 - CLAMP_EPS)
    if dec.kind == "SS":
        du = dec.gamma
    else:
        du = dec.alpha * dec.beta * np.cos(dec.beta * rho)
    return X.matrix.T @ ((r - bits) * du)


def decode_projections(rho, dec: DecoderKind) -> np.ndarray:
    """Hard decisions from projections.

    For STDM, ``theta(rho) >= 0.5`` iff ``sin(beta * rho) >= 0`` for any
    alpha > 0, so the sine sign is used directly.
    """
    rho = np.asarray(rho, dtype=np.float64)
    if dec.kind == "SS":
        return (rho >= 0).astype(np.int8)
    return (np.sin(dec.beta * rho) >= 0).astype(np.int8)


def extract_bits(w, X: ProjectionKey, dec: DecoderKind) -> WatermarkMessage:
    return WatermarkMessage(decode_projections(project(w, X), dec))


def bit_error_rate(b, b_hat) -> float:
    a, c = _bits(b), _bits(b_hat)
    if a.shape != c.shape:
        raise ShapeError("messages differ in length")
    return float(np.mean(a != c))
