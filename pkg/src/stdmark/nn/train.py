"""Watermark-regularized SGD training with Nesterov momentum."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..core import ProjectionKey, ShapeError, WatermarkMessage, flatten_weights, unflatten_gradient
from ..regularizer import DecoderKind, bit_error_rate, extract_bits, loss, loss_gradient
from .data import Dataset
from .network import Network, backward, cross_entropy, forward, predict


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 64
    learning_rate: float = 0.01
    momentum: float = 0.9
    lr_schedule: tuple[tuple[int, float], ...] = ((20, 0.2), (40, 0.2))
    seed: int = 0
    lam: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "lr_schedule", tuple((int(e), float(f)) for e, f in self.lr_schedule))
        if self.epochs < 0 or self.batch_size < 1 or not self.learning_rate > 0:
            raise ValueError("invalid epochs, batch_size or learning_rate")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        epochs = [e for e, _ in self.lr_schedule]
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise ValueError("schedule epochs must be strictly increasing")
        if epochs and (epochs[0] < 0 or epochs[-1] >= max(self.epochs, 1)):
            raise ValueError("schedule epochs must lie in [0, epochs)")

    def lr_at(self, epoch: int) -> float:
        lr = self.learning_rate
        for e, f in self.lr_schedule:
            if epoch >= e:
                lr *= f
        return lr

    @property
    def final_lr(self) -> float:
        lr = self.learning_rate
        for _, f in self.lr_schedule:
            lr *= f
        return lr

    def to_dict(self) -> dict:
        return {"epochs": self.epochs, "batch_size": self.batch_size, "learning_rate": self.learning_rate,
                "momentum": self.momentum, "lr_schedule": [list(x) for x in self.lr_schedule],
                "seed": self.seed, "lam": self.lam}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "lr_schedule" in d:
            d["lr_schedule"] = tuple(tuple(x) for x in d["lr_schedule"])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class EmbedSpec:
    layer_id: str
    key: ProjectionKey
    message: WatermarkMessage
    decoder: DecoderKind

    def __post_init__(self):
        if self.key.rows != len(self.message):
            raise ShapeError(f"key has {self.key.rows} rows but message has {len(self.message)} bits")

    def validate(self, net: Network) -> None:
        layer = net.layer(self.layer_id)
        if not layer.has_params:
            raise ValueError(f"layer {self.layer_id!r} has no weights")
        if self.key.cols != layer.host_size:
            raise ShapeError(f"key has {self.key.cols} columns, layer {self.layer_id!r} has v={layer.host_size}")

    def host(self, net: Network) -> np.ndarray:
        return flatten_weights(net.host_weights(self.layer_id))

    def extract(self, net: Network) -> WatermarkMessage:
        return extract_bits(self.host(net), self.key, self.decoder)

    def ber(self, net: Network) -> float:
        return bit_error_rate(self.message, self.extract(net))

    def regularizer(self, net: Network) -> float:
        return loss(self.host(net), self.key, self.message, self.decoder)

    def weight_gradient(self, net: Network) -> np.ndarray:
        """Regularizer gradient w.r.t. the layer's raw weight array."""
        layer = net.layer(self.layer_id)
        g = loss_gradient(self.host(net), self.key, self.message, self.decoder)
        return unflatten_gradient(g, layer.host_shape).reshape(layer.weight_shape)


@dataclass
class History:
    e0: list = field(default_factory=list)
    er: list = field(default_factory=list)
    ter: list = field(default_factory=list)
    ber: list = field(default_factory=list)
    lr: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"e0": self.e0, "er": self.er, "ter": self.ter, "ber": self.ber, "lr": self.lr}


def evaluate(net: Network, data: Dataset) -> float:
    """Test error rate on the test split."""
    if len(data.y_test) == 0:
        raise ValueError("empty test split")
    return float(np.mean(predict(net, data.x_test) != data.y_test))


def total_loss(net: Network, x, y, lam: float, embeds=()) -> float:
    probs, _ = forward(net, x)
    return cross_entropy(probs, y) + lam * sum(e.regularizer(net) for e in embeds)


def training_gradient(net: Network, x, y, lam: float, embeds=()) -> tuple[float, dict]:
    """Mini-batch loss ``E0 + lam * sum(E_R)`` and its gradient."""
    probs, cache = forward(net, x)
    e0 = cross_entropy(probs, y)
    grads = backward(net, cache, y)
    if lam > 0:
        for e in embeds:
            if e.layer_id in grads:
                grads[e.layer_id]["W"] = grads[e.layer_id]["W"] + lam * e.weight_gradient(net)
    return e0, grads


class NesterovSGD:
    """SGD with Nesterov momentum:  ``v <- mu*v + g;  p <- p - lr*(g + mu*v)``."""

    def __init__(self, momentum: float, state=None):
        self.momentum = momentum
        self.state = state if state is not None else {}

    def step(self, params, grads, lr):
        mu = self.momentum
        for lid, g in grads.items():
            buf = self.state.setdefault(lid, {k: np.zeros_like(v) for k, v in g.items()})
            for k, gk in g.items():
                buf[k] = mu * buf[k] + gk
                params[lid][k] = params[lid][k] - lr * (gk + mu * buf[k])


def train(net: Network, data: Dataset, cfg: TrainConfig, embeds=(), optimizer: NesterovSGD | None = None,
          record: bool = True):
    """Train ``net`` in place; returns ``(net, history)``.

    Regularizer gradients are added to the target layer at every step, so the
    update direction is ``grad(E0) + lam * sum(grad(E_R))``.
    """
    embeds = list(embeds)
    for e in embeds:
        e.validate(net)
        if not net.layer(e.layer_id).trainable:
            raise ValueError(f"embedding layer {e.layer_id!r} is frozen")
    opt = optimizer or NesterovSGD(cfg.momentum)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    hist = History()
    N = len(data.y_train)
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = rng.permutation(N)
        losses = []
        for start in range(0, N, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            e0, grads = training_gradient(net, data.x_train[idx], data.y_train[idx], cfg.lam, embeds)
            if not np.isfinite(e0) or not all(np.all(np.isfinite(g["W"])) for g in grads.values()):
                raise TrainingDiverged(f"non-finite loss or gradient at epoch {epoch}, batch start {start}")
            opt.step(net.params, grads, lr)
            losses.append(e0)
        if record:
            hist.e0.append(float(np.mean(losses)) if losses else 0.0)
            hist.er.append([e.regularizer(net) for e in embeds])
            hist.ter.append(evaluate(net, data))
            hist.ber.append([e.ber(net) for e in embeds])
            hist.lr.append(lr)
    return net, hist
