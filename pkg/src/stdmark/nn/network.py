"""A small NHWC network with hand-written forward and backward passes."""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

LAYER_KINDS = ("dense", "conv2d", "relu", "avgpool_global", "softmax_head")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    id: str | None = None
    fan_in: int = 0
    fan_out: int = 0
    s: int = 0
    d: int = 0
    n: int = 0
    trainable: bool = True

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "dense" and (self.fan_in < 1 or self.fan_out < 1):
            raise ValueError("dense layer needs positive fan_in and fan_out")
        if self.kind == "conv2d":
            if min(self.s, self.d, self.n) < 1:
                raise ValueError("conv2d needs positive s, d, n")
            if self.s % 2 == 0:
                raise ValueError("conv2d kernel size must be odd for same padding")
        if self.has_params and not self.id:
            raise ValueError(f"{self.kind} layer needs an id")

    @property
    def has_params(self) -> bool:
        return self.kind in ("dense", "conv2d")

    @property
    def weight_shape(self) -> tuple[int, ...]:
        if self.kind == "dense":
            return (self.fan_in, self.fan_out)
        return (self.s, self.s, self.d, self.n)

    @property
    def host_shape(self) -> tuple[int, int, int, int]:
        """Weight shape seen by the watermark code (dense layers use n=1)."""
        if self.kind == "dense":
            return (1, 1, self.fan_in * self.fan_out, 1)
        return (self.s, self.s, self.d, self.n)

    @property
    def host_size(self) -> int:
        s1, s2, d, _ = self.host_shape
        return s1 * s2 * d

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if v not in (0, None)}
        if self.trainable:
            d.pop("trainable", None)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(**d)


def dense(id, fan_in, fan_out, trainable=True):
    return LayerSpec("dense", id=id, fan_in=fan_in, fan_out=fan_out, trainable=trainable)


def conv2d(id, s, d, n, trainable=True):
    return LayerSpec("conv2d", id=id, s=s, d=d, n=n, trainable=trainable)


def relu():
    return LayerSpec("relu")


def avgpool_global():
    return LayerSpec("avgpool_global")


def softmax_head():
    return LayerSpec("softmax_head")


class Network:
    """Sequential stack of layers ending in a softmax head.

    ``params`` maps layer id to ``{"W": ..., "b": ...}``.  Conv weights are
    stored as ``(s, s, d, n)``, dense weights as ``(fan_in, fan_out)``.
    """

    def __init__(self, layers, params=None, seed: int = 0):
        self.layers = list(layers)
        ids = [l.id for l in self.layers if l.id]
        if len(ids) != len(set(ids)):
            raise ValueError("layer ids must be unique")
        if not self.layers or self.layers[-1].kind != "softmax_head":
            raise ValueError("network must end with a softmax_head")
        self.seed = seed
        self.params = params if params is not None else self._init_params(seed)

    def _init_params(self, seed):
        # U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases
        rng = np.random.Generator(np.random.PCG64(seed))
        params = {}
        for layer in self.layers:
            if not layer.has_params:
                continue
            fan_in = layer.fan_in if layer.kind == "dense" else layer.s * layer.s * layer.d
            bound = 1.0 / np.sqrt(fan_in)
            W = rng.uniform(-bound, bound, size=layer.weight_shape)
            b = rng.uniform(-bound, bound, size=layer.weight_shape[-1])
            params[layer.id] = {"W": W, "b": b}
        return params

    def layer(self, layer_id) -> LayerSpec:
        for layer in self.layers:
            if layer.id == layer_id:
                return layer
        raise KeyError(f"no layer with id {layer_id!r}")

    def host_weights(self, layer_id) -> np.ndarray:
        """Weights of a layer reshaped to the ``(s, s, d, n)`` host layout."""
        return self.params[layer_id]["W"].reshape(self.layer(layer_id).host_shape)

    @property
    def trainable_ids(self) -> list[str]:
        return [l.id for l in self.layers if l.has_params and l.trainable]

    @property
    def num_params(self) -> int:
        return sum(a.size for p in self.params.values() for a in p.values())

    def copy(self) -> "Network":
        return Network(self.layers, copy.deepcopy(self.params), seed=self.seed)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Network) or self.layers != other.layers:
            return NotImplemented if not isinstance(other, Network) else False
        return all(
            np.array_equal(self.params[i][k], other.params[i][k]) for i in self.params for k in ("W", "b")
        )


def _conv_cols(x, s):
    p = s // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    win = sliding_window_view(xp, (s, s), axis=(1, 2))  # (N, H, W, d, s, s)
    N, H, W_, d = x.shape
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(N * H * W_, s * s * d)


def _conv_cols_backward(dcols, x_shape, s):
    N, H, W_, d = x_shape
    p = s // 2
    dcols = dcols.reshape(N, H, W_, s, s, d)
    dxp = np.zeros((N, H + 2 * p, W_ + 2 * p, d))
    for i in range(s):
        for j in range(s):
            dxp[:, i : i + H, j : j + W_, :] += dcols[:, :, :, i, j, :]
    return dxp[:, p : p + H, p : p + W_, :]


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def forward(net: Network, x):
    """Returns ``(probabilities, cache)`` for a batch."""
    a = np.asarray(x, dtype=np.float64)
    cache = []
    for layer in net.layers:
        if layer.kind == "dense":
            if a.ndim != 2 or a.shape[1] != layer.fan_in:
                raise ValueError(f"layer {layer.id}: expected input (N, {layer.fan_in}), got {a.shape}")
            p = net.params[layer.id]
            cache.append(a)
            a = a @ p["W"] + p["b"]
        elif layer.kind == "conv2d":
            if a.ndim != 4 or a.shape[3] != layer.d:
                raise ValueError(f"layer {layer.id}: expected input (N, H, W, {layer.d}), got {a.shape}")
            p = net.params[layer.id]
            cols = _conv_cols(a, layer.s)
            cache.append((cols, a.shape))
            a = (cols @ p["W"].reshape(-1, layer.n) + p["b"]).reshape(a.shape[:3] + (layer.n,))
        elif layer.kind == "relu":
            cache.append(a > 0)
            a = np.where(a > 0, a, 0.0)
        elif layer.kind == "avgpool_global":
            if a.ndim != 4:
                raise ValueError("avgpool_global expects NHWC input")
            cache.append(a.shape)
            a = a.mean(axis=(1, 2))
        else:
            if a.ndim != 2:
                raise ValueError("softmax_head expects (N, C) logits")
            a = _softmax(a)
            cache.append(a)
    return a, cache


def cross_entropy(probs, labels) -> float:
    """Mean negative log-likelihood of the labels."""
    labels = np.asarray(labels)
    picked = probs[np.arange(labels.size), labels]
    return float(-np.mean(np.log(np.maximum(picked, 1e-300))))


def backward(net: Network, cache, labels) -> dict:
    """Gradients of the mean cross-entropy for every trainable layer."""
    labels = np.asarray(labels)
    probs = cache[-1]
    N = labels.size
    delta = probs.copy()
    delta[np.arange(N), labels] -= 1.0
    delta /= N
    grads = {}
    for idx in range(len(net.layers) - 2, -1, -1):
        layer, c = net.layers[idx], cache[idx]
        if layer.kind == "dense":
            if layer.trainable:
                grads[layer.id] = {"W": c.T @ delta, "b": delta.sum(axis=0)}
            if idx == 0:
                break
            delta = delta @ net.params[layer.id]["W"].T
        elif layer.kind == "conv2d":
            cols, x_shape = c
            dflat = delta.reshape(-1, layer.n)
            if layer.trainable:
                grads[layer.id] = {
                    "W": (cols.T @ dflat).reshape(layer.weight_shape),
                    "b": dflat.sum(axis=0),
                }
            if idx == 0:
                break
            dcols = dflat @ net.params[layer.id]["W"].reshape(-1, layer.n).T
            delta = _conv_cols_backward(dcols, x_shape, layer.s)
        elif layer.kind == "relu":
            delta = delta * c
        else:
            _, H, W_, C = c
            delta = np.broadcast_to(delta[:, None, None, :] / (H * W_), c).copy()
    return grads


def predict(net: Network, x) -> np.ndarray:
    probs, _ = forward(net, x)
    return probs.argmax(axis=1)
