"""Seeded synthetic classification datasets.

gaussian-blobs
    Class centres ``mu_c ~ N(0, I_D)``; samples ``x = mu_c + noise * eps`` with
    ``eps ~ N(0, I_D)``.  With ``image_shape=(H, W, C)`` the centres live in
    R^C and are tiled over the H x W grid; ``eps`` is drawn per pixel and
    channel, so samples are ``(H, W, C)`` images.
spirals
    Two-dimensional arms.  For class ``c`` and ``t ~ U(0, 1)``:
    ``r = t``, ``phi = 2*pi*c/C + 4*t + noise * eps``, ``x = r*(cos phi, sin phi)``.

Each class contributes ``per_class`` samples; the first ``train_fraction`` of
every class (after a seeded shuffle) goes to the training split.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(eq=False)
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    classes: int
    seed: int
    meta: dict = field(default_factory=dict)

    @property
    def input_shape(self) -> tuple[int, ...]:
        return self.x_train.shape[1:]


def synth_dataset(
    kind: str = "gaussian-blobs",
    classes: int = 4,
    per_class: int = 100,
    noise: float = 1.0,
    seed: int = 0,
    image_shape: tuple[int, int, int] | None = None,
    dim: int = 2,
    train_fraction: float = 0.75,
) -> Dataset:
    if classes < 2 or per_class < 1:
        raise ValueError("need at least 2 classes and 1 sample per class")
    rng = np.random.Generator(np.random.PCG64(seed))
    if kind == "gaussian-blobs":
        if image_shape:
            H, W, C = image_shape
            centres = np.tile(rng.standard_normal((classes, 1, 1, C)), (1, H, W, 1))
        else:
            centres = rng.standard_normal((classes, dim))
        x = np.repeat(centres, per_class, axis=0)
        x = x + noise * rng.standard_normal(x.shape)
    elif kind == "spirals":
        if image_shape:
            raise ValueError("spirals are two-dimensional only")
        t = rng.uniform(0, 1, size=classes * per_class)
        c = np.repeat(np.arange(classes), per_class)
        phi = 2 * np.pi * c / classes + 4 * t + noise * rng.standard_normal(t.size)
        x = np.stack([t * np.cos(phi), t * np.sin(phi)], axis=1)
    else:
        raise ValueError(f"unknown dataset kind {kind!r}")
    y = np.repeat(np.arange(classes), per_class)

    n_train = int(round(train_fraction * per_class))
    train_idx, test_idx = [], []
    for c in range(classes):
        idx = c * per_class + rng.permutation(per_class)
        train_idx.append(idx[:n_train])
        test_idx.append(idx[n_train:])
    train_idx = np.concatenate(train_idx)
    test_idx = np.concatenate(test_idx)
    meta = {"kind": kind, "classes": classes, "per_class": per_class, "noise": noise, "seed": seed,
            "image_shape": list(image_shape) if image_shape else None, "dim": dim,
            "train_fraction": train_fraction}
    return Dataset(x[train_idx], y[train_idx], x[test_idx], y[test_idx], classes, seed, meta)
