"""Model modifications a watermark should survive: fine-tuning and pruning.

Every attack works on a copy; the input network is never modified.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .nn.data import Dataset
from .nn.network import Network
from .nn.train import EmbedSpec, TrainConfig, evaluate, train


def _count(p: float, size: int) -> int:
    if not 0 <= p <= 1:
        raise ValueError("pruning fraction must be in [0, 1]")
    return int(np.floor(p * size + 0.5))  # round half up


def _weight_layers(net: Network, layer_id):
    if layer_id is None:
        return [l.id for l in net.layers if l.has_params]
    layer = net.layer(layer_id)
    if not layer.has_params:
        raise ValueError(f"layer {layer_id!r} has no weights")
    return [layer_id]


def finetune(net: Network, data: Dataset, epochs: int = 20, base: TrainConfig | None = None, **overrides) -> Network:
    """Retrain a copy on the plain task loss.

    Uses a constant learning rate equal to the last stage of ``base``'s
    schedule; ``lam`` is always 0.
    """
    base = base or TrainConfig()
    overrides.pop("lam", None)
    cfg = replace(base, epochs=epochs, learning_rate=base.final_lr, lr_schedule=(), lam=0.0, **overrides)
    out = net.copy()
    if epochs > 0:
        train(out, data, cfg, record=False)
    return out


def prune_random(net: Network, layer_id, p: float, seed: int) -> Network:
    """Zero ``round(p * count)`` weights of the layer, chosen uniformly.

    The pruned positions are a prefix of one seeded permutation, so for a
    fixed seed a larger ``p`` prunes a superset of a smaller one.
    ``layer_id=None`` prunes every weight layer independently.
    """
    out = net.copy()
    rng = np.random.Generator(np.random.PCG64(seed))
    for lid in _weight_layers(net, layer_id):
        W = out.params[lid]["W"]
        idx = rng.permutation(W.size)[: _count(p, W.size)]
        W.flat[idx] = 0.0
    return out


def prune_magnitude(net: Network, layer_id, p: float) -> Network:
    """Zero the ``round(p * count)`` smallest-magnitude weights (ties by index)."""
    out = net.copy()
    for lid in _weight_layers(net, layer_id):
        W = out.params[lid]["W"]
        order = np.argsort(np.abs(W), axis=None, kind="stable")
        W.flat[order[: _count(p, W.size)]] = 0.0
    return out


@dataclass
class AttackReport:
    attack: dict
    ter_before: float
    ter_after: float
    ber_before: list
    ber_after: list
    seeds: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "attack": self.attack,
            "ter_before": self.ter_before,
            "ter_after": self.ter_after,
            "ber_before": self.ber_before,
            "ber_after": self.ber_after,
            "seeds": self.seeds,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AttackReport":
        return cls(**d)


def apply_attack(net: Network, spec: dict, data: Dataset, base: TrainConfig | None = None,
                 finetune_data: Dataset | None = None) -> Network:
    kind = spec["kind"]
    if kind == "finetune":
        overrides = {"seed": spec["seed"]} if "seed" in spec else {}
        source = finetune_data if spec.get("dataset") == "finetune" else data
        if source is None:
            raise ValueError("attack asks for the fine-tune dataset but none was given")
        return finetune(net, source, spec.get("epochs", 20), base, **overrides)
    if kind == "prune_random":
        return prune_random(net, spec.get("layer"), spec["p"], spec.get("seed", 0))
    if kind == "prune_magnitude":
        return prune_magnitude(net, spec.get("layer"), spec["p"])
    raise ValueError(f"unknown attack kind {kind!r}")


def expand_suite(suite) -> list[dict]:
    """Expand list-valued ``p`` / ``epochs`` entries into one attack each."""
    out = []
    for spec in suite:
        key = "p" if isinstance(spec.get("p"), list) else "epochs" if isinstance(spec.get("epochs"), list) else None
        if key is None:
            out.append(dict(spec))
        else:
            out.extend({**spec, key: value} for value in spec[key])
    return out


def run_attack_suite(net: Network, embeds, data: Dataset, suite, base: TrainConfig | None = None,
                     finetune_data: Dataset | None = None) -> list[AttackReport]:
    embeds = list(embeds)
    ter0 = evaluate(net, data)
    ber0 = [e.ber(net) for e in embeds]
    reports = []
    for spec in expand_suite(suite):
        attacked = apply_attack(net, spec, data, base, finetune_data)
        seeds = {k: spec[k] for k in ("seed",) if k in spec}
        if spec["kind"] == "finetune":
            seeds.setdefault("seed", (base or TrainConfig()).seed)
        reports.append(AttackReport(dict(spec), ter0, evaluate(attacked, data), list(ber0),
                                    [e.ber(attacked) for e in embeds], seeds))
    return reports
