"""Experiment configuration: JSON files validated against ``config.schema.json``."""
from __future__ import annotations

import copy
import hashlib
import json
from importlib import resources

import jsonschema
import numpy as np

from ..core import WatermarkMessage, generate_key
from ..nn.data import Dataset, synth_dataset
from ..nn.network import LayerSpec, Network
from ..nn.train import EmbedSpec, TrainConfig
from ..regularizer import DecoderKind


class ConfigError(ValueError):
    pass


def schema() -> dict:
    return json.loads(resources.files(__package__).joinpath("config.schema.json").read_text())


def canonical(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical(cfg).encode()).hexdigest()[:16]


def desk_network(channels: int = 8, width: int = 64, host_filters: int = 128, classes: int = 4) -> list[dict]:
    """conv 3x3 -> relu -> host conv 3x3 (v = 9*width) -> relu -> pool -> dense."""
    return [
        {"kind": "conv2d", "id": "conv1", "s": 3, "d": channels, "n": width},
        {"kind": "relu"},
        {"kind": "conv2d", "id": "conv2", "s": 3, "d": width, "n": host_filters},
        {"kind": "relu"},
        {"kind": "avgpool_global"},
        {"kind": "dense", "id": "fc", "fan_in": host_filters, "fan_out": classes},
        {"kind": "softmax_head"},
    ]


def desk_config(payload: int | None = 256, decoder: str = "STDM", name: str | None = None, net_seed: int = 2,
                key_seed: int = 3, data_seed: int = 1, train_seed: int = 0, epochs: int = 60) -> dict:
    """The pinned desk-scale experiment: v = 576 host layer, 4-class blobs."""
    dec = {"kind": "SS", "gamma": 10.0} if decoder.upper() == "SS" else {"kind": "STDM", "alpha": 10.0, "beta": 10.0}
    cfg = {
        "name": name or (f"{decoder.lower()}-l{payload}" if payload else "baseline"),
        "dataset": {"kind": "gaussian-blobs", "classes": 4, "per_class": 100, "noise": 5.0, "seed": data_seed,
                    "image_shape": [6, 6, 8]},
        "network": {"seed": net_seed, "layers": desk_network()},
        "train": {"epochs": epochs, "batch_size": 64, "learning_rate": 0.01, "momentum": 0.9,
                  "lr_schedule": [[epochs // 3, 0.2], [2 * epochs // 3, 0.2]], "seed": train_seed,
                  "lam": 0.01 if payload else 0.0},
        "embeds": [],
        "attacks": [],
    }
    if payload:
        cfg["embeds"].append({"layers": ["conv2"], "payload": payload, "decoder": dec, "key_seed": key_seed})
    return cfg


def load_config(path) -> dict:
    with open(path) as f:
        try:
            cfg = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    """Schema check plus cross-field checks (layers exist, payload fits)."""
    try:
        jsonschema.validate(cfg, schema())
    except jsonschema.ValidationError as exc:
        path = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {path}: {exc.message}") from None
    try:
        layers = [LayerSpec.from_dict(d) for d in cfg["network"]["layers"]]
        TrainConfig.from_dict(cfg["train"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    by_id = {l.id: l for l in layers if l.id}
    for i, e in enumerate(cfg.get("embeds", [])):
        if len(set(e["layers"])) != len(e["layers"]):
            raise ConfigError(f"embeds.{i}: duplicate layer ids")
        for lid in e["layers"]:
            if lid not in by_id or not by_id[lid].has_params:
                raise ConfigError(f"embeds.{i}: no weight layer {lid!r}")
        if len(e["layers"]) > e["payload"]:
            raise ConfigError(f"embeds.{i}: payload smaller than the number of layers")
        if "message" in e and len(e["message"]) != e["payload"]:
            raise ConfigError(f"embeds.{i}: message length {len(e['message'])} != payload {e['payload']}")
    for i, a in enumerate(cfg.get("attacks", [])):
        if a["kind"] != "finetune" and "p" not in a:
            raise ConfigError(f"attacks.{i}: pruning needs p")
        if a.get("layer") and a["layer"] not in by_id:
            raise ConfigError(f"attacks.{i}: no layer {a['layer']!r}")
        if a.get("dataset") == "finetune" and "finetune_dataset" not in cfg:
            raise ConfigError(f"attacks.{i}: needs a finetune_dataset section")


def split_payload(payload: int, parts: int) -> list[int]:
    base, extra = divmod(payload, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def layer_key_seeds(master: int, parts: int) -> list[int]:
    """One key seed per layer; a single layer uses the master seed directly."""
    if parts == 1:
        return [master]
    return [int(s.generate_state(1, np.uint64)[0]) for s in np.random.SeedSequence(master).spawn(parts)]


def build_dataset(spec: dict) -> Dataset:
    spec = dict(spec)
    if spec.get("image_shape") is not None:
        spec["image_shape"] = tuple(spec["image_shape"])
    return synth_dataset(**spec)


def build_network(spec: dict) -> Network:
    return Network([LayerSpec.from_dict(d) for d in spec["layers"]], seed=spec["seed"])


def build_embeds(cfg: dict, net: Network) -> list[EmbedSpec]:
    """Expand embed declarations; multi-layer payloads are split across layers."""
    out = []
    for e in cfg.get("embeds", []):
        dec = DecoderKind.from_dict(e["decoder"])
        if "message" in e:
            message = WatermarkMessage.from_string(e["message"]).bits
        else:
            message = WatermarkMessage.random(e["payload"], e.get("message_seed", e["key_seed"] + 1)).bits
        sizes = split_payload(e["payload"], len(e["layers"]))
        seeds = layer_key_seeds(e["key_seed"], len(e["layers"]))
        start = 0
        for lid, size, seed in zip(e["layers"], sizes, seeds):
            key = generate_key(seed, size, net.layer(lid).host_size)
            out.append(EmbedSpec(lid, key, WatermarkMessage(message[start : start + size]), dec))
            start += size
    return out


def set_path(cfg: dict, path: str, value) -> dict:
    """Return a copy of ``cfg`` with the dotted ``path`` set to ``value``."""
    cfg = copy.deepcopy(cfg)
    node = cfg
    parts = path.split(".")
    for p in parts[:-1]:
        node = node[int(p)] if isinstance(node, list) else node.setdefault(p, {})
    last = parts[-1]
    if isinstance(node, list):
        node[int(last)] = value
    else:
        node[last] = value
    return cfg
