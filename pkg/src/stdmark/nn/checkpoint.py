"""Binary checkpoint container.

Layout (all integers little-endian)::

    offset  size  content
    0       8     magic  b"STDMCKPT"
    8       4     uint32 format version (currently 1)
    12      4     uint32 header length H in bytes
    16      H     UTF-8 JSON header, keys sorted, separators (",", ":")
    16+H    ...   payload: float64 little-endian arrays, C order, back to back

The header's ``"arrays"`` list gives ``{"name", "shape"}`` for every payload
array in payload order.  Names are ``params/<layer>/<W|b>`` and
``momentum/<layer>/<W|b>``.  Everything else in the header (layer specs,
seeds, key descriptors, training config) is plain JSON.  Key matrices are not
stored; each embed entry records ``key_seed``, ``rows``, ``cols`` and the
generator name, and the matrix is regenerated on load.
"""
from __future__ import annotations

import json
import struct

import numpy as np

from ..core import KEY_GENERATOR, WatermarkMessage, generate_key
from ..regularizer import DecoderKind
from .network import LayerSpec, Network
from .train import EmbedSpec, NesterovSGD

MAGIC = b"STDMCKPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def embed_to_dict(e: EmbedSpec) -> dict:
    return {
        "layer_id": e.layer_id,
        "key_seed": e.key.seed,
        "rows": e.key.rows,
        "cols": e.key.cols,
        "generator": KEY_GENERATOR,
        "decoder": e.decoder.to_dict(),
        "message": e.message.to_string(),
    }


def embed_from_dict(d: dict) -> EmbedSpec:
    if d.get("generator", KEY_GENERATOR) != KEY_GENERATOR:
        raise CheckpointError(f"unsupported key generator {d['generator']!r}")
    return EmbedSpec(
        layer_id=d["layer_id"],
        key=generate_key(int(d["key_seed"]), int(d["rows"]), int(d["cols"])),
        message=WatermarkMessage.from_string(d["message"]),
        decoder=DecoderKind.from_dict(d["decoder"]),
    )


def dumps(net: Network, embeds=(), optimizer: NesterovSGD | None = None, extra: dict | None = None) -> bytes:
    arrays, names = [], []
    for lid in sorted(net.params):
        for k in ("W", "b"):
            names.append((f"params/{lid}/{k}", net.params[lid][k]))
    if optimizer is not None:
        for lid in sorted(optimizer.state):
            for k in ("W", "b"):
                names.append((f"momentum/{lid}/{k}", optimizer.state[lid][k]))
    for name, a in names:
        arrays.append({"name": name, "shape": list(a.shape)})
    header = {
        "format_version": FORMAT_VERSION,
        "layers": [l.to_dict() for l in net.layers],
        "net_seed": net.seed,
        "arrays": arrays,
        "optimizer": None if optimizer is None else {"kind": "nesterov_sgd", "momentum": optimizer.momentum},
        "embeds": [embed_to_dict(e) for e in embeds],
        "extra": extra or {},
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(hbytes)), hbytes]
    out += [np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in names]
    return b"".join(out)


def loads(blob: bytes):
    """Returns ``(net, embeds, optimizer_or_None, header)``."""
    if blob[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, hlen = struct.unpack("<II", blob[8:16])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(blob[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint header: {exc}") from None
    offset = 16 + hlen
    params, momentum = {}, {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape))
        if offset + 8 * count > len(blob):
            raise CheckpointError("checkpoint payload is truncated")
        a = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).astype(np.float64).reshape(shape)
        offset += 8 * count
        group, lid, k = entry["name"].split("/")
        (params if group == "params" else momentum).setdefault(lid, {})[k] = a
    if offset != len(blob):
        raise CheckpointError("payload size does not match header")
    layers = [LayerSpec.from_dict(d) for d in header["layers"]]
    net = Network(layers, params=params, seed=header["net_seed"])
    for l in layers:
        if l.has_params and net.params[l.id]["W"].shape != l.weight_shape:
            raise CheckpointError(f"weight shape mismatch for layer {l.id!r}")
    opt = None
    if header["optimizer"] is not None:
        opt = NesterovSGD(header["optimizer"]["momentum"], state=momentum)
    embeds = [embed_from_dict(d) for d in header["embeds"]]
    return net, embeds, opt, header


def save(path, net, embeds=(), optimizer=None, extra=None) -> None:
    with open(path, "wb") as f:
        f.write(dumps(net, embeds, optimizer, extra))


def load(path):
    with open(path, "rb") as f:
        return loads(f.read())
