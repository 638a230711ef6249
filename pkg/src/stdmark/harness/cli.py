"""Command-line entry point: ``stdmark {keygen,train,extract,attack,report,sweep}``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ..attacks import apply_attack, run_attack_suite
from ..core import KEY_GENERATOR, WatermarkMessage, flatten_weights, generate_key
from ..nn import checkpoint
from ..nn.train import TrainConfig, TrainingDiverged
from ..regularizer import DecoderKind, bit_error_rate, extract_bits
from .config import ConfigError, build_dataset, load_config, set_path
from .report import render_tables
from .runner import default_out_dir, make_report, parse_grid, read_records, run_experiment, sweep, write_record

KEY_FORMAT = "stdmark-key"


def write_key(path, seed: int, rows: int, cols: int) -> None:
    doc = {"format": KEY_FORMAT, "version": 1, "seed": seed, "rows": rows, "cols": cols, "generator": KEY_GENERATOR}
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")


def read_key(path):
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != KEY_FORMAT:
        raise ValueError(f"{path}: not a key file")
    if doc.get("generator") != KEY_GENERATOR:
        raise ValueError(f"{path}: unsupported generator {doc.get('generator')!r}")
    return generate_key(int(doc["seed"]), int(doc["rows"]), int(doc["cols"]))


def _out(args) -> Path:
    return Path(args.out) if args.out else default_out_dir()


def _config(args) -> dict:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = set_path(cfg, "train.seed", args.seed)
    return cfg


def cmd_keygen(args):
    path = Path(args.key) if args.key else _out(args) / f"key-{args.seed}-{args.rows}x{args.cols}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    write_key(path, args.seed, args.rows, args.cols)
    print(path)


def cmd_train(args):
    rec = run_experiment(_config(args), _out(args))
    out = _out(args)
    print(f"checkpoint: {out / (rec['name'] + '.ckpt')}")
    print(render_tables([rec]), end="")


def cmd_extract(args):
    net, embeds, _, _ = checkpoint.load(args.checkpoint)
    recorded = {e.layer_id: e for e in embeds}
    if args.key:
        layer = args.layer or (embeds[0].layer_id if len(embeds) == 1 else None)
        if layer is None:
            raise ValueError("--layer is required with --key")
        if args.decoder:
            dec = DecoderKind.from_dict({"kind": args.decoder, "gamma": args.gamma, "alpha": args.alpha,
                                         "beta": args.beta})
        elif layer in recorded:
            dec = recorded[layer].decoder
        else:
            raise ValueError("--decoder is required for a layer without embed metadata")
        targets = [(layer, read_key(args.key), dec)]
    else:
        targets = [(e.layer_id, e.key, e.decoder) for e in embeds if args.layer in (None, e.layer_id)]
        if not targets:
            raise ValueError("checkpoint has no matching embed metadata; pass --key")
    for layer, key, dec in targets:
        if key.cols != net.layer(layer).host_size:
            raise ValueError(f"key has {key.cols} columns but layer {layer!r} has v={net.layer(layer).host_size}")
        bits = extract_bits(flatten_weights(net.host_weights(layer)), key, dec)
        print(f"layer {layer} [{dec.kind}] bits: {bits.to_string()}")
        if args.message:
            ref = WatermarkMessage.from_string(args.message)
        elif layer in recorded and len(recorded[layer].message) == key.rows:
            ref = recorded[layer].message
        else:
            ref = None
        if ref is not None and not args.no_reference:
            print(f"layer {layer} BER: {100 * bit_error_rate(ref, bits):.2f}%")


def cmd_attack(args):
    net, embeds, _, header = checkpoint.load(args.checkpoint)
    cfg = header["extra"].get("config")
    if cfg is None:
        raise ValueError("checkpoint carries no config; cannot rebuild its dataset")
    spec = {"kind": args.kind}
    if args.kind == "finetune":
        spec["epochs"] = args.epochs
    else:
        if args.p is None:
            raise ValueError("--p is required for pruning")
        spec["p"] = args.p
        spec["layer"] = args.layer or (embeds[0].layer_id if embeds else None)
    if args.kind == "prune_random" or (args.kind == "finetune" and args.seed is not None):
        spec["seed"] = args.seed or 0
    if args.finetune_dataset:
        spec["dataset"] = "finetune"
    data = build_dataset(cfg["dataset"])
    ft = build_dataset(cfg["finetune_dataset"]) if "finetune_dataset" in cfg else None
    base = TrainConfig.from_dict(cfg["train"])
    report = run_attack_suite(net, embeds, data, [spec], base, ft)[0]
    attacked = apply_attack(net, spec, data, base, ft)
    out = _out(args)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.checkpoint).stem
    tag = spec["kind"] + (f"-p{spec['p']}" if "p" in spec else f"-e{spec.get('epochs')}")
    checkpoint.save(out / f"{stem}.{tag}.ckpt", attacked, embeds, extra=header["extra"])
    rec = make_report({**cfg, "name": f"{cfg.get('name', stem)}.{tag}"}, attacked, embeds, None, data, [report])
    write_record(out / "reports.jsonl", rec)
    print(render_tables([rec]), end="")


def cmd_report(args):
    print(render_tables(read_records(args.reports)), end="")


def cmd_sweep(args):
    cfg = _config(args)
    records = sweep(cfg, parse_grid(args.grid), _out(args), jobs=args.jobs)
    print(render_tables(records), end="")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stdmark", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", help="output directory (default: $STDMARK_OUT or ./stdmark-out)")
        return sp

    k = common(sub.add_parser("keygen", help="write a key file from (seed, rows, cols)"))
    k.add_argument("--seed", type=int, required=True)
    k.add_argument("--rows", type=int, required=True, help="payload l")
    k.add_argument("--cols", type=int, required=True, help="host length v")
    k.add_argument("--key", help="key file path")
    k.set_defaults(func=cmd_keygen)

    t = common(sub.add_parser("train", help="train a model from a config"))
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int, help="override train.seed")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("extract", help="read watermark bits from a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--key", help="key file (default: keys recorded in the checkpoint)")
    e.add_argument("--layer")
    e.add_argument("--decoder", choices=["SS", "STDM"])
    e.add_argument("--gamma", type=float, default=10.0)
    e.add_argument("--alpha", type=float, default=10.0)
    e.add_argument("--beta", type=float, default=10.0)
    e.add_argument("--message", help="reference bit string for the BER")
    e.add_argument("--no-reference", action="store_true", help="print bits only")
    e.set_defaults(func=cmd_extract)

    a = common(sub.add_parser("attack", help="apply one attack to a checkpoint"))
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--kind", required=True, choices=["finetune", "prune_random", "prune_magnitude"])
    a.add_argument("--p", type=float)
    a.add_argument("--epochs", type=int, default=20)
    a.add_argument("--seed", type=int)
    a.add_argument("--layer")
    a.add_argument("--finetune-dataset", action="store_true", help="fine-tune on the config's finetune_dataset")
    a.set_defaults(func=cmd_attack)

    r = sub.add_parser("report", help="render report files as tables")
    r.add_argument("reports", nargs="+")
    r.set_defaults(func=cmd_report)

    s = common(sub.add_parser("sweep", help="run a parameter grid"))
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int, help="override train.seed")
    s.add_argument("--grid", action="append", default=[], metavar="PATH=V1,V2,...",
                   help="dotted config path and values, e.g. attacks.0.p=0.1,0.2")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ConfigError, ValueError, KeyError, OSError, TrainingDiverged, checkpoint.CheckpointError) as exc:
        print(f"stdmark {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
