"""Train / attack pipelines and parameter sweeps."""
from __future__ import annotations

import copy
import itertools
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .. import __version__
from ..attacks import run_attack_suite
from ..nn import checkpoint
from ..nn.train import NesterovSGD, TrainConfig, evaluate, train
from .config import build_dataset, build_embeds, build_network, config_hash, validate

OUT_ENV = "STDMARK_OUT"


def default_out_dir() -> Path:
    return Path(os.environ.get(OUT_ENV, "stdmark-out"))


def _embed_rows(embeds, net):
    return [{"layer": e.layer_id, "payload": len(e.message), "v": e.key.cols, "decoder": e.decoder.to_dict(),
             "key_seed": e.key.seed, "ber": e.ber(net)} for e in embeds]


def train_model(cfg: dict):
    """Returns ``(net, embeds, optimizer, history, data)`` for a validated config."""
    validate(cfg)
    data = build_dataset(cfg["dataset"])
    net = build_network(cfg["network"])
    embeds = build_embeds(cfg, net)
    tcfg = TrainConfig.from_dict(cfg["train"])
    opt = NesterovSGD(tcfg.momentum)
    net, hist = train(net, data, tcfg, embeds, optimizer=opt)
    return net, embeds, opt, hist, data


def attack_model(cfg: dict, net, embeds, data, attacks=None):
    ft = build_dataset(cfg["finetune_dataset"]) if "finetune_dataset" in cfg else None
    suite = cfg.get("attacks", []) if attacks is None else attacks
    return run_attack_suite(net, embeds, data, suite, TrainConfig.from_dict(cfg["train"]), ft)


def make_report(cfg: dict, net, embeds, hist, data, attack_reports) -> dict:
    return {
        "name": cfg.get("name", "run"),
        "config_hash": config_hash(cfg),
        "toolkit_version": __version__,
        "seeds": {"dataset": cfg["dataset"]["seed"], "network": cfg["network"]["seed"],
                  "train": TrainConfig.from_dict(cfg["train"]).seed,
                  "keys": [e.key.seed for e in embeds]},
        "ter": evaluate(net, data),
        "embeds": _embed_rows(embeds, net),
        "history": hist.to_dict() if hist is not None else None,
        "attacks": [r.to_dict() for r in attack_reports],
        "config": cfg,
    }


def write_record(path: Path, record: dict) -> None:
    """Append one JSON line; a single write keeps concurrent appends whole."""
    line = json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n"
    with open(path, "a") as f:
        f.write(line)


def run_experiment(cfg: dict, out_dir=None) -> dict:
    start = time.perf_counter()
    net, embeds, opt, hist, data = train_model(cfg)
    reports = attack_model(cfg, net, embeds, data)
    record = make_report(cfg, net, embeds, hist, data, reports)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        name = record["name"]
        checkpoint.save(out / f"{name}.ckpt", net, embeds, opt, extra={"config": cfg})
        (out / f"{name}.report.json").write_text(json.dumps(record, sort_keys=True, indent=1) + "\n")
        write_record(out / "reports.jsonl", record)
        write_record(out / "timing.jsonl", {"name": name, "config_hash": record["config_hash"],
                                            "wall_clock_s": round(time.perf_counter() - start, 3)})
    return record


def parse_grid(items) -> list[tuple[str, list]]:
    """``["embeds.0.payload=128,256"]`` -> ``[("embeds.0.payload", [128, 256])]``."""
    grid = []
    for item in items:
        path, _, values = item.partition("=")
        if not values:
            raise ValueError(f"grid entry {item!r} must look like path=v1,v2")
        grid.append((path.strip(), [json.loads(v) for v in values.split(",")]))
    return grid


def _strip_attacks(cfg):
    c = copy.deepcopy(cfg)
    c.pop("attacks", None)
    c.pop("name", None)
    return c


def sweep(cfg: dict, grid, out_dir=None, jobs: int = 1) -> list[dict]:
    """Run every point of the cartesian grid.

    Points that differ only in their attack settings share one training run.
    With ``jobs > 1`` training groups run on worker threads; each run owns
    its own model and generators, so results do not depend on ``jobs``.
    """
    from .config import set_path

    points = []
    for combo in itertools.product(*[values for _, values in grid]):
        c = cfg
        tags = []
        for (path, _), value in zip(grid, combo):
            c = set_path(c, path, value)
            tags.append(f"{path}={value}")
        c = set_path(c, "name", f"{cfg.get('name', 'run')}[{','.join(tags)}]" if tags else cfg.get("name", "run"))
        validate(c)
        points.append(c)

    groups: dict[str, list[int]] = {}
    for i, c in enumerate(points):
        groups.setdefault(json.dumps(_strip_attacks(c), sort_keys=True), []).append(i)

    def run_group(indices):
        start = time.perf_counter()
        net, embeds, opt, hist, data = train_model(points[indices[0]])
        train_time = time.perf_counter() - start
        out = []
        for i in indices:
            t0 = time.perf_counter()
            reports = attack_model(points[i], net, embeds, data)
            rec = make_report(points[i], net, embeds, hist, data, reports)
            out.append((i, rec, train_time + time.perf_counter() - t0))
        return out

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = [r for chunk in pool.map(run_group, groups.values()) for r in chunk]
    else:
        results = [r for idx in groups.values() for r in run_group(idx)]
    results.sort(key=lambda r: r[0])
    records = [rec for _, rec, _ in results]
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for _, rec, wall in results:
            write_record(out / "reports.jsonl", rec)
            write_record(out / "timing.jsonl", {"name": rec["name"], "config_hash": rec["config_hash"],
                                                "wall_clock_s": round(wall, 3)})
    return records


def read_records(paths) -> list[dict]:
    records = []
    for p in paths:
        with open(p) as f:
            records.extend(json.loads(line) for line in f if line.strip())
    return records
