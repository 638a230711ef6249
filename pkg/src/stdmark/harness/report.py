"""Plain-text tables for experiment records."""
from __future__ import annotations

RUN_COLUMNS = ("run", "layer", "payload", "decoder", "TER(%)", "BER(%)")
ATTACK_COLUMNS = ("run", "layer", "attack", "TER before(%)", "TER after(%)", "BER before(%)", "BER after(%)")


def pct(x: float) -> str:
    return f"{100 * x:.2f}"


def decoder_label(d: dict) -> str:
    if d["kind"].upper() == "SS":
        return f"SS(gamma={d['gamma']:g})"
    return f"STDM(alpha={d['alpha']:g},beta={d['beta']:g})"


def attack_label(a: dict) -> str:
    kind = a["kind"]
    if kind == "finetune":
        extra = f",{a['dataset']}" if a.get("dataset") not in (None, "same") else ""
        return f"finetune(epochs={a.get('epochs', 20)}{extra})"
    layer = a.get("layer") or "all"
    seed = f",seed={a['seed']}" if kind == "prune_random" and "seed" in a else ""
    return f"{kind}(p={pct(a['p'])}%,layer={layer}{seed})"


def _table(columns, rows) -> str:
    widths = [max([len(c)] + [len(r[i]) for r in rows]) for i, c in enumerate(columns)]

    def line(cells):
        # first column left-aligned, numbers right-aligned
        return "  ".join(c.ljust(w) if i == 0 or not c[:1].isdigit() else c.rjust(w)
                         for i, (c, w) in enumerate(zip(cells, widths))).rstrip()

    out = [line(columns), "  ".join("-" * w for w in widths)]
    out += [line(r) for r in rows]
    return "\n".join(out) + "\n"


def run_rows(records) -> list[tuple[str, ...]]:
    rows = []
    for rec in records:
        if not rec["embeds"]:
            rows.append((rec["name"], "-", "0", "-", pct(rec["ter"]), "-"))
        for e in rec["embeds"]:
            rows.append((rec["name"], e["layer"], str(e["payload"]), decoder_label(e["decoder"]),
                         pct(rec["ter"]), pct(e["ber"])))
    return rows


def attack_rows(records) -> list[tuple[str, ...]]:
    rows = []
    for rec in records:
        for a in rec["attacks"]:
            layers = [e["layer"] for e in rec["embeds"]] or ["-"]
            for j, layer in enumerate(layers):
                bb = pct(a["ber_before"][j]) if a["ber_before"] else "-"
                ba = pct(a["ber_after"][j]) if a["ber_after"] else "-"
                rows.append((rec["name"], layer, attack_label(a["attack"]), pct(a["ter_before"]),
                             pct(a["ter_after"]), bb, ba))
    return rows


def render_tables(records) -> str:
    text = "Runs\n" + _table(RUN_COLUMNS, run_rows(records))
    attacks = attack_rows(records)
    if attacks or not records:
        text += "\nAttacks\n" + _table(ATTACK_COLUMNS, attacks)
    return text
