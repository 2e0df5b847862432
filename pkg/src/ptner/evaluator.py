"""Entity-level precision/recall/F1 and the results table."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Sequence

from .corpus import TaggedSentence, extract_spans

HEADER = ("Models", "Precision/%", "Recall/%", "F1/%")
BEST_MARK = "*"


@dataclass(frozen=True)
class EvalRow:
    model: str
    precision: float
    recall: float
    f1: float
    num_gold: int | None = None
    num_pred: int | None = None
    num_correct: int | None = None

    def to_json(self) -> dict:
        return asdict(self)


def prf(num_correct: int, num_pred: int, num_gold: int) -> tuple[float, float, float]:
    p = 100.0 * num_correct / num_pred if num_pred else 0.0
    r = 100.0 * num_correct / num_gold if num_gold else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def evaluate(
    gold: Sequence[TaggedSentence],
    pred: Sequence[Sequence[str]],
    name: str = "model",
) -> EvalRow:
    """Micro-averaged exact-match scores (span boundaries and type must agree)."""
    if len(gold) != len(pred):
        raise ValueError(f"{len(gold)} gold sentences but {len(pred)} predictions")
    n_gold = n_pred = n_correct = 0
    for i, (g, p) in enumerate(zip(gold, pred)):
        if len(g.tags) != len(p):
            raise ValueError(
                f"sentence {i}: gold has {len(g.tags)} tags, prediction has {len(p)}"
            )
        gs = Counter(extract_spans(g.tags))
        ps = Counter(extract_spans(p))
        n_gold += sum(gs.values())
        n_pred += sum(ps.values())
        n_correct += sum((gs & ps).values())
    return EvalRow(name, *prf(n_correct, n_pred, n_gold), n_gold, n_pred, n_correct)


def round2(x: float) -> str:
    """Half-up rounding to two decimals of the shortest decimal repr of ``x``."""
    return str(Decimal(repr(float(x))).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def format_report(rows: Sequence[EvalRow]) -> str:
    """Fixed-width table; the row(s) with the highest rounded F1 get a ``*``.

    Layout: the name column is left-aligned and as wide as the longest
    name (at least ``Models``); each score column is right-aligned to the
    width of its header; columns are separated by two spaces; a dashed rule
    follows the header; every line ends with ``\\n`` and carries no
    trailing spaces.
    """
    if not rows:
        raise ValueError("need at least one row")
    name_w = max(len(HEADER[0]), *(len(r.model) for r in rows))
    widths = [len(h) for h in HEADER[1:]]
    cells = [(round2(r.precision), round2(r.recall), round2(r.f1)) for r in rows]
    best = max(Decimal(c[2]) for c in cells)

    def line(name, vals, mark=""):
        parts = [name.ljust(name_w)] + [v.rjust(w) for v, w in zip(vals, widths)]
        text = "  ".join(parts)
        return (text + " " + mark if mark else text).rstrip() + "\n"

    out = [line(HEADER[0], HEADER[1:]), "-" * (name_w + sum(widths) + 2 * len(widths)) + "\n"]
    for r, c in zip(rows, cells):
        out.append(line(r.model, c, BEST_MARK if Decimal(c[2]) == best else ""))
    return "".join(out)


def report_json(rows: Sequence[EvalRow]) -> str:
    cells = [round2(r.f1) for r in rows]
    best = max(Decimal(c) for c in cells)
    payload = [
        {**r.to_json(), "best": Decimal(c) == best} for r, c in zip(rows, cells)
    ]
    return json.dumps({"rows": payload}, ensure_ascii=False, indent=2, sort_keys=True) + "\n"
