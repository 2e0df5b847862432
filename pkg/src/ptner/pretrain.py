"""Pre-training example construction.

Masking strategies produce a :class:`MaskPlan` per sequence:

* ``static``  - one plan per sequence, reused for every epoch.
* ``dynamic`` - a fresh plan per epoch; the random stream is keyed by
  ``(seed, epoch)``.  Epoch 0 coincides with the static plan.
* ``span``    - lexicon entries found by greedy longest match are masked
  as whole units, the rest of the budget is filled with single characters.

Selected units are acted on with the 80/10/10 law: replace with
``[MASK]``, replace with a random non-special token, keep the original.
Sentence-pair (NSP) and dialogue (DLM) samplers live here as well.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .corpus import MASK_ID, NUM_SPECIALS
from .seeding import substream

MASK_ACTION = "replace_with_mask"
RANDOM_ACTION = "replace_with_random_token"
KEEP_ACTION = "keep_original"
ACTIONS = (MASK_ACTION, RANDOM_ACTION, KEEP_ACTION)
MASK_PROB, RANDOM_PROB = 0.8, 0.1
STRATEGIES = ("static", "dynamic", "span")


class NoMaskablePositionError(ValueError):
    pass


@dataclass(frozen=True)
class MaskAction:
    pos: int
    action: str
    replacement_id: int | None = None


@dataclass
class MaskPlan:
    seq_id: int
    epoch: int
    strategy: str
    actions: list[MaskAction]
    labels: list[tuple[int, int]]  # (position, original token id)

    @property
    def positions(self) -> list[int]:
        return [a.pos for a in self.actions]

    def apply(self, ids: Sequence[int]) -> list[int]:
        out = list(ids)
        for a in self.actions:
            if a.action == MASK_ACTION:
                out[a.pos] = MASK_ID
            elif a.action == RANDOM_ACTION:
                out[a.pos] = a.replacement_id
        return out

    def revert(self, masked: Sequence[int]) -> list[int]:
        out = list(masked)
        for pos, original in self.labels:
            out[pos] = original
        return out

    def to_json(self) -> dict:
        actions = []
        for a in self.actions:
            d = {"pos": a.pos, "action": a.action}
            if a.replacement_id is not None:
                d["replacement_id"] = a.replacement_id
            actions.append(d)
        return {
            "seq_id": self.seq_id,
            "epoch": self.epoch,
            "strategy": self.strategy,
            "actions": actions,
            "labels": [{"pos": p, "original_id": o} for p, o in self.labels],
        }

    @classmethod
    def from_json(cls, d: dict) -> "MaskPlan":
        return cls(
            seq_id=d["seq_id"],
            epoch=d["epoch"],
            strategy=d["strategy"],
            actions=[
                MaskAction(a["pos"], a["action"], a.get("replacement_id"))
                for a in d["actions"]
            ],
            labels=[(x["pos"], x["original_id"]) for x in d["labels"]],
        )


def mask_budget(rate: float, n: int) -> int:
    """``round(rate * n)`` (half up), at least 1."""
    return max(1, math.floor(rate * n + 0.5))


def _maskable(ids, specials_mask, rate) -> np.ndarray:
    if not 0.0 < rate < 1.0:
        raise ValueError(f"mask rate must be in (0, 1), got {rate}")
    if len(ids) != len(specials_mask):
        raise ValueError("ids and specials_mask differ in length")
    cands = np.flatnonzero(~np.asarray(specials_mask, dtype=bool))
    if cands.size == 0:
        raise NoMaskablePositionError("sequence has no maskable position")
    return cands


def _act(units, ids, rng, vocab_size, seq_id, epoch, strategy) -> MaskPlan:
    # units: position lists sorted by first position; one action draw per unit
    if vocab_size <= NUM_SPECIALS:
        raise ValueError("vocabulary has no non-special token to sample")
    actions, labels = [], []
    for unit in units:
        u = rng.random()
        if u < MASK_PROB:
            acts = [MaskAction(p, MASK_ACTION) for p in unit]
        elif u < MASK_PROB + RANDOM_PROB:
            repl = rng.integers(NUM_SPECIALS, vocab_size, size=len(unit))
            acts = [MaskAction(p, RANDOM_ACTION, int(r)) for p, r in zip(unit, repl)]
        else:
            acts = [MaskAction(p, KEEP_ACTION) for p in unit]
        actions.extend(acts)
        labels.extend((p, int(ids[p])) for p in unit)
    return MaskPlan(seq_id, epoch, strategy, actions, labels)


def _basic_plan(ids, specials_mask, rate, rng, vocab_size, seq_id, epoch, strategy):
    cands = _maskable(ids, specials_mask, rate)
    k = min(mask_budget(rate, cands.size), cands.size)
    chosen = np.sort(rng.choice(cands, size=k, replace=False))
    return _act([[int(p)] for p in chosen], ids, rng, vocab_size, seq_id, epoch, strategy)


def plan_static_mask(
    ids: Sequence[int],
    specials_mask: Sequence[bool],
    rate: float,
    seed: int,
    *,
    vocab_size: int,
    seq_id: int = 0,
) -> MaskPlan:
    rng = substream(seed, "mask", 0)
    return _basic_plan(ids, specials_mask, rate, rng, vocab_size, seq_id, 0, "static")


def plan_dynamic_mask(
    ids: Sequence[int],
    specials_mask: Sequence[bool],
    rate: float,
    seed: int,
    epoch: int,
    *,
    vocab_size: int,
    seq_id: int = 0,
) -> MaskPlan:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    rng = substream(seed, "mask", epoch)
    return _basic_plan(ids, specials_mask, rate, rng, vocab_size, seq_id, epoch, "dynamic")


class SpanLexicon:
    """Multi-character entity/phrase strings used for span masking."""

    def __init__(self, entries: Iterable[str] = ()):
        entries = {e.strip() for e in entries}
        entries.discard("")
        short = sorted(e for e in entries if len(e) < 2)
        if short:
            raise ValueError(f"lexicon entries must have length >= 2: {short[:5]}")
        self.entries = frozenset(entries)
        self.max_len = max((len(e) for e in self.entries), default=0)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, s: str) -> bool:
        return s in self.entries

    @classmethod
    def from_text(cls, text: str) -> "SpanLexicon":
        return cls(line for line in text.splitlines() if line.strip())

    @classmethod
    def from_file(cls, path) -> "SpanLexicon":
        with open(path, encoding="utf-8") as f:
            return cls.from_text(f.read())


def match_spans(
    tokens: Sequence[str], lexicon: SpanLexicon, specials_mask: Sequence[bool] | None = None
) -> list[tuple[int, int]]:
    """Greedy left-to-right longest match; returns ``(start, end_exclusive)`` pairs."""
    n = len(tokens)
    special = list(specials_mask) if specials_mask is not None else [False] * n
    spans = []
    i = 0
    while i < n:
        found = 0
        if not special[i]:
            for L in range(min(lexicon.max_len, n - i), 1, -1):
                if any(special[i : i + L]):
                    continue
                if "".join(tokens[i : i + L]) in lexicon:
                    found = L
                    break
        if found:
            spans.append((i, i + found))
            i += found
        else:
            i += 1
    return spans


def plan_span_mask(
    ids: Sequence[int],
    specials_mask: Sequence[bool],
    tokens: Sequence[str],
    lexicon: SpanLexicon,
    rate: float,
    seed: int,
    *,
    vocab_size: int,
    seq_id: int = 0,
) -> MaskPlan:
    """Entity/phrase-level masking.

    ``tokens`` are the surface strings aligned with ``ids``.  Spans that fit
    the remaining budget are taken in random order, then single characters
    outside every matched span fill the rest.  Only if that still falls
    short is one more whole span added, which may overshoot the budget.
    """
    if len(tokens) != len(ids):
        raise ValueError("tokens and ids differ in length")
    cands = _maskable(ids, specials_mask, rate)
    spans = match_spans(tokens, lexicon, specials_mask)
    rng = substream(seed, "mask", 0)
    if not spans:
        return _basic_plan(ids, specials_mask, rate, rng, vocab_size, seq_id, 0, "span")

    budget = mask_budget(rate, cands.size)
    order = rng.permutation(len(spans))
    units, count, leftover = [], 0, []
    for idx in order:
        s, e = spans[idx]
        if count + (e - s) <= budget:
            units.append(list(range(s, e)))
            count += e - s
        else:
            leftover.append(idx)

    in_span = np.zeros(len(ids), dtype=bool)
    for s, e in spans:
        in_span[s:e] = True
    free = cands[~in_span[cands]]
    k = min(budget - count, free.size)
    if k > 0:
        units.extend([int(p)] for p in rng.choice(free, size=k, replace=False))
        count += k
    for idx in leftover:
        if count >= budget:
            break
        s, e = spans[idx]
        units.append(list(range(s, e)))
        count += e - s

    units.sort(key=lambda u: u[0])
    return _act(units, ids, rng, vocab_size, seq_id, 0, "span")


def plan_mask(
    strategy: str,
    ids: Sequence[int],
    specials_mask: Sequence[bool],
    rate: float,
    seed: int,
    epoch: int = 0,
    *,
    vocab_size: int,
    tokens: Sequence[str] | None = None,
    lexicon: SpanLexicon | None = None,
    seq_id: int = 0,
) -> MaskPlan:
    """Dispatch on strategy name; ``epoch`` only matters for ``dynamic``."""
    if strategy == "static":
        return plan_static_mask(ids, specials_mask, rate, seed, vocab_size=vocab_size, seq_id=seq_id)
    if strategy == "dynamic":
        return plan_dynamic_mask(
            ids, specials_mask, rate, seed, epoch, vocab_size=vocab_size, seq_id=seq_id
        )
    if strategy == "span":
        if tokens is None:
            raise ValueError("span masking needs the surface tokens")
        return plan_span_mask(
            ids, specials_mask, tokens, lexicon or SpanLexicon(), rate, seed,
            vocab_size=vocab_size, seq_id=seq_id,
        )  # fmt: skip
    raise ValueError(f"unknown masking strategy {strategy!r}; expected one of {STRATEGIES}")


@dataclass(frozen=True)
class SentencePairExample:
    segment_a: tuple[str, ...]
    segment_b: tuple[str, ...]
    is_next: bool

    def to_json(self) -> dict:
        return {
            "segment_a": "".join(self.segment_a),
            "segment_b": "".join(self.segment_b),
            "is_next": self.is_next,
        }


def make_nsp_pairs(
    documents: Sequence[Sequence[Sequence[str]]], n: int, seed: int
) -> list[SentencePairExample]:
    """Half true continuations, half cross-document random sentences."""
    if len(documents) < 2:
        raise ValueError("need at least 2 documents to draw negative pairs")
    if any(len(d) == 0 for d in documents):
        raise ValueError("documents must contain at least one sentence")
    if any(len(s) == 0 for d in documents for s in d):
        raise ValueError("sentences must be non-empty")
    eligible = [i for i, d in enumerate(documents) if len(d) >= 2]
    if not eligible:
        raise ValueError("need a document with at least 2 sentences")

    rng = substream(seed, "nsp")
    out = []
    for _ in range(n):
        d = eligible[rng.integers(len(eligible))]
        doc = documents[d]
        i = int(rng.integers(len(doc) - 1))
        a = tuple(doc[i])
        if rng.random() < 0.5:
            out.append(SentencePairExample(a, tuple(doc[i + 1]), True))
        else:
            other = int(rng.integers(len(documents) - 1))
            other += other >= d
            odoc = documents[other]
            b = tuple(odoc[rng.integers(len(odoc))])
            out.append(SentencePairExample(a, b, False))
    return out


@dataclass(frozen=True)
class DialogueExample:
    turns: tuple[tuple[str, ...], ...]
    is_real: bool
    replaced_turn: int | None = None

    def __post_init__(self):
        if len(self.turns) < 2:
            raise ValueError("a dialogue needs at least 2 turns")
        if self.is_real != (self.replaced_turn is None):
            raise ValueError("replaced_turn must be set exactly for fake dialogues")
        if self.replaced_turn is not None and not 0 <= self.replaced_turn < len(self.turns):
            raise ValueError("replaced_turn out of range")

    def to_json(self) -> dict:
        return {
            "turns": ["".join(t) for t in self.turns],
            "is_real": self.is_real,
            "replaced_turn": self.replaced_turn,
        }


def make_dlm_samples(
    dialogues: Sequence[Sequence[Sequence[str]]], seed: int, n: int | None = None
) -> list[DialogueExample]:
    """Real/fake multi-turn dialogues.

    Fakes replace one uniformly chosen turn with a uniformly chosen turn of
    a different dialogue; a candidate identical to the replaced turn is
    redrawn.  With ``n=None`` one sample is made per input dialogue, in
    order; otherwise ``n`` dialogues are drawn uniformly.
    """
    if len(dialogues) < 2:
        raise ValueError("need at least 2 dialogues")
    dialogues = [tuple(tuple(t) for t in d) for d in dialogues]
    if any(len(d) < 2 for d in dialogues):
        raise ValueError("every dialogue needs at least 2 turns")
    rng = substream(seed, "dlm")
    if n is None:
        picks = range(len(dialogues))
    else:
        picks = (int(rng.integers(len(dialogues))) for _ in range(n))

    out = []
    for d in picks:
        turns = dialogues[d]
        if rng.random() < 0.5:
            out.append(DialogueExample(turns, True))
            continue
        j = int(rng.integers(len(turns)))
        replacement = _draw_foreign_turn(dialogues, d, turns[j], rng)
        fake = turns[:j] + (replacement,) + turns[j + 1 :]
        out.append(DialogueExample(fake, False, j))
    return out


def _draw_foreign_turn(dialogues, d, original, rng, tries: int = 64):
    for _ in range(tries):
        other = int(rng.integers(len(dialogues) - 1))
        other += other >= d
        turn = dialogues[other][rng.integers(len(dialogues[other]))]
        if turn != original:
            return turn
    pool = [t for k, dl in enumerate(dialogues) if k != d for t in dl if t != original]
    if not pool:
        raise ValueError("no turn in other dialogues differs from the replaced turn")
    return pool[rng.integers(len(pool))]


def write_jsonl(records: Iterable[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n")


def read_documents(text: str) -> list[list[tuple[str, ...]]]:
    """Blank-line separated blocks, one sentence (or dialogue turn) per line."""
    docs, cur = [], []
    for line in text.splitlines():
        line = line.strip()
        if line:
            cur.append(tuple(line))
        elif cur:
            docs.append(cur)
            cur = []
    if cur:
        docs.append(cur)
    return docs
