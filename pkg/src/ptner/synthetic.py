"""Synthetic character-level NER corpora for desk-scale experiments."""

from __future__ import annotations

import numpy as np

from .corpus import EntitySpan, TaggedSentence, TagSet, extract_spans, spans_to_tags
from .seeding import substream

SURNAMES = "王李张刘陈杨赵黄"
GIVEN = "伟芳娜敏静丽强磊军洋"
PLACE_HEADS = "北南东西上广"
PLACE_TAILS = "京海州山川"
FILLER = "的了在是我有和人这中大为个国说们到以时要就出会也你对生能而子那得于着下自之年过发后作里用道行所然家种事成方多"

TAGSET = TagSet(("PER", "LOC"))


def _person(rng) -> str:
    n_given = int(rng.integers(1, 3))
    return SURNAMES[rng.integers(len(SURNAMES))] + "".join(
        GIVEN[rng.integers(len(GIVEN))] for _ in range(n_given)
    )


def _place(rng) -> str:
    return PLACE_HEADS[rng.integers(len(PLACE_HEADS))] + PLACE_TAILS[rng.integers(len(PLACE_TAILS))]


def make_corpus(
    n: int,
    seed: int = 0,
    *,
    min_len: int = 8,
    max_len: int = 20,
    filler_size: int = 25,
    zipf: bool = True,
) -> list[TaggedSentence]:
    """``n`` sentences of filler text with 1-3 PER/LOC mentions each.

    Mentions never touch each other, so BIO boundaries are recoverable.
    The character inventory is ``filler_size`` filler characters plus
    the name/place characters (about 50 in total with the defaults).
    Filler characters follow a Zipf law (rank ``r`` has weight ``1/r``)
    unless ``zipf=False``, in which case they are uniform.
    """
    rng = substream(seed, "synthetic")
    filler = FILLER[:filler_size]
    weights = 1.0 / np.arange(1, len(filler) + 1) if zipf else np.ones(len(filler))
    weights /= weights.sum()

    def fill(k: int) -> str:
        return "".join(filler[i] for i in rng.choice(len(filler), size=k, p=weights))

    out = []
    for _ in range(n):
        target = int(rng.integers(min_len, max_len + 1))
        k = int(rng.integers(1, 4))
        pieces: list[tuple[str, str | None]] = []
        for _ in range(k):
            gap = int(rng.integers(1, 4))
            pieces.append((fill(gap), None))
            if rng.random() < 0.5:
                pieces.append((_person(rng), "PER"))
            else:
                pieces.append((_place(rng), "LOC"))
        used = sum(len(p) for p, _ in pieces)
        tail = max(1, target - used)
        pieces.append((fill(tail), None))

        chars, spans = [], []
        for text, etype in pieces:
            if etype is not None:
                spans.append(EntitySpan(len(chars), len(chars) + len(text) - 1, etype))
            chars.extend(text)
        out.append(TaggedSentence(chars, spans_to_tags(spans, len(chars))))
    return out


def lexicon_entries(corpus) -> list[str]:
    """Surface strings of every multi-character entity in ``corpus``."""
    entries = set()
    for s in corpus:
        for sp in extract_spans(s.tags):
            if sp.end > sp.start:
                entries.add("".join(s.tokens[sp.start : sp.end + 1]))
    return sorted(entries)
