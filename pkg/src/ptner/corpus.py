"""Column-format corpus ingestion, character vocabulary and BIO tag logic."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
SPECIALS = (PAD, UNK, CLS, SEP, MASK)
PAD_ID, UNK_ID, CLS_ID, SEP_ID, MASK_ID = range(5)
NUM_SPECIALS = len(SPECIALS)

_TAG_RE = re.compile(r"^([BI])-(.+)$")


class CorpusFormatError(ValueError):
    """Malformed corpus text; ``line`` is 1-based."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class SequenceTooLongError(ValueError):
    pass


@dataclass(frozen=True)
class TaggedSentence:
    tokens: tuple[str, ...]
    tags: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "tags", tuple(self.tags))
        if len(self.tokens) != len(self.tags):
            raise ValueError(
                f"{len(self.tokens)} tokens but {len(self.tags)} tags"
            )
        for tag in self.tags:
            if not is_valid_tag(tag):
                raise ValueError(f"malformed tag {tag!r}")

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class EntitySpan:
    start: int
    end: int  # inclusive
    etype: str


def is_valid_tag(tag: str) -> bool:
    return tag == "O" or _TAG_RE.match(tag) is not None


def split_tag(tag: str) -> tuple[str, str | None]:
    """``"B-PER" -> ("B", "PER")``, ``"O" -> ("O", None)``."""
    if tag == "O":
        return "O", None
    m = _TAG_RE.match(tag)
    if m is None:
        raise ValueError(f"malformed tag {tag!r}")
    return m.group(1), m.group(2)


@dataclass(frozen=True)
class TagSet:
    """Tag inventory ``O, B-t1, I-t1, B-t2, I-t2, ...`` derived from entity types."""

    entity_types: tuple[str, ...]
    tags: tuple[str, ...] = field(init=False)
    index: dict[str, int] = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        types = tuple(self.entity_types)
        if len(set(types)) != len(types):
            raise ValueError(f"duplicate entity types in {types}")
        for t in types:
            if not t or any(c.isspace() for c in t):
                raise ValueError(f"bad entity type {t!r}")
        tags = ("O",) + tuple(f"{p}-{t}" for t in types for p in ("B", "I"))
        object.__setattr__(self, "entity_types", types)
        object.__setattr__(self, "tags", tags)
        object.__setattr__(self, "index", {t: i for i, t in enumerate(tags)})

    def __len__(self) -> int:
        return len(self.tags)

    def __contains__(self, tag: str) -> bool:
        return tag in self.index

    def encode(self, tags: Iterable[str]) -> list[int]:
        return [self.index[t] for t in tags]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.tags[i] for i in ids]


def parse_column_file(text: str, tagset: TagSet) -> list[TaggedSentence]:
    sentences = []
    tokens: list[str] = []
    tags: list[str] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            if tokens:
                sentences.append(TaggedSentence(tokens, tags))
                tokens, tags = [], []
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0] or not parts[1].strip():
            raise CorpusFormatError(f"expected 'token<TAB>tag', got {line!r}", lineno)
        token, tag = parts[0], parts[1].strip()
        if tag not in tagset:
            raise CorpusFormatError(f"unknown tag {tag!r}", lineno)
        tokens.append(token)
        tags.append(tag)
    if tokens:
        sentences.append(TaggedSentence(tokens, tags))
    return sentences


def format_column_file(sentences: Iterable[TaggedSentence]) -> str:
    blocks = [
        "".join(f"{tok}\t{tag}\n" for tok, tag in zip(s.tokens, s.tags))
        for s in sentences
    ]
    return "\n".join(blocks)


def read_column_file(path, tagset: TagSet) -> list[TaggedSentence]:
    with open(path, encoding="utf-8") as f:
        return parse_column_file(f.read(), tagset)


def extract_spans(tags: Sequence[str]) -> list[EntitySpan]:
    """Decode BIO tags into spans.

    A dangling ``I-X`` (not preceded by ``B-X``/``I-X``) opens a new span,
    exactly as if it were ``B-X``.
    """
    spans = []
    start, etype = None, None
    for i, tag in enumerate(tags):
        prefix, t = split_tag(tag)
        if prefix == "I" and etype == t:
            continue
        if etype is not None:
            spans.append(EntitySpan(start, i - 1, etype))
            start, etype = None, None
        if prefix in ("B", "I"):
            start, etype = i, t
    if etype is not None:
        spans.append(EntitySpan(start, len(tags) - 1, etype))
    return spans


def spans_to_tags(spans: Iterable[EntitySpan], length: int) -> list[str]:
    tags = ["O"] * length
    for span in spans:
        if not 0 <= span.start <= span.end < length:
            raise ValueError(f"span {span} out of range for length {length}")
        if any(t != "O" for t in tags[span.start : span.end + 1]):
            raise ValueError(f"span {span} overlaps another span")
        tags[span.start] = f"B-{span.etype}"
        for i in range(span.start + 1, span.end + 1):
            tags[i] = f"I-{span.etype}"
    return tags


def check_transitions(
    tags: Sequence[str], tagset: TagSet | None = None
) -> list[tuple[int, tuple[str | None, str]]]:
    """Positions where ``I-X`` follows anything but ``B-X``/``I-X``.

    Each violation is ``(position, (previous tag, tag))``; the previous tag
    is ``None`` for a sequence-initial ``I-X``.
    """
    violations = []
    prev = None
    for i, tag in enumerate(tags):
        if tagset is not None and tag not in tagset:
            raise ValueError(f"tag {tag!r} not in tag set")
        prefix, t = split_tag(tag)
        if prefix == "I":
            ok = prev is not None and prev in (f"B-{t}", f"I-{t}")
            if not ok:
                violations.append((i, (prev, tag)))
        prev = tag
    return violations


class Vocab:
    """Character vocabulary with the five specials fixed at ids 0..4."""

    def __init__(self, tokens: Sequence[str], min_freq: int = 1):
        tokens = list(tokens)
        if tuple(tokens[:NUM_SPECIALS]) != SPECIALS:
            tokens = list(SPECIALS) + [t for t in tokens if t not in SPECIALS]
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self.itos = tokens
        self.stoi = {t: i for i, t in enumerate(tokens)}
        self.min_freq = min_freq

    def __len__(self) -> int:
        return len(self.itos)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos

    def __repr__(self) -> str:
        return f"Vocab(size={len(self)}, min_freq={self.min_freq})"

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK_ID)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.itos[i] for i in ids]


def build_vocab(corpus: Sequence[TaggedSentence], min_freq: int = 1) -> Vocab:
    if not corpus:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    counts = Counter(tok for s in corpus for tok in s.tokens)
    kept = [t for t, c in counts.items() if c >= min_freq and t not in SPECIALS]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocab(list(SPECIALS) + kept, min_freq=min_freq)


def encode_sentence(
    vocab: Vocab, sentence: TaggedSentence | Sequence[str], max_len: int
) -> tuple[list[int], list[int], list[int]]:
    """``[CLS] tokens [SEP] [PAD]...`` padded to ``max_len``.

    Returns ``(ids, attention_mask, segment_ids)``.
    """
    tokens = sentence.tokens if isinstance(sentence, TaggedSentence) else sentence
    n = len(tokens)
    if n + 2 > max_len:
        raise SequenceTooLongError(
            f"sentence of length {n} does not fit max_len={max_len} (needs {n + 2})"
        )
    ids = [CLS_ID] + vocab.encode(tokens) + [SEP_ID]
    pad = max_len - len(ids)
    mask = [1] * len(ids) + [0] * pad
    return ids + [PAD_ID] * pad, mask, [0] * max_len


def encode_pair(
    vocab: Vocab, first: Sequence[str], second: Sequence[str], max_len: int
) -> tuple[list[int], list[int], list[int]]:
    """``[CLS] a [SEP] b [SEP]`` with segment 0 for ``a`` and 1 for ``b``."""
    need = len(first) + len(second) + 3
    if need > max_len:
        raise SequenceTooLongError(f"pair needs {need} positions, max_len={max_len}")
    ids = [CLS_ID] + vocab.encode(first) + [SEP_ID] + vocab.encode(second) + [SEP_ID]
    segments = [0] * (len(first) + 2) + [1] * (len(second) + 1)
    pad = max_len - len(ids)
    return ids + [PAD_ID] * pad, [1] * len(ids) + [0] * pad, segments + [0] * pad


def specials_mask(ids: Sequence[int]) -> list[bool]:
    """True at structural positions. ``[UNK]`` marks a real (OOV) token."""
    return [i in (PAD_ID, CLS_ID, SEP_ID, MASK_ID) for i in ids]
