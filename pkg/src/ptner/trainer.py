"""Encoder + FC + CRF tagger, pre-training heads, training loops."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from . import crf
from .corpus import (
    PAD_ID,
    TaggedSentence,
    TagSet,
    Vocab,
    encode_pair,
    encode_sentence,
    specials_mask,
)
from .encoder import DTYPE, Encoder, EncoderConfig, LengthError, init_params, trunc_normal_
from .pretrain import SpanLexicon, make_nsp_pairs, plan_mask
from .seeding import derive_seed, substream

log = logging.getLogger(__name__)

OBJECTIVES = ("finetune_ner", "mlm", "mlm_nsp")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 2
    learning_rate: float = 5e-5
    batch_size: int = 16
    seed: int = 0
    max_len: int = 128
    objective: str = "finetune_ner"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    clip_norm: float | None = 1.0
    freeze_encoder: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")


@dataclass
class TrainHistory:
    step_losses: list[float] = field(default_factory=list)
    epoch_losses: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    step_nsp_losses: list[float] = field(default_factory=list)


def make_optimizer(params: Iterable[nn.Parameter], cfg: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.Adam(
        params,
        lr=cfg.learning_rate,
        betas=(cfg.beta1, cfg.beta2),
        eps=cfg.adam_eps,
        weight_decay=cfg.weight_decay,
    )


def format_log_line(step: int, epoch: int, loss: float) -> str:
    return f"step={step} epoch={epoch} loss={loss:.6f}"


# --------------------------------------------------------------------------
# CRF bridge


class _CrfNll(torch.autograd.Function):
    """Sentence nll whose backward is the forward-backward gradient from :mod:`crf`."""

    @staticmethod
    def forward(ctx, emissions, transitions, start, end, tags):
        p = crf.CrfParams(
            transitions.detach().numpy(), start.detach().numpy(), end.detach().numpy()
        )
        _, g, value = crf.marginals_and_grad(emissions.detach().numpy(), p, tags)
        ctx.save_for_backward(
            *(torch.from_numpy(a) for a in (g.emissions, g.transitions, g.start, g.end))
        )
        return emissions.new_tensor(value)

    @staticmethod
    def backward(ctx, grad_out):
        ge, gt, gs, gn = ctx.saved_tensors
        return grad_out * ge, grad_out * gt, grad_out * gs, grad_out * gn, None


def crf_nll(emissions, transitions, start, end, tags: Sequence[int]) -> torch.Tensor:
    return _CrfNll.apply(emissions, transitions, start, end, list(tags))


# --------------------------------------------------------------------------
# Tagger


class TaggerModel(nn.Module):
    """Encoder, then one affine projection to tag scores, then a linear-chain CRF."""

    def __init__(self, encoder: Encoder, tagset: TagSet):
        super().__init__()
        H, K = encoder.config.hidden_size, len(tagset)
        self.encoder = encoder
        self.tagset = tagset
        self.proj_w = nn.Parameter(torch.zeros(H, K, dtype=DTYPE))
        self.proj_b = nn.Parameter(torch.zeros(K, dtype=DTYPE))
        self.crf_transitions = nn.Parameter(torch.zeros(K, K, dtype=DTYPE))
        self.crf_start = nn.Parameter(torch.zeros(K, dtype=DTYPE))
        self.crf_end = nn.Parameter(torch.zeros(K, dtype=DTYPE))
        self.constraints = crf.bio_constraint_mask(tagset)

    @property
    def config(self) -> EncoderConfig:
        return self.encoder.config

    def named_arrays(self):
        yield from self.encoder.named_arrays()
        yield "projection.weight", self.proj_w
        yield "projection.bias", self.proj_b
        yield "crf.transitions", self.crf_transitions
        yield "crf.start", self.crf_start
        yield "crf.end", self.crf_end

    def crf_params(self) -> crf.CrfParams:
        return crf.CrfParams(
            self.crf_transitions.detach().numpy().copy(),
            self.crf_start.detach().numpy().copy(),
            self.crf_end.detach().numpy().copy(),
        )

    def emissions(self, ids, segments, mask) -> torch.Tensor:
        return self.encoder(ids, segments, mask) @ self.proj_w + self.proj_b

    def sentence_losses(self, batch: "TagBatch") -> list[torch.Tensor]:
        em = self.emissions(batch.ids, batch.segments, batch.mask)
        return [
            crf_nll(
                em[b, 1 : n + 1], self.crf_transitions, self.crf_start, self.crf_end,
                batch.tags[b],
            )  # fmt: skip
            for b, n in enumerate(batch.lengths)
        ]


def assemble_tagger(config: EncoderConfig, tagset: TagSet, seed: int) -> TaggerModel:
    model = TaggerModel(init_params(config, derive_seed(seed, "init", 0)), tagset)
    gen = torch.Generator().manual_seed(derive_seed(seed, "init", 1))
    with torch.no_grad():
        trunc_normal_(model.proj_w, gen)
    return model


@dataclass
class TagBatch:
    ids: torch.Tensor
    segments: torch.Tensor
    mask: torch.Tensor
    lengths: list[int]
    tags: list[list[int]]


def make_tag_batch(
    sentences: Sequence[TaggedSentence], vocab: Vocab, tagset: TagSet, max_len: int
) -> TagBatch:
    longest = max(len(s) for s in sentences)
    if longest + 2 > max_len:
        raise LengthError(f"sentence of length {longest} does not fit max_len={max_len}")
    rows = [encode_sentence(vocab, s, longest + 2) for s in sentences]
    return TagBatch(
        ids=torch.tensor([r[0] for r in rows]),
        segments=torch.tensor([r[2] for r in rows]),
        mask=torch.tensor([r[1] for r in rows]),
        lengths=[len(s) for s in sentences],
        tags=[tagset.encode(s.tags) for s in sentences],
    )


def _step(params, optimizer, loss, clip_norm):
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    if clip_norm is not None:
        nn.utils.clip_grad_norm_(params, clip_norm)
    optimizer.step()


def _check_finite(value: float, step: int):
    if not math.isfinite(value):
        raise TrainingError(f"non-finite loss {value} at step {step}")


def finetune(
    model: TaggerModel,
    data: Sequence[TaggedSentence],
    cfg: TrainConfig,
    vocab: Vocab,
    on_log: Callable[[str], None] | None = None,
) -> TrainHistory:
    """Mini-batch Adam on the mean per-sentence CRF nll, full backpropagation."""
    if not data:
        raise ValueError("no training data")
    too_long = [i for i, s in enumerate(data) if len(s) + 2 > cfg.max_len]
    if too_long:
        raise LengthError(f"sentence {too_long[0]} does not fit max_len={cfg.max_len}")
    if cfg.max_len > model.config.max_position:
        raise LengthError("max_len exceeds the encoder's max_position")

    for p in model.encoder.parameters():
        p.requires_grad_(not cfg.freeze_encoder)
    params = [p for p in model.parameters() if p.requires_grad]
    optimizer = make_optimizer(params, cfg)
    if model.config.dropout_rate > 0:
        torch.manual_seed(derive_seed(cfg.seed, "dropout"))

    history = TrainHistory()
    step = 0
    model.train()
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = substream(cfg.seed, "shuffle", epoch).permutation(len(data))
        losses = []
        for b in range(0, len(order), cfg.batch_size):
            batch = make_tag_batch(
                [data[i] for i in order[b : b + cfg.batch_size]], vocab, model.tagset, cfg.max_len
            )
            loss = torch.stack(model.sentence_losses(batch)).mean()
            value = loss.item()
            _check_finite(value, step)
            _step(params, optimizer, loss, cfg.clip_norm)
            history.step_losses.append(value)
            losses.append(value)
            line = format_log_line(step, epoch, value)
            log.debug(line)
            if on_log is not None:
                on_log(line)
            step += 1
        history.epoch_losses.append(float(np.mean(losses)))
        history.epoch_seconds.append(time.perf_counter() - t0)
    model.eval()
    for p in model.encoder.parameters():
        p.requires_grad_(True)
    return history


def predict_tags(model: TaggerModel, tokens: Sequence[str], vocab: Vocab) -> list[str]:
    """Constrained Viterbi decode; the result always satisfies the BIO rule."""
    n = len(tokens)
    if n == 0:
        return []
    if n + 2 > model.config.max_position:
        raise LengthError(
            f"sentence of length {n} does not fit max_position={model.config.max_position}"
        )
    ids, mask, segs = encode_sentence(vocab, list(tokens), n + 2)
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            em = model.emissions(
                torch.tensor([ids]), torch.tensor([segs]), torch.tensor([mask])
            )[0, 1 : n + 1]
    finally:
        model.train(was_training)
    path, _ = crf.viterbi(em.numpy(), model.crf_params(), model.constraints)
    return model.tagset.decode(path)


# --------------------------------------------------------------------------
# Gradient check


@dataclass
class GradCheckReport:
    max_rel_error: float
    max_abs_error: float
    checked: list[tuple[str, int, float, float]]  # (array, flat index, analytic, numeric)


def sentence_loss(model: TaggerModel, example: TaggedSentence, vocab: Vocab) -> torch.Tensor:
    batch = make_tag_batch([example], vocab, model.tagset, len(example) + 2)
    return model.sentence_losses(batch)[0]


def _sample_coords(model, example, vocab, n, groups, rng):
    arrays = dict(model.named_arrays())
    by_group = {
        g: [k for k in arrays if k.startswith(g)] for g in ("encoder", "projection", "crf")
    }
    groups = [g for g in by_group if g in groups]
    ids = [2] + vocab.encode(example.tokens) + [3]
    coords = []
    for gi, g in enumerate(groups):
        share = n // len(groups) + (gi < n % len(groups))
        names = by_group[g]
        for _ in range(share):
            name = names[rng.integers(len(names))]
            arr = arrays[name]
            if name == "encoder.token_emb":
                row = ids[rng.integers(len(ids))]
                idx = row * arr.shape[1] + int(rng.integers(arr.shape[1]))
            elif name == "encoder.position_emb":
                idx = int(rng.integers(len(ids))) * arr.shape[1] + int(rng.integers(arr.shape[1]))
            elif name == "encoder.segment_emb":
                idx = int(rng.integers(arr.shape[1]))
            else:
                idx = int(rng.integers(arr.numel()))
            coords.append((name, idx))
    return coords


def grad_check(
    model: TaggerModel,
    example: TaggedSentence,
    epsilon: float,
    vocab: Vocab,
    *,
    num_params: int = 60,
    groups: Sequence[str] = ("encoder", "projection", "crf"),
    coords: Sequence[tuple[str, int]] | None = None,
    seed: int = 0,
    floor: float = 1e-4,
) -> GradCheckReport:
    """Autograd gradient of the sentence nll vs central differences.

    Relative error is ``|a - n| / max(|a|, |n|, floor)``.  Below ``floor``
    the measure turns into absolute error scaled by ``1/floor``: a central
    difference cannot resolve gradients much smaller than
    ``ulp(loss) / epsilon`` (about 1e-10 here), so a pure ratio would only
    measure rounding noise there.
    Embedding rows are sampled from the positions the example touches.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    was_training = model.training
    model.eval()
    arrays = dict(model.named_arrays())
    if coords is None:
        coords = _sample_coords(model, example, vocab, num_params, groups, substream(seed, "gradcheck"))

    model.zero_grad(set_to_none=True)
    sentence_loss(model, example, vocab).backward()
    checked = []
    max_rel = max_abs = 0.0
    with torch.no_grad():
        for name, idx in coords:
            arr = arrays[name]
            flat = arr.data.view(-1)
            g = arr.grad.view(-1)[idx].item() if arr.grad is not None else 0.0
            orig = flat[idx].item()
            flat[idx] = orig + epsilon
            up = sentence_loss(model, example, vocab).item()
            flat[idx] = orig - epsilon
            down = sentence_loss(model, example, vocab).item()
            flat[idx] = orig
            num = (up - down) / (2 * epsilon)
            abs_err = abs(g - num)
            rel = abs_err / max(abs(g), abs(num), floor)
            max_rel, max_abs = max(max_rel, rel), max(max_abs, abs_err)
            checked.append((name, idx, g, num))
    model.zero_grad(set_to_none=True)
    model.train(was_training)
    return GradCheckReport(max_rel, max_abs, checked)


# --------------------------------------------------------------------------
# Pre-training


class PretrainHeads(nn.Module):
    def __init__(self, config: EncoderConfig, seed: int = 0):
        super().__init__()
        H, V = config.hidden_size, config.vocab_size
        self.mlm_w = nn.Parameter(torch.zeros(H, V, dtype=DTYPE))
        self.mlm_b = nn.Parameter(torch.zeros(V, dtype=DTYPE))
        self.nsp_w = nn.Parameter(torch.zeros(H, 2, dtype=DTYPE))
        self.nsp_b = nn.Parameter(torch.zeros(2, dtype=DTYPE))
        gen = torch.Generator().manual_seed(derive_seed(seed, "init", 2))
        with torch.no_grad():
            trunc_normal_(self.mlm_w, gen)
            trunc_normal_(self.nsp_w, gen)

    def named_arrays(self):
        yield "heads.mlm.weight", self.mlm_w
        yield "heads.mlm.bias", self.mlm_b
        yield "heads.nsp.weight", self.nsp_w
        yield "heads.nsp.bias", self.nsp_b


@dataclass
class MaskedExample:
    ids: list[int]  # after the mask plan was applied
    segments: list[int]
    mask: list[int]
    label_positions: list[int]
    label_ids: list[int]
    is_next: bool | None = None


@dataclass
class PretrainLosses:
    mlm: float
    nsp: float | None = None


def masked_example(ids, segments, mask, plan, is_next=None) -> MaskedExample:
    return MaskedExample(
        ids=plan.apply(ids),
        segments=list(segments),
        mask=list(mask),
        label_positions=[p for p, _ in plan.labels],
        label_ids=[o for _, o in plan.labels],
        is_next=is_next,
    )


def _pad_batch(batch: Sequence[MaskedExample]):
    T = max(len(ex.ids) for ex in batch)

    def pad(rows, value):
        return torch.tensor([r + [value] * (T - len(r)) for r in rows])

    return (
        pad([ex.ids for ex in batch], PAD_ID),
        pad([ex.segments for ex in batch], 0),
        pad([ex.mask for ex in batch], 0),
    )


def pretrain_losses(
    encoder: Encoder, heads: PretrainHeads, batch: Sequence[MaskedExample], objective: str
) -> tuple[torch.Tensor, torch.Tensor | None]:
    if objective not in ("mlm", "mlm_nsp"):
        raise ValueError(f"pre-training objective must be 'mlm' or 'mlm_nsp', got {objective!r}")
    has_nsp = [ex.is_next is not None for ex in batch]
    if objective == "mlm_nsp" and not all(has_nsp):
        raise ValueError("objective 'mlm_nsp' needs is_next labels on every example")
    if objective == "mlm" and any(has_nsp):
        raise ValueError("objective 'mlm' takes no is_next labels")
    rows = [b for b, ex in enumerate(batch) for _ in ex.label_positions]
    if not rows:
        raise ValueError("batch has no labeled (masked) positions")
    cols = [p for ex in batch for p in ex.label_positions]
    targets = torch.tensor([t for ex in batch for t in ex.label_ids])

    ids, segs, mask = _pad_batch(batch)
    hidden = encoder(ids, segs, mask)
    logits = hidden[rows, cols] @ heads.mlm_w + heads.mlm_b
    mlm = F.cross_entropy(logits, targets)
    if objective == "mlm":
        return mlm, None
    nsp_logits = hidden[:, 0] @ heads.nsp_w + heads.nsp_b
    nsp = F.cross_entropy(nsp_logits, torch.tensor([int(ex.is_next) for ex in batch]))
    return mlm, nsp


def pretrain_step(
    encoder: Encoder,
    heads: PretrainHeads,
    batch: Sequence[MaskedExample],
    objective: str,
    optimizer: torch.optim.Optimizer | None = None,
    clip_norm: float | None = 1.0,
) -> PretrainLosses:
    """Losses for one batch; with an optimizer, also one update on their sum."""
    if optimizer is None:
        with torch.no_grad():
            mlm, nsp = pretrain_losses(encoder, heads, batch, objective)
    else:
        encoder.train()
        mlm, nsp = pretrain_losses(encoder, heads, batch, objective)
        total = mlm if nsp is None else mlm + nsp
        params = [p for g in optimizer.param_groups for p in g["params"]]
        _step(params, optimizer, total, clip_norm)
    return PretrainLosses(mlm.item(), None if nsp is None else nsp.item())


def build_mlm_examples(
    sentences: Sequence[Sequence[str]],
    vocab: Vocab,
    *,
    strategy: str,
    epoch: int,
    seed: int,
    rate: float = 0.15,
    lexicon: SpanLexicon | None = None,
    max_len: int = 128,
) -> list[MaskedExample]:
    out = []
    for i, toks in enumerate(sentences):
        ids, mask, segs = encode_sentence(vocab, list(toks), len(toks) + 2)
        surface = ["[CLS]"] + list(toks) + ["[SEP]"]
        if len(ids) > max_len:
            raise LengthError(f"sentence {i} does not fit max_len={max_len}")
        plan = plan_mask(
            strategy, ids, specials_mask(ids), rate, derive_seed(seed, "mask", i), epoch,
            vocab_size=len(vocab), tokens=surface, lexicon=lexicon, seq_id=i,
        )  # fmt: skip
        out.append(masked_example(ids, segs, mask, plan))
    return out


def build_nsp_examples(
    documents,
    vocab: Vocab,
    *,
    n: int,
    strategy: str,
    epoch: int,
    seed: int,
    rate: float = 0.15,
    lexicon: SpanLexicon | None = None,
    max_len: int = 128,
) -> list[MaskedExample]:
    # static data is built once; dynamic resamples pairs and masks every epoch
    pair_epoch = epoch if strategy == "dynamic" else 0
    pairs = make_nsp_pairs(documents, n, derive_seed(seed, "nsp", pair_epoch))
    out = []
    for i, pair in enumerate(pairs):
        need = len(pair.segment_a) + len(pair.segment_b) + 3
        ids, mask, segs = encode_pair(vocab, pair.segment_a, pair.segment_b, max(need, 1))
        if need > max_len:
            raise LengthError(f"pair {i} does not fit max_len={max_len}")
        surface = ["[CLS]", *pair.segment_a, "[SEP]", *pair.segment_b, "[SEP]"]
        plan = plan_mask(
            strategy, ids, specials_mask(ids), rate, derive_seed(seed, "mask", i, pair_epoch), epoch,
            vocab_size=len(vocab), tokens=surface, lexicon=lexicon, seq_id=i,
        )  # fmt: skip
        out.append(masked_example(ids, segs, mask, plan, is_next=pair.is_next))
    return out


def pretrain(
    encoder: Encoder,
    heads: PretrainHeads,
    vocab: Vocab,
    documents: Sequence[Sequence[Sequence[str]]],
    cfg: TrainConfig,
    *,
    strategy: str = "dynamic",
    rate: float = 0.15,
    lexicon: SpanLexicon | None = None,
    on_log: Callable[[str], None] | None = None,
) -> TrainHistory:
    """Desk-scale MLM (``cfg.objective='mlm'``) or MLM+NSP pre-training.

    Static masking builds the examples once; dynamic masking rebuilds them
    every epoch.  With ``mlm_nsp`` each epoch draws one pair per sentence.
    """
    if cfg.objective not in ("mlm", "mlm_nsp"):
        raise ValueError("pretrain needs objective 'mlm' or 'mlm_nsp'")
    sentences = [s for doc in documents for s in doc]
    if not sentences:
        raise ValueError("no pre-training text")
    params = list(encoder.parameters()) + list(heads.parameters())
    optimizer = make_optimizer(params, cfg)
    history = TrainHistory()
    cached = None
    step = 0
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        if cached is None or strategy == "dynamic":
            kw = dict(strategy=strategy, epoch=epoch, seed=cfg.seed, rate=rate,
                      lexicon=lexicon, max_len=cfg.max_len)  # fmt: skip
            if cfg.objective == "mlm":
                cached = build_mlm_examples(sentences, vocab, **kw)
            else:
                cached = build_nsp_examples(documents, vocab, n=len(sentences), **kw)
        order = substream(cfg.seed, "shuffle", epoch).permutation(len(cached))
        losses = []
        for b in range(0, len(order), cfg.batch_size):
            batch = [cached[i] for i in order[b : b + cfg.batch_size]]
            out = pretrain_step(encoder, heads, batch, cfg.objective, optimizer, cfg.clip_norm)
            total = out.mlm + (out.nsp or 0.0)
            _check_finite(total, step)
            history.step_losses.append(out.mlm)
            if out.nsp is not None:
                history.step_nsp_losses.append(out.nsp)
            losses.append(out.mlm)
            line = format_log_line(step, epoch, total)
            log.debug(line)
            if on_log is not None:
                on_log(line)
            step += 1
        history.epoch_losses.append(float(np.mean(losses)))
        history.epoch_seconds.append(time.perf_counter() - t0)
    encoder.eval()
    return history
