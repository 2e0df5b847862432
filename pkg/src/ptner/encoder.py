"""A small bidirectional transformer encoder in float64.

Post-layer-norm blocks, GELU feed-forward, learned absolute position and
segment embeddings.  Weights are stored input-major (``y = x @ W + b``).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import torch
from torch import nn
from torch.nn import functional as F

DTYPE = torch.float64
INIT_STD = 0.02
LN_EPS = 1e-12


@dataclass(frozen=True)
class EncoderConfig:
    num_layers: int
    hidden_size: int
    num_heads: int
    ffn_size: int | None = None  # defaults to 4 * hidden_size
    max_position: int = 128
    vocab_size: int = 64
    num_segments: int = 2
    dropout_rate: float = 0.0

    def __post_init__(self):
        if self.ffn_size is None:
            object.__setattr__(self, "ffn_size", 4 * self.hidden_size)
        if self.num_layers < 1 or self.num_heads < 1:
            raise ValueError("num_layers and num_heads must be >= 1")
        if self.hidden_size % self.num_heads:
            raise ValueError(
                f"hidden_size {self.hidden_size} not divisible by num_heads {self.num_heads}"
            )
        if self.ffn_size < self.hidden_size:
            raise ValueError("ffn_size must be >= hidden_size")
        if self.vocab_size < 1 or self.max_position < 1 or self.num_segments < 1:
            raise ValueError("vocab_size, max_position and num_segments must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")

    @property
    def head_size(self) -> int:
        return self.hidden_size // self.num_heads

    def to_dict(self) -> dict:
        return asdict(self)


PRESETS = {
    "bert_base_like": dict(num_layers=12, hidden_size=768, num_heads=12),
    # head count is not published for the tiny model; 16 divides 1024
    "ernie_tiny_like": dict(num_layers=3, hidden_size=1024, num_heads=16),
    "toy": dict(num_layers=2, hidden_size=32, num_heads=2),
}


def preset(name: str, **overrides) -> EncoderConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; valid presets: {', '.join(PRESETS)}")
    return EncoderConfig(**{**PRESETS[name], **overrides})


class LengthError(ValueError):
    pass


def _param(*shape) -> nn.Parameter:
    return nn.Parameter(torch.zeros(*shape, dtype=DTYPE))


class Layer(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        H, F_ = cfg.hidden_size, cfg.ffn_size
        self.query_w, self.query_b = _param(H, H), _param(H)
        self.key_w, self.key_b = _param(H, H), _param(H)
        self.value_w, self.value_b = _param(H, H), _param(H)
        self.out_w, self.out_b = _param(H, H), _param(H)
        self.ln1_gain, self.ln1_bias = _param(H), _param(H)
        self.ffn_in_w, self.ffn_in_b = _param(H, F_), _param(F_)
        self.ffn_out_w, self.ffn_out_b = _param(F_, H), _param(H)
        self.ln2_gain, self.ln2_bias = _param(H), _param(H)


# Per-layer array order used by checkpoints.
LAYER_FIELDS = (
    "query_w", "query_b", "key_w", "key_b", "value_w", "value_b",
    "out_w", "out_b", "ln1_gain", "ln1_bias",
    "ffn_in_w", "ffn_in_b", "ffn_out_w", "ffn_out_b", "ln2_gain", "ln2_bias",
)  # fmt: skip


class Encoder(nn.Module):
    """All learnable encoder weights plus the forward pass."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        H = config.hidden_size
        self.token_emb = _param(config.vocab_size, H)
        self.position_emb = _param(config.max_position, H)
        self.segment_emb = _param(config.num_segments, H)
        self.layers = nn.ModuleList(Layer(config) for _ in range(config.num_layers))

    def named_arrays(self):
        """``(name, parameter)`` pairs in the fixed checkpoint order."""
        yield "encoder.token_emb", self.token_emb
        yield "encoder.position_emb", self.position_emb
        yield "encoder.segment_emb", self.segment_emb
        for i, layer in enumerate(self.layers):
            for f in LAYER_FIELDS:
                yield f"encoder.layers.{i}.{f}", getattr(layer, f)

    def _attention(self, layer: Layer, x, mask):
        # x: (B, T, H); mask: (B, T) with 1 on real keys
        B, T, H = x.shape
        A, d = self.config.num_heads, self.config.head_size

        def heads(w, b):
            return (x @ w + b).view(B, T, A, d).transpose(1, 2)  # (B, A, T, d)

        q = heads(layer.query_w, layer.query_b)
        k = heads(layer.key_w, layer.key_b)
        v = heads(layer.value_w, layer.value_b)
        scores = q @ k.transpose(-1, -2) / math.sqrt(d)
        key_off = (mask == 0)[:, None, None, :]
        scores = scores.masked_fill(key_off, float("-inf"))
        probs = torch.softmax(scores, dim=-1)
        # a query row whose keys are all masked would be NaN; zero it
        probs = probs.masked_fill(key_off, 0.0)
        ctx = (probs @ v).transpose(1, 2).reshape(B, T, H)
        return ctx @ layer.out_w + layer.out_b, probs

    def _dropout(self, x):
        return F.dropout(x, self.config.dropout_rate, self.training)

    def forward(self, ids, segments, mask, return_probs: bool = False):
        """Batched forward: inputs are (B, T) integer tensors; returns (B, T, H)."""
        T = ids.shape[-1]
        if T > self.config.max_position:
            raise LengthError(
                f"sequence length {T} exceeds max_position {self.config.max_position}"
            )
        pos = torch.arange(T)
        x = self.token_emb[ids] + self.position_emb[pos] + self.segment_emb[segments]
        x = self._dropout(x)
        H = self.config.hidden_size
        all_probs = []
        for layer in self.layers:
            attn, probs = self._attention(layer, x, mask)
            all_probs.append(probs)
            x = F.layer_norm(
                x + self._dropout(attn), (H,), layer.ln1_gain, layer.ln1_bias, LN_EPS
            )
            h = F.gelu(x @ layer.ffn_in_w + layer.ffn_in_b)
            h = h @ layer.ffn_out_w + layer.ffn_out_b
            x = F.layer_norm(
                x + self._dropout(h), (H,), layer.ln2_gain, layer.ln2_bias, LN_EPS
            )
        if return_probs:
            return x, all_probs
        return x


def init_params(config: EncoderConfig, seed: int) -> Encoder:
    """Truncated normal (std 0.02, cut at two std) weights, zero biases, unit LN gains."""
    enc = Encoder(config)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in enc.named_arrays():
            if name.endswith("_gain"):
                p.fill_(1.0)
            elif name.endswith(("_b", "_bias")):
                p.zero_()
            else:
                trunc_normal_(p, gen)
    return enc


def trunc_normal_(t: torch.Tensor, gen: torch.Generator, std: float = INIT_STD):
    return nn.init.trunc_normal_(t, mean=0.0, std=std, a=-2 * std, b=2 * std, generator=gen)


def _as_batch(x) -> torch.Tensor:
    return torch.as_tensor(x, dtype=torch.long).reshape(1, -1)


def _check_lengths(ids, segments, mask):
    if not len(ids) == len(segments) == len(mask):
        raise ValueError("ids, segments and mask must have equal length")


def encode(params: Encoder, ids, segments, mask) -> torch.Tensor:
    """Hidden states ``(T, H)`` for one sequence, in inference mode."""
    _check_lengths(ids, segments, mask)
    was_training = params.training
    params.eval()
    try:
        with torch.no_grad():
            out = params(_as_batch(ids), _as_batch(segments), _as_batch(mask))
    finally:
        params.train(was_training)
    return out[0]


def attention_probs(params: Encoder, ids, segments, mask, layer: int, head: int) -> torch.Tensor:
    cfg = params.config
    if not 0 <= layer < cfg.num_layers:
        raise IndexError(f"layer {layer} out of range [0, {cfg.num_layers})")
    if not 0 <= head < cfg.num_heads:
        raise IndexError(f"head {head} out of range [0, {cfg.num_heads})")
    _check_lengths(ids, segments, mask)
    was_training = params.training
    params.eval()
    try:
        with torch.no_grad():
            _, probs = params(
                _as_batch(ids), _as_batch(segments), _as_batch(mask), return_probs=True
            )
    finally:
        params.train(was_training)
    return probs[layer][0, head]


def num_parameters(params: nn.Module) -> int:
    return sum(p.numel() for p in params.parameters())


def with_vocab_size(config: EncoderConfig, vocab_size: int) -> EncoderConfig:
    return replace(config, vocab_size=vocab_size)
