"""Binary checkpoint container (layout in docs/checkpoint-format.md).

    magic      8 bytes   b"PTNERCKP"
    version    uint32 LE
    header_len uint64 LE
    header     header_len bytes of UTF-8 JSON (sorted keys, compact)
    arrays     float64 LE, C order, concatenated in header["arrays"] order
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np
import torch

from .corpus import TagSet, Vocab
from .encoder import EncoderConfig, Encoder
from .trainer import PretrainHeads, TaggerModel

MAGIC = b"PTNERCKP"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    kind: str  # "tagger" or "encoder"
    config: EncoderConfig
    vocab: Vocab
    tagger: TaggerModel | None = None
    encoder: Encoder | None = None
    heads: PretrainHeads | None = None
    tagset: TagSet | None = None


def _arrays(encoder, tagger, heads):
    if tagger is not None:
        yield from tagger.named_arrays()
    else:
        yield from encoder.named_arrays()
    if heads is not None:
        yield from heads.named_arrays()


def to_bytes(
    vocab: Vocab,
    *,
    tagger: TaggerModel | None = None,
    encoder: Encoder | None = None,
    heads: PretrainHeads | None = None,
) -> bytes:
    if (tagger is None) == (encoder is None):
        raise ValueError("pass exactly one of tagger or encoder")
    config = tagger.config if tagger is not None else encoder.config
    if config.vocab_size != len(vocab):
        raise ValueError("vocabulary size does not match the encoder config")
    arrays = [(n, p.detach().numpy()) for n, p in _arrays(encoder, tagger, heads)]
    header = {
        "format": "ptner-checkpoint",
        "format_version": FORMAT_VERSION,
        "kind": "tagger" if tagger is not None else "encoder",
        "encoder_config": config.to_dict(),
        "entity_types": list(tagger.tagset.entity_types) if tagger is not None else [],
        "tags": list(tagger.tagset.tags) if tagger is not None else [],
        "vocab": vocab.itos,
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
    }
    head = json.dumps(header, ensure_ascii=False, sort_keys=True, separators=(",", ":"))
    head_bytes = head.encode("utf-8")
    parts = [_PREFIX.pack(MAGIC, FORMAT_VERSION, len(head_bytes)), head_bytes]
    parts += [np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays]
    return b"".join(parts)


def save(path, vocab: Vocab, **models) -> None:
    data = to_bytes(vocab, **models)
    with open(path, "wb") as f:
        f.write(data)


def from_bytes(data: bytes) -> Checkpoint:
    if len(data) < _PREFIX.size:
        raise CheckpointError("truncated checkpoint")
    magic, version, n = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError("not a ptner checkpoint (bad magic)")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(data[_PREFIX.size : _PREFIX.size + n].decode("utf-8"))
    offset = _PREFIX.size + n

    config = EncoderConfig(**header["encoder_config"])
    vocab = Vocab(header["vocab"])
    kind = header["kind"]
    names = [a["name"] for a in header["arrays"]]
    tagger = encoder = heads = tagset = None
    if kind == "tagger":
        tagset = TagSet(tuple(header["entity_types"]))
        if list(tagset.tags) != header["tags"]:
            raise CheckpointError("tag inventory does not match entity types")
        tagger = TaggerModel(Encoder(config), tagset)
        encoder = tagger.encoder
    elif kind == "encoder":
        encoder = Encoder(config)
    else:
        raise CheckpointError(f"unknown checkpoint kind {kind!r}")
    if any(n.startswith("heads.") for n in names):
        heads = PretrainHeads(config)

    targets = dict(_arrays(encoder if tagger is None else None, tagger, heads))
    if list(targets) != names:
        raise CheckpointError("array list does not match the documented order")
    with torch.no_grad():
        for entry in header["arrays"]:
            param = targets[entry["name"]]
            shape = tuple(entry["shape"])
            if tuple(param.shape) != shape:
                raise CheckpointError(f"{entry['name']}: shape {shape}, expected {tuple(param.shape)}")
            count = int(np.prod(shape, dtype=np.int64))
            end = offset + 8 * count
            if end > len(data):
                raise CheckpointError("truncated array data")
            arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape)
            param.copy_(torch.from_numpy(arr.astype(np.float64)))
            offset = end
    if offset != len(data):
        raise CheckpointError("trailing bytes after array data")
    for m in (tagger, encoder, heads):
        if m is not None:
            m.eval()
    return Checkpoint(kind, config, vocab, tagger, encoder, heads, tagset)


def load(path) -> Checkpoint:
    with open(path, "rb") as f:
        return from_bytes(f.read())


def read_header(path) -> dict:
    with open(path, "rb") as f:
        prefix = f.read(_PREFIX.size)
        magic, _, n = _PREFIX.unpack(prefix)
        if magic != MAGIC:
            raise CheckpointError("not a ptner checkpoint (bad magic)")
        return json.loads(f.read(n).decode("utf-8"))
