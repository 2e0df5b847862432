import struct

import pytest
import torch

from ptner import checkpoint, synthetic
from ptner.encoder import init_params
from ptner.trainer import PretrainHeads, TrainConfig, assemble_tagger, finetune, predict_tags


@pytest.fixture(scope="module")
def trained(toy_corpus, toy_vocab, toy_config):
    model = assemble_tagger(toy_config, synthetic.TAGSET, seed=0)
    finetune(model, toy_corpus[:8], TrainConfig(epochs=2, learning_rate=1e-3, batch_size=4, max_len=64), toy_vocab)
    model.eval()
    return model


def test_round_trip_predictions(trained, toy_vocab, toy_corpus, tmp_path):
    path = tmp_path / "m.ckpt"
    checkpoint.save(path, toy_vocab, tagger=trained)
    ck = checkpoint.load(path)
    assert ck.kind == "tagger" and ck.vocab == toy_vocab and ck.tagset == synthetic.TAGSET
    for (n1, a), (n2, b) in zip(trained.named_arrays(), ck.tagger.named_arrays()):
        assert n1 == n2 and torch.equal(a, b)
    for s in toy_corpus[:10]:
        assert predict_tags(ck.tagger, s.tokens, ck.vocab) == predict_tags(trained, s.tokens, toy_vocab)
    assert checkpoint.to_bytes(ck.vocab, tagger=ck.tagger) == path.read_bytes()


def test_bytes_deterministic_and_prefix(trained, toy_vocab):
    a = checkpoint.to_bytes(toy_vocab, tagger=trained)
    assert a == checkpoint.to_bytes(toy_vocab, tagger=trained)
    magic, version, n = struct.unpack_from("<8sIQ", a)
    assert magic == b"PTNERCKP" and version == 1
    expected = sum(p.numel() for _, p in trained.named_arrays()) * 8
    assert len(a) == 20 + n + expected


def test_encoder_with_heads(toy_config, toy_vocab, tmp_path):
    enc, heads = init_params(toy_config, 0), PretrainHeads(toy_config, 0)
    path = tmp_path / "e.ckpt"
    checkpoint.save(path, toy_vocab, encoder=enc, heads=heads)
    ck = checkpoint.load(path)
    assert ck.kind == "encoder" and ck.tagger is None
    assert torch.equal(ck.heads.mlm_w, heads.mlm_w)
    assert torch.equal(ck.encoder.layers[1].ffn_out_w, enc.layers[1].ffn_out_w)
    header = checkpoint.read_header(path)
    assert header["arrays"][-1]["name"] == "heads.nsp.bias"


def test_argument_errors(trained, toy_vocab, toy_config):
    with pytest.raises(ValueError):
        checkpoint.to_bytes(toy_vocab)
    with pytest.raises(ValueError):
        checkpoint.to_bytes(toy_vocab, tagger=trained, encoder=trained.encoder)


def test_corrupt_inputs(trained, toy_vocab):
    data = checkpoint.to_bytes(toy_vocab, tagger=trained)
    with pytest.raises(checkpoint.CheckpointError, match="magic"):
        checkpoint.from_bytes(b"XXXXXXXX" + data[8:])
    with pytest.raises(checkpoint.CheckpointError, match="version"):
        checkpoint.from_bytes(data[:8] + struct.pack("<I", 9) + data[12:])
    with pytest.raises(checkpoint.CheckpointError, match="truncated"):
        checkpoint.from_bytes(data[:-8])
    with pytest.raises(checkpoint.CheckpointError, match="trailing"):
        checkpoint.from_bytes(data + b"\0" * 8)
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.from_bytes(data[:10])
