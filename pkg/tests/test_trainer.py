import math

import numpy as np
import pytest
import torch

from ptner import synthetic
from ptner.corpus import TagSet, TaggedSentence, build_vocab, check_transitions
from ptner.encoder import init_params, preset
from ptner.pretrain import read_documents
from ptner.trainer import (
    PretrainHeads,
    TrainConfig,
    TrainingError,
    assemble_tagger,
    build_mlm_examples,
    build_nsp_examples,
    finetune,
    format_log_line,
    grad_check,
    make_optimizer,
    predict_tags,
    pretrain,
    pretrain_step,
)


def test_defaults():
    cfg = TrainConfig()
    assert (cfg.epochs, cfg.learning_rate, cfg.batch_size) == (2, 5e-5, 16)
    assert cfg.clip_norm == 1.0 and cfg.weight_decay == 0.0
    with pytest.raises(ValueError):
        TrainConfig(objective="lm")
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)


def test_log_line_format():
    assert format_log_line(3, 1, 0.5) == "step=3 epoch=1 loss=0.500000"


def test_assemble_shapes_and_init(toy_config):
    model = assemble_tagger(toy_config, TagSet(("PER",)), seed=0)
    assert model.proj_w.shape == (32, 3)
    for t in (model.crf_transitions, model.crf_start, model.crf_end):
        assert torch.all(t == 0)
    again = assemble_tagger(toy_config, TagSet(("PER",)), seed=0)
    for (n1, a), (n2, b) in zip(model.named_arrays(), again.named_arrays()):
        assert n1 == n2 and torch.equal(a, b)
    names = [n for n, _ in model.named_arrays()]
    assert names[-5:] == [
        "projection.weight", "projection.bias", "crf.transitions", "crf.start", "crf.end",
    ]  # fmt: skip


def _small(toy_corpus, n=24):
    return toy_corpus[:n]


def test_finetune_loss_decreases_and_is_deterministic(toy_corpus, toy_vocab, toy_config):
    data = _small(toy_corpus)
    before = [s.tokens for s in data]
    cfg = TrainConfig(epochs=30, learning_rate=1e-3, batch_size=8, max_len=64)
    runs = []
    for _ in range(2):
        model = assemble_tagger(toy_config, synthetic.TAGSET, seed=0)
        runs.append(finetune(model, data, cfg, toy_vocab))
    assert runs[0].step_losses == runs[1].step_losses
    assert runs[0].epoch_losses[-1] < 0.5 * runs[0].epoch_losses[0]
    assert [s.tokens for s in data] == before


def test_finetune_on_log_and_length_errors(toy_corpus, toy_vocab, toy_config):
    lines = []
    model = assemble_tagger(toy_config, synthetic.TAGSET, seed=0)
    finetune(model, _small(toy_corpus, 8), TrainConfig(epochs=1, batch_size=4, max_len=64), toy_vocab, lines.append)
    assert len(lines) == 2 and lines[0].startswith("step=0 epoch=0 loss=")
    with pytest.raises(ValueError):
        finetune(model, [], TrainConfig(max_len=64), toy_vocab)
    with pytest.raises(ValueError):
        finetune(model, _small(toy_corpus, 4), TrainConfig(max_len=5), toy_vocab)


def test_freeze_encoder_only_moves_head(toy_corpus, toy_vocab, toy_config):
    model = assemble_tagger(toy_config, synthetic.TAGSET, seed=0)
    emb = model.encoder.token_emb.detach().clone()
    proj = model.proj_w.detach().clone()
    cfg = TrainConfig(epochs=1, learning_rate=1e-2, batch_size=4, max_len=64, freeze_encoder=True)
    finetune(model, _small(toy_corpus, 8), cfg, toy_vocab)
    assert torch.equal(emb, model.encoder.token_emb)
    assert not torch.equal(proj, model.proj_w)


def test_predictions_are_valid_bio(toy_vocab, toy_config):
    ts = TagSet(("PER", "LOC", "ORG"))
    for seed in range(20):
        model = assemble_tagger(toy_config, ts, seed=seed)
        with torch.no_grad():
            model.crf_transitions.normal_(0, 3, generator=torch.Generator().manual_seed(seed))
        tags = predict_tags(model, list("王伟在北京的家里"), toy_vocab)
        assert len(tags) == 8 and check_transitions(tags, ts) == []
    assert len(predict_tags(model, ["王"], toy_vocab)) == 1


def test_full_toy_run_loss_falls(overfit_run):
    _, history, _ = overfit_run
    assert len(history.epoch_losses) == 30 and len(history.step_losses) == 30 * 13
    assert history.epoch_losses[-1] < history.epoch_losses[0]


def test_overfit_model_recovers_gold(overfit_run, toy_corpus, toy_vocab):
    model, _, _ = overfit_run
    sentence = toy_corpus[0]
    assert predict_tags(model, sentence.tokens, toy_vocab) == list(sentence.tags)
    hits = sum(predict_tags(model, s.tokens, toy_vocab) == list(s.tags) for s in toy_corpus)
    assert hits >= 190


def test_non_finite_loss_names_step(toy_corpus, toy_vocab, toy_config):
    model = assemble_tagger(toy_config, synthetic.TAGSET, seed=0)
    with torch.no_grad():
        model.proj_b.fill_(float("nan"))
    with pytest.raises(TrainingError, match="step 0"):
        finetune(model, _small(toy_corpus, 4), TrainConfig(epochs=1, max_len=64), toy_vocab)


def test_predict_length_overflow(toy_vocab, toy_config):
    model = assemble_tagger(toy_config, synthetic.TAGSET, seed=0)
    with pytest.raises(ValueError):
        predict_tags(model, ["王"] * toy_config.max_position, toy_vocab)


@pytest.fixture(scope="module")
def gc_setup(toy_vocab, toy_config):
    model = assemble_tagger(toy_config, synthetic.TAGSET, seed=0)
    with torch.no_grad():
        g = torch.Generator().manual_seed(1)
        for t in (model.crf_transitions, model.crf_start, model.crf_end):
            t.normal_(0, 0.5, generator=g)
    example = TaggedSentence("王伟去北京", ["B-PER", "I-PER", "O", "B-LOC", "I-LOC"])
    return model, example


def test_grad_check_full_model(gc_setup, toy_vocab):
    model, example = gc_setup
    report = grad_check(model, example, 1e-5, toy_vocab, num_params=60)
    assert len(report.checked) == 60
    assert {c[0].split(".")[0] for c in report.checked} == {"encoder", "projection", "crf"}
    assert report.max_rel_error < 1e-4
    # the floor must not be doing all the work
    above = sum(max(abs(a), abs(n)) > 1e-4 for _, _, a, n in report.checked)
    assert above >= 30


def test_grad_check_crf_only(gc_setup, toy_vocab):
    model, example = gc_setup
    report = grad_check(model, example, 1e-5, toy_vocab, num_params=30, groups=("crf",))
    assert report.max_rel_error < 1e-6


def test_grad_check_flat_direction(gc_setup, toy_vocab):
    model, example = gc_setup
    unused = toy_vocab.id("的")
    assert unused not in toy_vocab.encode(example.tokens)
    H = model.config.hidden_size
    report = grad_check(model, example, 1e-5, toy_vocab, coords=[("encoder.token_emb", unused * H + 3)])
    assert report.max_abs_error < 1e-9
    with pytest.raises(ValueError):
        grad_check(model, example, 0.0, toy_vocab)


# pre-training


@pytest.fixture(scope="module")
def pre_setup(toy_corpus, toy_vocab, toy_config):
    sentences = [s.tokens for s in toy_corpus[:20]]
    return sentences, toy_vocab, toy_config


def test_untrained_mlm_loss_near_uniform(pre_setup):
    sentences, vocab, config = pre_setup
    enc = init_params(config, 0)
    heads = PretrainHeads(config, 0)
    batch = build_mlm_examples(sentences, vocab, strategy="static", epoch=0, seed=0)
    out = pretrain_step(enc, heads, batch, "mlm")
    assert abs(out.mlm - math.log(len(vocab))) < 0.5
    assert out.nsp is None


def test_mlm_nsp_label_checks(pre_setup):
    sentences, vocab, config = pre_setup
    enc, heads = init_params(config, 0), PretrainHeads(config, 0)
    mlm_batch = build_mlm_examples(sentences[:4], vocab, strategy="static", epoch=0, seed=0)
    with pytest.raises(ValueError):
        pretrain_step(enc, heads, mlm_batch, "mlm_nsp")
    docs = [[tuple(s) for s in sentences[:10]], [tuple(s) for s in sentences[10:]]]
    nsp_batch = build_nsp_examples(docs, vocab, n=6, strategy="static", epoch=0, seed=0)
    out = pretrain_step(enc, heads, nsp_batch, "mlm_nsp")
    assert out.nsp is not None and abs(out.nsp - math.log(2)) < 0.3
    with pytest.raises(ValueError):
        pretrain_step(enc, heads, nsp_batch, "mlm")


def test_pretrain_step_without_optimizer_is_pure(pre_setup):
    sentences, vocab, config = pre_setup
    enc, heads = init_params(config, 0), PretrainHeads(config, 0)
    batch = build_mlm_examples(sentences, vocab, strategy="static", epoch=0, seed=0)
    a = pretrain_step(enc, heads, batch, "mlm")
    b = pretrain_step(enc, heads, batch, "mlm")
    assert a == b
    opt = make_optimizer(list(enc.parameters()) + list(heads.parameters()), TrainConfig(learning_rate=1e-3))
    pretrain_step(enc, heads, batch, "mlm", opt)
    assert pretrain_step(enc, heads, batch, "mlm").mlm != a.mlm


def test_pretrain_mlm_decreases(pre_setup):
    # 20 sentences, full batch: 50 epochs are 50 steps
    sentences, vocab, config = pre_setup
    enc, heads = init_params(config, 0), PretrainHeads(config, 0)
    cfg = TrainConfig(epochs=50, learning_rate=1e-3, batch_size=20, objective="mlm")
    hist = pretrain(enc, heads, vocab, [sentences], cfg, strategy="dynamic")
    assert len(hist.step_losses) == 50 and hist.step_nsp_losses == []
    assert np.mean(hist.step_losses[-10:]) < np.mean(hist.step_losses[:10])


def test_pretrain_mlm_nsp_records_both(pre_setup):
    sentences, vocab, config = pre_setup
    docs = read_documents("\n".join("".join(s) for s in sentences[:10]) + "\n\n" + "\n".join("".join(s) for s in sentences[10:]))
    enc, heads = init_params(config, 0), PretrainHeads(config, 0)
    cfg = TrainConfig(epochs=2, learning_rate=1e-3, batch_size=10, objective="mlm_nsp")
    hist = pretrain(enc, heads, vocab, docs, cfg, strategy="static")
    assert len(hist.step_nsp_losses) == len(hist.step_losses) == 4
    with pytest.raises(ValueError):
        pretrain(enc, heads, vocab, docs, TrainConfig(objective="finetune_ner"))


def test_build_vocab_covers_synthetic(toy_corpus):
    assert build_vocab(toy_corpus).id("王") > 4
