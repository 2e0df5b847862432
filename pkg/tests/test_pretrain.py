import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ptner.corpus import CLS_ID, MASK_ID, PAD_ID, SEP_ID
from ptner.pretrain import (
    KEEP_ACTION,
    MASK_ACTION,
    RANDOM_ACTION,
    DialogueExample,
    MaskPlan,
    NoMaskablePositionError,
    SpanLexicon,
    make_dlm_samples,
    make_nsp_pairs,
    mask_budget,
    match_spans,
    plan_dynamic_mask,
    plan_span_mask,
    plan_static_mask,
    read_documents,
)

import oracles

V = 60


def sequence(n, rng=None, pad=0):
    rng = rng or np.random.default_rng(0)
    ids = [CLS_ID] + rng.integers(5, V, size=n).tolist() + [SEP_ID] + [PAD_ID] * pad
    return ids, [i in (CLS_ID, SEP_ID, PAD_ID) for i in ids]


def test_static_budget_is_fifteen_percent():
    ids, sp = sequence(100)
    plan = plan_static_mask(ids, sp, 0.15, seed=3, vocab_size=V)
    assert len(plan.actions) == 15
    assert plan.epoch == 0


def test_mask_budget_rounding():
    assert mask_budget(0.15, 100) == 15
    assert mask_budget(0.15, 10) == 2  # 1.5 rounds half up
    assert mask_budget(0.15, 3) == 1  # minimum one


def test_static_deterministic():
    ids, sp = sequence(40)
    a = plan_static_mask(ids, sp, 0.15, seed=9, vocab_size=V)
    b = plan_static_mask(ids, sp, 0.15, seed=9, vocab_size=V)
    assert a == b


def test_specials_never_selected():
    ids, sp = sequence(10, pad=5)
    special = {i for i, s in enumerate(sp) if s}
    for seed in range(1000):
        plan = plan_static_mask(ids, sp, 0.5, seed=seed, vocab_size=V)
        assert not special & set(plan.positions)


def test_no_maskable_position():
    with pytest.raises(NoMaskablePositionError):
        plan_static_mask([CLS_ID, SEP_ID], [True, True], 0.15, seed=0, vocab_size=V)
    with pytest.raises(ValueError):
        plan_static_mask([CLS_ID, 9, SEP_ID], [True, False, True], 1.5, seed=0, vocab_size=V)


def test_dynamic_determinism_and_epochs():
    ids, sp = sequence(100)
    a = plan_dynamic_mask(ids, sp, 0.15, 7, 0, vocab_size=V)
    assert a == plan_dynamic_mask(ids, sp, 0.15, 7, 0, vocab_size=V)
    b = plan_dynamic_mask(ids, sp, 0.15, 7, 1, vocab_size=V)
    assert a.positions != b.positions
    assert len(a.actions) == len(b.actions) == 15
    assert b.epoch == 1


def test_dynamic_epoch_zero_is_the_static_plan():
    ids, sp = sequence(30)
    s = plan_static_mask(ids, sp, 0.15, 4, vocab_size=V)
    d = plan_dynamic_mask(ids, sp, 0.15, 4, 0, vocab_size=V)
    assert s.actions == d.actions and s.labels == d.labels


@given(st.integers(1, 80), st.integers(0, 2**31), st.integers(0, 5), st.sampled_from(["static", "dynamic"]))
def test_plan_invariants(n, seed, epoch, kind):
    ids, sp = sequence(n, np.random.default_rng(seed), pad=3)
    if kind == "static":
        plan = plan_static_mask(ids, sp, 0.15, seed, vocab_size=V)
    else:
        plan = plan_dynamic_mask(ids, sp, 0.15, seed, epoch, vocab_size=V)
    _check_plan(plan, ids, sp)


def _check_plan(plan: MaskPlan, ids, sp):
    pos = plan.positions
    assert pos == sorted(set(pos))
    assert not any(sp[p] for p in pos)
    assert [p for p, _ in plan.labels] == pos
    assert all(ids[p] == o for p, o in plan.labels)
    masked = plan.apply(ids)
    assert plan.revert(masked) == list(ids)
    for a in plan.actions:
        if a.action == MASK_ACTION:
            assert masked[a.pos] == MASK_ID
        elif a.action == RANDOM_ACTION:
            assert 5 <= a.replacement_id < V and masked[a.pos] == a.replacement_id
        else:
            assert a.action == KEEP_ACTION and masked[a.pos] == ids[a.pos]
    assert MaskPlan.from_json(plan.to_json()) == plan


def test_match_spans_longest_first():
    lex = SpanLexicon(["南京市", "市长", "南京"])
    assert match_spans(list("南京市长"), lex) == [(0, 3)]
    assert match_spans(list("市长在南京"), lex) == [(0, 2), (3, 5)]
    assert match_spans(list("他说"), lex) == []


def test_match_spans_skip_specials():
    lex = SpanLexicon(["北京"])
    toks = ["[CLS]", "北", "京", "[SEP]"]
    assert match_spans(toks, lex, [True, False, False, True]) == [(1, 3)]


def test_lexicon_rejects_single_chars():
    with pytest.raises(ValueError):
        SpanLexicon(["北"])
    assert len(SpanLexicon.from_text("北京\n\n上海\n")) == 2


def _surface(text):
    return ["[CLS]", *text, "[SEP]"]


def test_span_mask_keeps_units_whole():
    text = "我们在北京见了王伟"
    toks = _surface(text)
    ids = [CLS_ID] + [10 + i for i in range(len(text))] + [SEP_ID]
    sp = [t.startswith("[") for t in toks]
    lex = SpanLexicon(["北京", "王伟"])
    hit = 0
    for seed in range(200):
        plan = plan_span_mask(ids, sp, toks, lex, 0.3, seed, vocab_size=V)
        _check_plan(plan, ids, sp)
        pos = set(plan.positions)
        for s, e in [(4, 6), (8, 10)]:
            inside = {p in pos for p in range(s, e)}
            assert len(inside) == 1  # never split
        hit += {4, 5} <= pos
        acts = {a.pos: a.action for a in plan.actions}
        if {4, 5} <= pos:
            assert acts[4] == acts[5]  # one action per span
    assert hit > 0


def test_span_mask_empty_lexicon_equals_static():
    ids, sp = sequence(50)
    toks = ["[CLS]"] + ["字"] * 50 + ["[SEP]"]
    for seed in range(20):
        a = plan_span_mask(ids, sp, toks, SpanLexicon(), 0.15, seed, vocab_size=V)
        b = plan_static_mask(ids, sp, 0.15, seed, vocab_size=V)
        assert a.actions == b.actions and a.labels == b.labels


def test_span_mask_overshoots_by_at_most_one_span():
    # every character is covered by a 3-character span: budget 2 forces one span
    text = "南京市南京市南京市南京市"
    toks = _surface(text)
    ids = [CLS_ID] + [20] * len(text) + [SEP_ID]
    sp = [t.startswith("[") for t in toks]
    plan = plan_span_mask(ids, sp, toks, SpanLexicon(["南京市"]), 0.15, 1, vocab_size=V)
    assert len(plan.actions) == 3


def _docs(n_docs, n_sents, rng):
    return [
        [tuple(f"d{d}s{s}") for s in range(int(rng.integers(1, n_sents + 1)))]
        for d in range(n_docs)
    ]


def test_nsp_positive_pairs_are_adjacent():
    rng = np.random.default_rng(0)
    docs = _docs(6, 5, rng)
    docs[0] = [tuple("d0s0"), tuple("d0s1")]
    pairs = make_nsp_pairs(docs, 500, seed=1)
    for p in pairs:
        a, b = "".join(p.segment_a), "".join(p.segment_b)
        same_doc = a.split("s")[0] == b.split("s")[0]
        if p.is_next:
            assert same_doc and int(b.split("s")[1]) == int(a.split("s")[1]) + 1
        else:
            assert not same_doc


def test_nsp_balance():
    docs = _docs(20, 6, np.random.default_rng(1))
    docs[0] = [tuple("ab"), tuple("cd")]
    pairs = make_nsp_pairs(docs, 10000, seed=5)
    lo, hi = oracles.binomial_3sigma(10000)
    assert (lo, hi) == pytest.approx((0.485, 0.515))
    assert lo <= np.mean([p.is_next for p in pairs]) <= hi


def test_nsp_reproducible_minimal_corpus():
    docs = [[tuple("甲乙"), tuple("丙丁")], [tuple("戊")]]
    assert make_nsp_pairs(docs, 50, seed=3) == make_nsp_pairs(docs, 50, seed=3)
    with pytest.raises(ValueError):
        make_nsp_pairs([[tuple("a"), tuple("b")]], 5, seed=0)
    with pytest.raises(ValueError):
        make_nsp_pairs([[tuple("a")], [tuple("b")]], 5, seed=0)


def _dialogues(n, rng):
    return [[tuple(f"d{d}t{t}") for t in range(int(rng.integers(2, 5)))] for d in range(n)]


def test_dlm_real_and_fake():
    dialogues = _dialogues(10, np.random.default_rng(2))
    samples = make_dlm_samples(dialogues, seed=4)
    assert len(samples) == 10
    for original, s in zip(dialogues, samples):
        if s.is_real:
            assert s.turns == tuple(original) and s.replaced_turn is None
        else:
            diff = [i for i, (a, b) in enumerate(zip(original, s.turns)) if a != b]
            assert diff == [s.replaced_turn]


def test_dlm_balance():
    samples = make_dlm_samples(_dialogues(30, np.random.default_rng(3)), seed=1, n=10000)
    lo, hi = oracles.binomial_3sigma(10000)
    assert lo <= np.mean([s.is_real for s in samples]) <= hi


def test_dlm_errors():
    with pytest.raises(ValueError):
        make_dlm_samples([[tuple("a"), tuple("b")]], seed=0)
    with pytest.raises(ValueError):
        DialogueExample((tuple("a"),), True)
    with pytest.raises(ValueError):
        DialogueExample((tuple("a"), tuple("b")), False, None)


def test_read_documents():
    assert read_documents("ab\ncd\n\n\nef\n") == [[tuple("ab"), tuple("cd")], [tuple("ef")]]
