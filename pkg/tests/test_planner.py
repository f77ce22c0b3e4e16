import math

import numpy as np
import pytest
import torch

from planfill.config import derive_seed
from planfill.nnet import ForwardTrace, ModelConfig, OptimizerState, build_model, run_training
from planfill.planner import (
    MAX_PLAN_TOKENS,
    MAX_POSITION,
    POSITION_LOSS_WEIGHT,
    ContentPlan,
    KeyphraseSet,
    PlanExample,
    extract_oracle_plan,
    planner_batch_loss,
    planner_input_ids,
    planner_loss,
    predict_plan,
)
from planfill.pipeline import encode_docs, train_planner
from planfill.vocab import BOK_ID, EOS_ID, SEN_ID, SEP_ID

from conftest import small_config


# -- oracle plan extraction ---------------------------------------------------

def by_words(vocab_words):
    return {w: i + 8 for i, w in enumerate(vocab_words)}


def test_oracle_plan_fixture():
    ids = by_words(["the", "tax", "cut", "failed", ".", "voters", "agreed"])
    sents = [
        [ids[w] for w in ["the", "tax", "cut", "failed", "."]],
        [ids[w] for w in ["voters", "agreed"]],
    ]
    kp = KeyphraseSet([(ids["tax"], ids["cut"]), (ids["voters"],)])
    plan = extract_oracle_plan(sents, kp)
    assert plan.assignment == [ids["tax"], ids["cut"], SEN_ID, ids["voters"], SEN_ID, EOS_ID]
    assert plan.positions == [1, 2, 5, 0, 2, 0]
    assert plan.phrase_lens == [2, 1]


def test_oracle_plan_phrase_at_sentence_start():
    sents = [[10, 11, 12, 13]]
    plan = extract_oracle_plan(sents, KeyphraseSet([(10, 11)]))
    assert plan.positions[0] == 0


def test_oracle_plan_position_clamp():
    sent = list(range(8, 8 + 300))
    plan = extract_oracle_plan([sent], KeyphraseSet([(sent[0],)]))
    # SEN carries min(sentence length, 127)
    assert plan.positions[plan.assignment.index(SEN_ID)] == 127


def test_oracle_plan_missing_phrase():
    with pytest.raises(ValueError, match="not found"):
        extract_oracle_plan([[10, 11]], KeyphraseSet([(99,)]))


def test_oracle_plan_orders_by_first_occurrence():
    sents = [[20, 10, 11, 21], [30, 31]]
    kp = KeyphraseSet([(30,), (10, 11), (20,)])  # canonical order != occurrence
    plan = extract_oracle_plan(sents, kp)
    assert plan.phrases() == [(20,), (10, 11), (30,)]
    assert [s.length for s in plan.sentences()] == [4, 2]


def test_plan_sentence_view_round_trip(tiny_docs, tiny_vocab):
    for d in encode_docs(tiny_docs[:10], tiny_vocab):
        flat = []
        for sent in d.plan.sentences():
            for phrase, start in sent.phrases:
                flat.append(phrase)
        assert flat == d.plan.phrases()
        assert d.plan.doc_length() == len(d.flat_target)


# -- loss ---------------------------------------------------------------------

class StubPlanner:
    """Emits fixed logits so the loss can be checked against hand CE."""

    def __init__(self, vocab_size, n_pos, tok_logits, pos_logits):
        self.vocab_size = vocab_size
        self.n_pos = n_pos
        self.tok_logits = tok_logits
        self.pos_logits = pos_logits

    def __call__(self, ids, allowed, segments=None):
        B, L = ids.shape
        tok = torch.zeros(B, L, self.vocab_size, dtype=torch.double)
        pos = torch.zeros(B, L, self.n_pos, dtype=torch.double)
        for (i, j), v in self.tok_logits.items():
            tok[0, i, j] = v
        for (i, j), v in self.pos_logits.items():
            pos[0, i, j] = v
        return ForwardTrace([], tok, pos)


def test_loss_zero_when_gold_has_probability_one():
    ex = PlanExample([9], KeyphraseSet([(12,)]), [12, 5, 3], [0, 2, 0])
    n_in = len(planner_input_ids(ex.prompt, ex.keyphrases))
    big = 1e4
    tok = {}
    pos = {}
    for j, (t, p) in enumerate(zip(ex.gold_assignment, ex.gold_positions)):
        tok[(n_in + j, t)] = big
        pos[(n_in + j, p)] = big
    model = StubPlanner(20, 128, tok, pos)
    assert float(planner_loss(model, ex)) == pytest.approx(0.0, abs=1e-8)


def test_loss_weight_composition():
    assert POSITION_LOSS_WEIGHT == 0.1
    # CE_assign = 2.0 and CE_pos = 1.0 must combine to 2.1
    assert 2.0 + POSITION_LOSS_WEIGHT * 1.0 == pytest.approx(2.1)


def test_loss_matches_hand_rolled_cross_entropy(small_planner):
    model = small_planner.double()
    ex = PlanExample(
        [9, 10, 11], KeyphraseSet([(12, 13), (14,)]),
        [12, 13, 5, 14, 5, 3], [1, 2, 4, 0, 2, 0],
    )
    loss = float(planner_loss(model, ex))

    # independent computation straight from the forward trace
    from planfill.nnet import build_hybrid_mask

    inp = planner_input_ids(ex.prompt, ex.keyphrases)
    n_in = len(inp)
    ids = inp + [BOK_ID] + ex.gold_assignment
    segs = [0] * n_in + [1] * (1 + len(ex.gold_assignment))
    trace = model(
        torch.tensor([ids]),
        build_hybrid_mask(n_in, len(ids) - n_in),
        torch.tensor([segs]),
    )

    def ce(logits_row, target):
        logz = torch.logsumexp(logits_row, dim=-1)
        return float(logz - logits_row[target])

    ce_a = [
        ce(trace.logits[0, n_in + j], t) for j, t in enumerate(ex.gold_assignment)
    ]
    ce_p = [
        ce(trace.position_logits[0, n_in + j], p)
        for j, p in enumerate(ex.gold_positions)
    ]
    expected = sum(ce_a) / len(ce_a) + 0.1 * sum(ce_p) / len(ce_p)
    assert loss == pytest.approx(expected, abs=1e-6)


# -- restricted greedy decoding ------------------------------------------------

def legal_replay(plan, keyphrases):
    """Brute-force legality oracle: re-simulate the candidate automaton."""
    remaining = {i: list(p) for i, p in enumerate(keyphrases.phrases)}
    started = None
    for tok in plan.assignment:
        if started is not None:
            assert tok == remaining[started].pop(0), "phrase atomicity broken"
            if not remaining[started]:
                del remaining[started]
                started = None
            continue
        if tok in (SEN_ID, EOS_ID):
            continue
        firsts = {p[0] for p in remaining.values()}
        assert tok in firsts, f"illegal token {tok}"
        pi = min(i for i, p in remaining.items() if p[0] == tok)
        remaining[pi].pop(0)
        if remaining[pi]:
            started = pi
        else:
            del remaining[pi]
    assert plan.assignment.count(EOS_ID) <= 1


def test_predict_plan_single_phrase(small_planner):
    kp = KeyphraseSet([(12, 13)])
    plan = predict_plan(small_planner, [9, 10], kp)
    non_special = [t for t in plan.assignment if t not in (SEN_ID, EOS_ID)]
    assert non_special in ([], [12, 13])
    legal_replay(plan, kp)


def test_predict_plan_properties(small_planner):
    torch.manual_seed(8)
    kp = KeyphraseSet([(12, 13), (14,), (15, 16, 17)])
    plan = predict_plan(small_planner, [9, 10, 11], kp)
    legal_replay(plan, kp)
    assert all(0 <= p <= MAX_POSITION for p in plan.positions)
    assert len(plan.assignment) == len(plan.positions)
    for phrase in plan.phrases():
        assert phrase in kp.phrases
    assert len(plan.phrases()) == len(set(plan.phrases()))


def test_predict_plan_empty_keyphrases(small_planner):
    with pytest.raises(ValueError, match="empty"):
        predict_plan(small_planner, [9], KeyphraseSet([]))


class SenLover:
    """Stub model that always prefers SEN, never EOS: forces the hard stop."""

    def __init__(self, vocab_size=32, n_pos=128):
        self.cfg = None
        self.vocab_size = vocab_size
        self.n_pos = n_pos

    def eval(self):
        return self

    def __call__(self, ids, allowed, segments=None):
        B, L = ids.shape
        tok = torch.zeros(B, L, self.vocab_size)
        tok[:, :, SEN_ID] = 5.0
        tok[:, :, EOS_ID] = -5.0
        return ForwardTrace([], tok, torch.zeros(B, L, self.n_pos))


def test_predict_plan_hard_stop():
    plan = predict_plan(SenLover(), [9], KeyphraseSet([(12,)]))
    assert len(plan.assignment) == MAX_PLAN_TOKENS
    assert EOS_ID not in plan.assignment


def test_hybrid_causality_of_decode(small_planner):
    # emitted prefix is unchanged when the suffix would have differed:
    # decode twice with different keyphrase sets sharing the first phrases
    kp = KeyphraseSet([(12, 13), (14,)])
    plan1 = predict_plan(small_planner, [9, 10], kp)
    plan2 = predict_plan(small_planner, [9, 10], kp)
    assert plan1 == plan2  # pure function of inputs


# -- memorization -------------------------------------------------------------

@pytest.mark.slow
def test_planner_memorizes_small_fixture(tiny_docs, tiny_vocab):
    docs = encode_docs(tiny_docs[:50], tiny_vocab)
    cfg = {
        "model": dict(d_model=64, n_heads=4, n_layers=2, ffn_dim=256,
                      max_len=192, dropout=0.0),
        "planner": dict(batch_size=10, max_steps=700, lr_max=2e-3, warmup=60,
                        grad_clip=1.0, position_loss_weight=0.1),
    }
    model = train_planner(docs, tiny_vocab, cfg, seed=101)
    total = matched = 0
    for d in docs:
        plan = predict_plan(model, d.prompt, d.keyphrases)
        gold = d.plan.assignment
        pred = plan.assignment
        total += len(gold)
        matched += sum(1 for a, b in zip(pred, gold) if a == b)
    assert matched / total >= 0.90, f"memorization ratio {matched / total:.3f}"
