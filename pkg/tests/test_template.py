import json

import numpy as np
import pytest

from planfill.generator import Draft
from planfill.planner import MAX_POSITION, ContentPlan
from planfill.template import (
    Span,
    all_mask_template,
    build_template,
    correct_plan,
    dump_template,
    mask_low_confidence,
    masked_indices,
    render_template,
)
from planfill.vocab import EOS_ID, MASK_ID, SEN_ID


def make_plan(sentences, eos=True):
    """sentences: list of (phrases, sen_position) where phrases is a list of
    (token_tuple, per-token position list)."""
    assignment, positions, lens = [], [], []
    for phrases, sen_pos in sentences:
        for toks, pos in phrases:
            assignment.extend(toks)
            positions.extend(pos)
            lens.append(len(toks))
        assignment.append(SEN_ID)
        positions.append(sen_pos)
    if eos:
        assignment.append(EOS_ID)
        positions.append(0)
    return ContentPlan(assignment, positions, lens)


# -- correction ---------------------------------------------------------------

def test_rule1_consecutive_segment():
    # phrase of length 2 predicted at token positions [4, 7] -> [4, 5]
    plan = make_plan([([((10, 11), [4, 7])], 9)])
    fixed = correct_plan(plan)
    assert fixed.positions[:2] == [4, 5]


def test_rule2_moved_directly_after_previous():
    # KP1 (len 2) at start 3 occupies [3,4]; KP2 (len 1) starting at 2 is not
    # strictly after it, so it moves to 5
    plan = make_plan([([((10, 11), [3, 4]), ((12,), [2])], 9)])
    fixed = correct_plan(plan)
    assert fixed.positions[:3] == [3, 4, 5]
    sent = fixed.sentences()[0]
    assert [start for _, start in sent.phrases] == [3, 5]


def test_valid_plan_unchanged():
    plan = make_plan([([((10, 11), [1, 2]), ((12,), [5])], 8)])
    assert correct_plan(plan) == plan


def test_sentence_grows_to_cover_moved_phrase():
    plan = make_plan([([((10, 11, 12), [4, 5, 6])], 5)])
    fixed = correct_plan(plan)
    sen_idx = fixed.assignment.index(SEN_ID)
    assert fixed.positions[sen_idx] == 7  # covers last phrase end 6


def test_correction_handles_hard_stop_plan():
    plan = ContentPlan([10, 11], [3, 9], [2])  # no SEN, no EOS
    fixed = correct_plan(plan)
    assert fixed.positions[:2] == [3, 4]
    assert SEN_ID in fixed.assignment and EOS_ID not in fixed.assignment


def _random_raw_plan(rng):
    assignment, positions, lens = [], [], []
    for _ in range(rng.integers(1, 5)):
        for _ in range(rng.integers(0, 4)):
            length = int(rng.integers(1, 7))
            toks = [int(t) for t in rng.integers(8, 300, size=length)]
            pos = [int(p) for p in rng.integers(0, MAX_POSITION + 1, size=length)]
            assignment.extend(toks)
            positions.extend(pos)
            lens.append(length)
        assignment.append(SEN_ID)
        positions.append(int(rng.integers(0, MAX_POSITION + 1)))
    assignment.append(EOS_ID)
    positions.append(0)
    return ContentPlan(assignment, positions, lens)


def _check_corrected(raw, fixed):
    # intact phrases, in the raw order
    assert [t for t in fixed.assignment] == [t for t in raw.assignment]
    assert fixed.phrase_lens == raw.phrase_lens
    # consecutive segments, strictly increasing non-overlapping starts
    i = 0
    phrase_iter = iter(fixed.phrases())
    for sent in fixed.sentences():
        prev_end = -1
        for phrase, start in sent.phrases:
            assert start > prev_end
            for k in range(len(phrase)):
                assert fixed.positions[i + k] == start + k
            prev_end = start + len(phrase) - 1
            i += len(phrase)
            assert next(phrase_iter) == phrase
        i += 1  # SEN
        assert sent.length >= (prev_end + 1 if prev_end >= 0 else 0)


def test_correction_fuzz_10000_and_idempotent():
    rng = np.random.default_rng(57)
    for _ in range(10000):
        raw = _random_raw_plan(rng)
        fixed = correct_plan(raw)
        _check_corrected(raw, fixed)
        assert correct_plan(fixed) == fixed


# -- template construction ----------------------------------------------------

def test_template_single_sentence():
    plan = make_plan([([((10, 11), [1, 2])], 5)])
    t = build_template(plan)
    assert t.tokens == [MASK_ID, 10, 11, MASK_ID, MASK_ID]
    assert t.spans == [Span(0, 1, 2)]
    assert t.doc_length == 5


def test_template_cumulative_offsets():
    plan = make_plan([([], 3), ([((20,), [0])], 2)])
    t = build_template(plan)
    assert t.doc_length == 5
    assert t.tokens == [MASK_ID, MASK_ID, MASK_ID, 20, MASK_ID]
    assert t.spans == [Span(0, 3, 3)]


def test_template_zero_phrases():
    plan = make_plan([([], 4)])
    t = build_template(plan)
    assert t.tokens == [MASK_ID] * 4
    assert t.spans == []


def test_template_truncation_drops_whole_span():
    plan = make_plan([([((10, 11), [6, 7])], 8)])
    t = build_template(plan, max_target_len=7)
    assert t.doc_length == 7
    assert t.spans == []
    assert len(t.dropped_spans) == 1
    assert all(tok == MASK_ID for tok in t.tokens)


def test_template_round_trip_spans(tiny_docs, tiny_vocab):
    from planfill.pipeline import encode_docs

    for d in encode_docs(tiny_docs[:12], tiny_vocab):
        plan = correct_plan(d.plan)
        t = build_template(plan, max_target_len=200)
        offsets = []
        off = 0
        for sent in plan.sentences():
            for phrase, start in sent.phrases:
                offsets.append((phrase, off + start))
            off += sent.length
        got = [
            (tuple(t.tokens[s.start : s.end + 1]), s.start) for s in t.spans
        ]
        assert got == offsets
        # every non-span slot is MASK
        span_pos = t.span_positions()
        for i, tok in enumerate(t.tokens):
            assert (tok == MASK_ID) == (i not in span_pos)


# -- refinement masking --------------------------------------------------------

def test_mask_zero_is_identity():
    d = Draft([10, 11, 12], [0.5, 0.6, 0.7], [False] * 3)
    t = mask_low_confidence(d, [], 0)
    assert t.tokens == d.tokens


def test_mask_lowest_two():
    d = Draft([10, 11, 12, 13], [0.9, 0.1, 0.8, 0.2], [False] * 4)
    t = mask_low_confidence(d, [], 2)
    assert t.tokens == [10, MASK_ID, 12, MASK_ID]
    assert masked_indices(t) == [1, 3]


def test_mask_tie_break_lower_index():
    d = Draft([10, 11, 12, 13], [0.5] * 4, [False] * 4)
    t = mask_low_confidence(d, [], 2)
    assert masked_indices(t) == [0, 1]


def test_mask_never_touches_spans():
    d = Draft([10, 11, 12, 13], [0.0, 0.0, 0.9, 0.9], [False] * 4)
    t = mask_low_confidence(d, [Span(0, 0, 1)], 2)
    assert t.tokens == [10, 11, MASK_ID, MASK_ID]


def test_mask_overlarge_budget_masks_all_eligible():
    d = Draft([10, 11, 12], [0.1, 0.2, 0.3], [False] * 3)
    t = mask_low_confidence(d, [Span(0, 0, 0)], 99)
    assert t.tokens == [10, MASK_ID, MASK_ID]


# -- debug dump ---------------------------------------------------------------

def test_render_and_sidecar_golden(tmp_path, tiny_vocab):
    plan = make_plan([([((10, 11), [1, 2])], 5)])
    t = build_template(plan)
    w10, w11 = tiny_vocab.id_to_token[10], tiny_vocab.id_to_token[11]
    assert render_template(t, tiny_vocab) == f"_ [{w10} {w11}] _ _"
    dump_template(t, tiny_vocab, str(tmp_path / "tpl"))
    assert (tmp_path / "tpl.txt").read_text().strip() == f"_ [{w10} {w11}] _ _"
    sidecar = json.loads((tmp_path / "tpl.spans.json").read_text())
    assert sidecar == [{"phrase_index": 0, "start": 1, "end": 2}]
