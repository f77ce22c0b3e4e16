"""Templates: masked target-length token sequences carrying keyphrase spans.

correct_plan repairs raw planner output so every phrase occupies a
consecutive position segment and same-sentence phrases are strictly
ordered; build_template lays corrected sentences out contiguously with
MASK at unconstrained slots; mask_low_confidence re-masks the least
confident draft tokens between refinement passes.
"""

import json
import logging
from dataclasses import dataclass, field

from .planner import MAX_POSITION, ContentPlan
from .vocab import EOS_ID, MASK_ID, SEN_ID

log = logging.getLogger(__name__)


@dataclass
class Span:
    phrase_index: int
    start: int  # global offset, inclusive
    end: int  # global offset, inclusive


@dataclass
class Template:
    tokens: list
    spans: list
    doc_length: int
    dropped_spans: list = field(default_factory=list)

    def span_positions(self):
        out = set()
        for s in self.spans:
            out.update(range(s.start, s.end + 1))
        return out


def retokenize_phrase(tokens):
    """Cross-tokenizer hook; an identity under the shared word-level
    vocabulary.  A subword port would re-segment the phrase here."""
    return list(tokens)


def correct_plan(raw):
    """Repair a raw plan: (1) each phrase's positions become the consecutive
    segment starting at its first predicted position, (2) a phrase that does
    not start strictly after its predecessor is moved to directly follow it,
    (3) the retokenization hook is applied, and sentence lengths grow to
    cover the last phrase.  Total and idempotent.

    Raw positions are bounded by the prediction head's cap; the repaired
    layout is stored exactly, so consecutive segments and strict ordering
    survive even when a repair pushes an end past the cap.
    """
    sentences = raw.sentences()
    has_eos = EOS_ID in raw.assignment

    assignment, positions, phrase_lens = [], [], []
    for sent in sentences:
        prev_end = -1
        ends = []
        for phrase, start in sent.phrases:
            phrase = tuple(retokenize_phrase(phrase))
            if start <= prev_end:
                start = prev_end + 1
            end = start + len(phrase) - 1
            for k, tok in enumerate(phrase):
                assignment.append(tok)
                positions.append(start + k)
            phrase_lens.append(len(phrase))
            prev_end = end
            ends.append(end)
        length = max(sent.length, (ends[-1] + 1) if ends else 0)
        assignment.append(SEN_ID)
        positions.append(length)
    if has_eos:
        assignment.append(EOS_ID)
        positions.append(0)
    return ContentPlan(assignment, positions, phrase_lens)


def build_template(plan, max_target_len=128):
    """Lay corrected sentences out contiguously; place phrase tokens at
    their global offsets and MASK everywhere else.  Spans that cross the
    truncation boundary (or overrun their sentence) are dropped whole."""
    sentences = plan.sentences()
    doc_length = min(sum(s.length for s in sentences), max_target_len)
    tokens = [MASK_ID] * doc_length
    spans, dropped = [], []
    offset = 0
    idx = 0
    for sent in sentences:
        for phrase, start in sent.phrases:
            g0 = offset + start
            g1 = g0 + len(phrase) - 1
            if g1 >= min(offset + sent.length, doc_length):
                dropped.append(Span(idx, g0, g1))
            else:
                tokens[g0 : g1 + 1] = list(phrase)
                spans.append(Span(idx, g0, g1))
            idx += 1
        offset += sent.length
    if dropped:
        log.warning("dropped %d spans crossing the template boundary", len(dropped))
    return Template(tokens, spans, doc_length, dropped)


def all_mask_template(length):
    """Assignment-only mode: no positions, every slot masked."""
    return Template([MASK_ID] * length, [], length)


def mask_low_confidence(draft, template_spans, n):
    """Mask the n least-confident non-span draft tokens (ties: lower index
    first); span tokens are never masked, everything else copies over."""
    protected = set()
    for s in template_spans:
        protected.update(range(s.start, s.end + 1))
    eligible = [i for i in range(len(draft.tokens)) if i not in protected]
    if n > len(eligible):
        log.warning("mask budget %d exceeds %d eligible tokens", n, len(eligible))
        n = len(eligible)
    order = sorted(eligible, key=lambda i: (draft.probs[i], i))
    masked = set(order[:n])
    tokens = [MASK_ID if i in masked else t for i, t in enumerate(draft.tokens)]
    return Template(tokens, list(template_spans), len(tokens))


def masked_indices(template):
    return [i for i, t in enumerate(template.tokens) if t == MASK_ID]


def render_template(template, vocab):
    """Debug rendering: MASK as "_", span boundaries bracketed."""
    starts = {s.start for s in template.spans}
    ends = {s.end for s in template.spans}
    parts = []
    for i, tok in enumerate(template.tokens):
        word = "_" if tok == MASK_ID else vocab.id_to_token[tok]
        if i in starts:
            word = "[" + word
        if i in ends:
            word = word + "]"
        parts.append(word)
    return " ".join(parts)


def spans_sidecar(template):
    return json.dumps(
        [
            {"phrase_index": s.phrase_index, "start": s.start, "end": s.end}
            for s in template.spans
        ]
    )


def dump_template(template, vocab, path_prefix):
    with open(path_prefix + ".txt", "w", encoding="utf-8") as f:
        f.write(render_template(template, vocab) + "\n")
    with open(path_prefix + ".spans.json", "w", encoding="utf-8") as f:
        f.write(spans_sidecar(template) + "\n")
