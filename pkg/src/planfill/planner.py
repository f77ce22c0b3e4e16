"""Content planner: assigns keyphrases to sentences and positions each
assignment token relative to its sentence start.

The model encodes prompt + keyphrases bidirectionally and emits the
assignment autoregressively under a hybrid attention mask.  Decoding is
greedy over a restricted candidate set: next tokens of unfinished
keyphrases, the sentence boundary token, and the end token.  A started
phrase is always finished before anything else, so emitted phrases stay
intact.
"""

import json
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .nnet.masks import build_hybrid_mask
from .vocab import BOK_ID, EOS_ID, SEN_ID, SEP_ID

MAX_POSITION = 127
MAX_PLAN_TOKENS = 127  # hard stop when EOS is never produced

POSITION_LOSS_WEIGHT = 0.1


@dataclass
class KeyphraseSet:
    """Unordered keyphrases, stored in the caller's canonical order
    (lexicographic by surface form at construction time)."""

    phrases: list  # list of token-id tuples

    def __post_init__(self):
        self.phrases = [tuple(p) for p in self.phrases]
        seen = set()
        for p in self.phrases:
            if not p:
                raise ValueError("empty keyphrase")
            if len(p) > 10:
                raise ValueError(f"keyphrase longer than 10 tokens: {p}")
            if p in seen:
                raise ValueError(f"duplicate keyphrase: {p}")
            seen.add(p)

    def __len__(self):
        return len(self.phrases)


@dataclass
class PlanSentence:
    phrases: list  # (token-id tuple, start_position) in assignment order
    length: int


@dataclass
class ContentPlan:
    """Flat assignment sequence plus aligned positions.

    assignment interleaves keyphrase tokens with SEN markers and ends with
    EOS (absent only when decoding hit the hard stop).  phrase_lens gives
    the length of each emitted phrase in order, which makes the phrase
    segmentation of the flat sequence explicit.
    """

    assignment: list
    positions: list
    phrase_lens: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.assignment) != len(self.positions):
            raise ValueError("assignment and positions must align")

    def phrases(self):
        """Phrase token tuples in emission order."""
        toks = [t for t in self.assignment if t not in (SEN_ID, EOS_ID)]
        out, i = [], 0
        for ln in self.phrase_lens:
            out.append(tuple(toks[i : i + ln]))
            i += ln
        if i != len(toks):
            raise ValueError("phrase_lens do not cover the assignment")
        return out

    def sentences(self):
        """Per-sentence view: phrases with start positions, plus length.

        A trailing sentence without a SEN marker (hard-stop plans) gets an
        implicit length covering its last phrase.
        """
        phrase_iter = iter(self.phrases())
        sentences = []
        cur, last_end = [], -1
        i = 0
        while i < len(self.assignment):
            tok = self.assignment[i]
            if tok == EOS_ID:
                break
            if tok == SEN_ID:
                sentences.append(PlanSentence(cur, self.positions[i]))
                cur, last_end = [], -1
                i += 1
                continue
            phrase = next(phrase_iter)
            cur.append((phrase, self.positions[i]))
            last_end = self.positions[i] + len(phrase) - 1
            i += len(phrase)
        if cur:
            sentences.append(PlanSentence(cur, last_end + 1))
        return sentences

    def doc_length(self):
        return sum(s.length for s in self.sentences())

    def to_json(self, prompt=None):
        obj = {
            "prompt": list(prompt) if prompt is not None else [],
            "assignment": list(self.assignment),
            "positions": list(self.positions),
            "phrase_lens": list(self.phrase_lens),
        }
        return json.dumps(obj)

    @classmethod
    def from_json(cls, line):
        obj = json.loads(line)
        lens = obj.get("phrase_lens")
        if lens is None:
            # fall back to maximal-run segmentation (adjacent phrases merge)
            lens = []
            run = 0
            for t in obj["assignment"]:
                if t in (SEN_ID, EOS_ID):
                    if run:
                        lens.append(run)
                    run = 0
                else:
                    run += 1
            if run:
                lens.append(run)
        return cls(obj["assignment"], obj["positions"], lens), obj.get("prompt", [])


@dataclass
class PlanExample:
    prompt: list
    keyphrases: KeyphraseSet
    gold_assignment: list
    gold_positions: list


def extract_oracle_plan(reference_sentences, keyphrases):
    """Read a plan off a reference: phrases ordered by first occurrence,
    positions as offsets from the sentence start (clamped to 127), one SEN
    per sentence carrying the clamped sentence length, then EOS.
    """
    occurrences = []
    for phrase in keyphrases.phrases:
        found = None
        for si, sent in enumerate(reference_sentences):
            L = len(phrase)
            for off in range(len(sent) - L + 1):
                if tuple(sent[off : off + L]) == phrase:
                    found = (si, off)
                    break
            if found:
                break
        if found is None:
            raise ValueError(f"keyphrase not found in reference: {phrase}")
        occurrences.append((found[0], found[1], phrase))
    occurrences.sort(key=lambda t: (t[0], t[1]))

    assignment, positions, phrase_lens = [], [], []
    by_sentence = {}
    for si, off, phrase in occurrences:
        by_sentence.setdefault(si, []).append((off, phrase))
    for si, sent in enumerate(reference_sentences):
        for off, phrase in by_sentence.get(si, []):
            for k, tok in enumerate(phrase):
                assignment.append(tok)
                positions.append(min(off + k, MAX_POSITION))
            phrase_lens.append(len(phrase))
        assignment.append(SEN_ID)
        positions.append(min(len(sent), MAX_POSITION))
    assignment.append(EOS_ID)
    positions.append(0)
    return ContentPlan(assignment, positions, phrase_lens)


def planner_input_ids(prompt, keyphrases):
    """Encoder-side layout: prompt [SEP] ph1 [SEP] ph2 [SEP] ... phk [SEP]."""
    ids = list(prompt) + [SEP_ID]
    for phrase in keyphrases.phrases:
        ids.extend(phrase)
        ids.append(SEP_ID)
    return ids


def _example_tensors(example):
    inp = planner_input_ids(example.prompt, example.keyphrases)
    n_in = len(inp)
    ids = inp + [BOK_ID] + list(example.gold_assignment)
    segments = [0] * n_in + [1] * (1 + len(example.gold_assignment))
    return ids, segments, n_in


def planner_loss(model, example):
    """CE over assignment tokens plus 0.1 * CE over their positions."""
    return planner_batch_loss(model, [example])


def planner_batch_loss(model, examples):
    tensors = [_example_tensors(ex) for ex in examples]
    L = max(len(ids) for ids, _, _ in tensors)
    B = len(examples)
    ids = torch.zeros(B, L, dtype=torch.long)
    segs = torch.zeros(B, L, dtype=torch.long)
    allowed = torch.zeros(B, L, L, dtype=torch.bool)
    tok_tgt = torch.full((B, L), -100, dtype=torch.long)
    pos_tgt = torch.full((B, L), -100, dtype=torch.long)
    for b, (ex, (row, seg, n_in)) in enumerate(zip(examples, tensors)):
        n = len(row)
        ids[b, :n] = torch.tensor(row)
        segs[b, :n] = torch.tensor(seg)
        allowed[b, :n, :n] = build_hybrid_mask(n_in, n - n_in)
        allowed[b, n:, 0] = True  # pad rows need one attendable key
        n_assign = len(ex.gold_assignment)
        tok_tgt[b, n_in : n_in + n_assign] = torch.tensor(ex.gold_assignment)
        pos_tgt[b, n_in : n_in + n_assign] = torch.tensor(ex.gold_positions)
    trace = model(ids, allowed, segs)
    ce_assign = F.cross_entropy(
        trace.logits.reshape(-1, trace.logits.size(-1)), tok_tgt.reshape(-1),
        ignore_index=-100,
    )
    ce_pos = F.cross_entropy(
        trace.position_logits.reshape(-1, trace.position_logits.size(-1)),
        pos_tgt.reshape(-1),
        ignore_index=-100,
    )
    return ce_assign + POSITION_LOSS_WEIGHT * ce_pos


@torch.no_grad()
def predict_plan(model, prompt, keyphrases):
    """Greedy restricted decoding of a raw (pre-correction) plan.

    At each step the candidate set is {next token of each unfinished
    phrase} | {SEN, EOS}; a started phrase is completed before any other
    candidate is admitted.  When several unstarted phrases share the argmax
    first token, the earliest phrase in canonical order is chosen.
    """
    if len(keyphrases) == 0:
        raise ValueError("empty keyphrase set")
    model.eval()
    inp = planner_input_ids(prompt, keyphrases)
    n_in = len(inp)

    seq = list(inp) + [BOK_ID]
    segments = [0] * n_in + [1]
    assignment, positions, phrase_lens = [], [], []
    started = None  # (phrase_index, next_token_offset)
    done = [False] * len(keyphrases)

    while len(assignment) < MAX_PLAN_TOKENS:
        ids = torch.tensor([seq])
        allowed = build_hybrid_mask(n_in, len(seq) - n_in)
        trace = model(ids, allowed, torch.tensor([segments]))
        logits = trace.logits[0, -1]
        pos = int(trace.position_logits[0, -1].argmax())

        if started is not None:
            pi, off = started
            token = keyphrases.phrases[pi][off]
            if off + 1 == len(keyphrases.phrases[pi]):
                done[pi] = True
                phrase_lens.append(len(keyphrases.phrases[pi]))
                started = None
            else:
                started = (pi, off + 1)
        else:
            candidates = {SEN_ID: None, EOS_ID: None}
            for pi, phrase in enumerate(keyphrases.phrases):
                if not done[pi] and phrase[0] not in candidates:
                    candidates[phrase[0]] = pi
            token = max(candidates, key=lambda t: (float(logits[t]), -t))
            pi = candidates[token]
            if pi is not None:
                if len(keyphrases.phrases[pi]) == 1:
                    done[pi] = True
                    phrase_lens.append(1)
                else:
                    started = (pi, 1)

        assignment.append(token)
        positions.append(pos)
        if token == EOS_ID:
            break
        seq.append(token)
        segments.append(1)

    return ContentPlan(assignment, positions, phrase_lens)


def save_plans(plans_with_prompts, path):
    with open(path, "w", encoding="utf-8") as f:
        for plan, prompt in plans_with_prompts:
            f.write(plan.to_json(prompt) + "\n")


def load_plans(path):
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                out.append(ContentPlan.from_json(line))
    return out
