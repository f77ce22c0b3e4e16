"""Mask-and-fill generator: denoising training with keyphrase-aware target
corruption, nucleus decoding with keyphrase position enforcement, and
perplexity-based selection among sampled candidates.

Encoder input assembly is the only thing the four modes change:

  seq2seq     prompt
  kp_seq2seq  prompt [SEP] shuffled keyphrases (SEP-joined)
  pair_light  prompt [SEP] assignment [SEP] all-MASK template
  pair_full   prompt [SEP] assignment [SEP] positioned template

Position ids restart at every encoder segment so template slot j lines up
with decoder step j; segment embeddings keep the segments apart.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .vocab import BOS_ID, EOS_ID, SEP_ID

MODES = ("seq2seq", "kp_seq2seq", "pair_light", "pair_full")

SPECIAL_ID_LIMIT = 8  # ids 0..7 are reserved and never sampled as content


@dataclass
class Draft:
    tokens: list
    probs: list  # model probability of each emitted token (forced included)
    forced: list

    def __post_init__(self):
        if not (len(self.tokens) == len(self.probs) == len(self.forced)):
            raise ValueError("draft fields must align")


@dataclass
class DecodeConfig:
    k: int = 50
    p: float = 0.9
    temperature: float = 1.0
    enforce: bool = True
    window: int = 5
    samples: int = 3  # nucleus runs per pass, reranked by LM perplexity
    max_len: int = 128
    fixed_length: bool = True  # full plans pin the output length; otherwise
    # decoding runs until EOS (or max_len)

    def validate(self, vocab_size=None):
        if self.k < 1 or (vocab_size and self.k > vocab_size):
            raise ValueError("k out of range")
        if not (0.0 < self.p <= 1.0):
            raise ValueError("p out of range")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.window < 0 or self.samples < 1:
            raise ValueError("window >= 0 and samples >= 1 required")


@dataclass
class CorruptionConfig:
    strategy: str = "non_keyphrase"  # or "any_token"
    mask_fraction: float = 0.5

    def validate(self):
        if self.strategy not in ("any_token", "non_keyphrase"):
            raise ValueError(f"unknown corruption strategy: {self.strategy}")
        if not (0.0 <= self.mask_fraction <= 1.0):
            raise ValueError("mask_fraction must be in [0, 1]")


def corrupt_target(y, spans, cfg, rng):
    """Replace round(fraction * eligible) positions with MASK, uniformly
    without replacement; eligible excludes keyphrase spans under the
    non_keyphrase strategy."""
    cfg.validate()
    from .vocab import MASK_ID

    protected = set()
    if cfg.strategy == "non_keyphrase":
        for s in spans:
            protected.update(range(s.start, s.end + 1))
    eligible = [i for i in range(len(y)) if i not in protected]
    n = round(cfg.mask_fraction * len(eligible))
    out = list(y)
    if n:
        for i in rng.choice(len(eligible), size=n, replace=False):
            out[eligible[i]] = MASK_ID
    return out


def assemble_encoder_input(mode, prompt, assignment, template_tokens):
    """Returns (ids, segment_ids, position_ids) for the encoder."""
    if mode not in MODES:
        raise ValueError(f"unknown mode: {mode}")
    segments = [list(prompt) + [SEP_ID]]
    if mode == "kp_seq2seq":
        segments.append(list(assignment))
    elif mode in ("pair_light", "pair_full"):
        segments.append(list(assignment) + [SEP_ID])
        segments.append(list(template_tokens))
    ids, seg_ids, pos_ids = [], [], []
    for si, seg in enumerate(segments):
        ids.extend(seg)
        seg_ids.extend([si] * len(seg))
        pos_ids.extend(range(len(seg)))
    return ids, seg_ids, pos_ids


def shuffle_phrases(keyphrases, rng):
    """Unordered keyphrase view for kp_seq2seq, SEP-joined."""
    order = rng.permutation(len(keyphrases.phrases))
    out = []
    for i, pi in enumerate(order):
        if i:
            out.append(SEP_ID)
        out.extend(keyphrases.phrases[pi])
    return out


def _encode_batch(model, enc_rows):
    """Pad and encode a batch of (ids, seg_ids, pos_ids) rows."""
    B = len(enc_rows)
    L = max(len(r[0]) for r in enc_rows)
    ids = torch.zeros(B, L, dtype=torch.long)
    segs = torch.zeros(B, L, dtype=torch.long)
    poss = torch.zeros(B, L, dtype=torch.long)
    attend = torch.zeros(B, L, dtype=torch.bool)
    for b, (row, seg, pos) in enumerate(enc_rows):
        n = len(row)
        ids[b, :n] = torch.tensor(row)
        segs[b, :n] = torch.tensor(seg)
        poss[b, :n] = torch.tensor(pos)
        attend[b, :n] = True
    memory = model.encode(ids, attend, segs, poss)
    return memory, attend


def generator_loss(model, prompt, assignment, y_corrupted, y):
    """Cross-entropy of reconstructing y from prompt + assignment + the
    corrupted target (teacher forcing, BOS-shifted, EOS-terminated)."""
    return generator_batch_loss(
        model, [(prompt, assignment, y_corrupted, y)], mode="pair_full"
    )


def generator_batch_loss(model, batch, mode="pair_full"):
    from .vocab import PAD_ID

    enc_rows = [
        assemble_encoder_input(mode, prompt, assignment, corrupted)
        for prompt, assignment, corrupted, _ in batch
    ]
    for row, _, _ in enc_rows:
        if len(row) > model.cfg.max_len:
            raise ValueError("sequence too long")
    memory, attend = _encode_batch(model, enc_rows)
    B = len(batch)
    T = max(len(y) for _, _, _, y in batch) + 1
    dec_in = torch.full((B, T), PAD_ID, dtype=torch.long)
    target = torch.full((B, T), PAD_ID, dtype=torch.long)
    for b, (_, _, _, y) in enumerate(batch):
        dec_in[b, 0] = BOS_ID
        dec_in[b, 1 : len(y) + 1] = torch.tensor(y)
        target[b, : len(y)] = torch.tensor(y)
        target[b, len(y)] = EOS_ID
    trace = model.decode(dec_in, memory, attend)
    return F.cross_entropy(
        trace.logits.reshape(-1, trace.logits.size(-1)),
        target.reshape(-1),
        ignore_index=PAD_ID,
    )


def nucleus_filter(logits, k, p, temperature=1.0):
    """Top-p-then-top-k candidate set over a 1-D logits array.

    Probabilities are softmax(logits / temperature) sorted by descending
    probability (ties by ascending token id); the smallest prefix reaching
    cumulative mass p is kept, capped at k, never below one token, then
    renormalized.
    """
    logits = np.asarray(logits, dtype=np.float64) / temperature
    z = logits - logits.max()
    probs = np.exp(z)
    probs /= probs.sum()
    order = np.argsort(-probs, kind="stable")
    csum = np.cumsum(probs[order])
    cut = int(np.searchsorted(csum, p, side="left")) + 1
    cut = max(1, min(cut, k, len(order)))
    keep = order[:cut]
    kept = probs[keep]
    return keep, kept / kept.sum()


def lm_perplexity(lm, tokens):
    """exp(mean negative log-probability) under the causal LM."""
    if len(tokens) == 0:
        raise ValueError("empty input")
    logprobs = lm.token_logprobs(list(tokens))
    return math.exp(-sum(logprobs) / len(logprobs))


class _StreamState:
    def __init__(self, rng):
        self.rng = rng
        self.tokens = []
        self.probs = []
        self.forced = []
        self.queue = []  # remaining tokens of a phrase being copied
        self.done = False


def _phrase_in_window(tokens, phrase, t, window):
    """True iff the full phrase occurs ending within the last `window`
    emitted tokens (positions t-window .. t-1)."""
    L = len(phrase)
    lo = max(0, t - window)
    for end in range(t - 1, lo - 1, -1):
        j = end - L + 1
        if j < 0:
            break
        if tuple(tokens[j : end + 1]) == tuple(phrase):
            return True
    return False


def span_placement_ok(tokens, template, window):
    """Replay check for the enforcement contract: every span matches at its
    offsets, or its phrase legitimately triggered the window-skip clause."""
    for s in template.spans:
        phrase = template.tokens[s.start : s.end + 1]
        if list(tokens[s.start : s.end + 1]) == list(phrase):
            continue
        if _phrase_in_window(tokens, phrase, s.start, window):
            continue
        return False
    return True


@torch.no_grad()
def decode_batch(model, enc_row, template, cfg, rngs, phrase_tokens=None):
    """Decode one stream per rng against a shared encoder input.

    Full-plan mode emits exactly template.doc_length tokens with reserved
    ids banned; otherwise streams run to EOS or cfg.max_len.  Keyphrase
    enforcement copies a phrase when the output index hits its span start,
    unless the phrase already occurs ending within the previous cfg.window
    tokens.  Recorded probs are the raw (temperature-1, unbanned) softmax
    probability of each emitted token.
    """
    cfg.validate(model.cfg.vocab_size)
    model.eval()
    memory, attend = _encode_batch(model, [enc_row])
    B = len(rngs)
    state = model.start_decode(memory, attend, B)
    streams = [_StreamState(rng) for rng in rngs]

    if phrase_tokens is None:
        phrase_tokens = {}
        for s in template.spans:
            phrase_tokens[s.start] = template.tokens[s.start : s.end + 1]

    if cfg.fixed_length:
        total = min(template.doc_length, cfg.max_len)
    else:
        total = cfg.max_len
    if total == 0:
        return [Draft([], [], []) for _ in streams]

    prev = torch.full((B,), BOS_ID, dtype=torch.long)
    for t in range(total):
        logits = model.step(prev, state)
        logprobs = F.log_softmax(logits.double(), dim=-1)
        lg = logits.double().numpy()
        next_tokens = []
        for b, st in enumerate(streams):
            if st.done:
                next_tokens.append(BOS_ID)  # inert filler for finished rows
                continue
            token = None
            forced = False
            if st.queue:
                token = st.queue.pop(0)
                forced = True
            elif cfg.enforce and t in phrase_tokens:
                phrase = phrase_tokens[t]
                if not _phrase_in_window(st.tokens, phrase, t, cfg.window):
                    token = phrase[0]
                    st.queue = list(phrase[1:])
                    forced = True
            if token is None:
                row = lg[b].copy()
                row[:SPECIAL_ID_LIMIT] = -np.inf
                if not cfg.fixed_length:
                    row[EOS_ID] = lg[b][EOS_ID]
                cands, probs = nucleus_filter(row, cfg.k, cfg.p, cfg.temperature)
                token = int(cands[st.rng.choice(len(cands), p=probs)])
                if not cfg.fixed_length and token == EOS_ID:
                    st.done = True
                    next_tokens.append(BOS_ID)
                    continue
            st.tokens.append(int(token))
            st.probs.append(float(math.exp(logprobs[b, token])))
            st.forced.append(forced)
            next_tokens.append(int(token))
        if all(st.done for st in streams):
            break
        prev = torch.tensor(next_tokens, dtype=torch.long)
    return [Draft(st.tokens, st.probs, st.forced) for st in streams]


def decode_enforced(model, prompt, assignment, template, cfg, rng, mode="pair_full"):
    """Single-stream decode (the one-candidate case of decode_batch)."""
    enc_row = assemble_encoder_input(mode, prompt, assignment, template.tokens)
    return decode_batch(model, enc_row, template, cfg, [rng])[0]


def generate_candidates(model, lm, prompt, assignment, template, cfg, seed, mode="pair_full"):
    """cfg.samples independent nucleus runs plus their LM perplexities."""
    from .config import derive_seed

    rngs = [
        np.random.default_rng(derive_seed(seed, f"stream{i}"))
        for i in range(cfg.samples)
    ]
    enc_row = assemble_encoder_input(mode, prompt, assignment, template.tokens)
    drafts = decode_batch(model, enc_row, template, cfg, rngs)
    ppls = [
        lm_perplexity(lm, d.tokens) if d.tokens else float("inf") for d in drafts
    ]
    return drafts, ppls


def generate_best(model, lm, prompt, assignment, template, cfg, seed, mode="pair_full"):
    """The lowest-perplexity draft among cfg.samples runs (ties: lowest
    stream index)."""
    drafts, ppls = generate_candidates(
        model, lm, prompt, assignment, template, cfg, seed, mode
    )
    return drafts[int(np.argmin(ppls))]
