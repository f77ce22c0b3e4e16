"""Iterative refinement: mask-and-fill passes with a linearly decaying mask
budget.

Each pass samples several candidates against the current template, keeps
the one with the lowest LM perplexity, then masks its least-confident
non-keyphrase tokens to form the next template.  The trace records enough
(including per-pass seeds) to replay every intermediate draft.
"""

import json
import math
from dataclasses import dataclass, field

from .config import derive_seed
from .generator import DecodeConfig, generate_candidates
from .template import Template, build_template, mask_low_confidence, masked_indices


@dataclass
class RefineConfig:
    iterations: int = 5  # R
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    max_target_len: int = 128

    def validate(self):
        if self.iterations < 1:
            raise ValueError("need at least one iteration")


@dataclass
class IterationRecord:
    iteration: int
    template_tokens: list
    seed: int
    candidate_ppls: list
    draft_tokens: list
    draft_probs: list
    draft_forced: list
    mask_count: int
    masked_indices: list


@dataclass
class RefineTrace:
    records: list = field(default_factory=list)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for r in self.records:
                f.write(json.dumps(r.__dict__) + "\n")

    @classmethod
    def load(cls, path):
        records = []
        with open(path, encoding="utf-8") as f:
            for line in f:
                if line.strip():
                    records.append(IterationRecord(**json.loads(line)))
        return cls(records)


def mask_count(length, r, R):
    """floor(length * (1 - r/R)): the shrinking mask budget after pass r."""
    if not (1 <= r <= R):
        raise ValueError("iteration index out of range")
    if length < 0:
        raise ValueError("length must be non-negative")
    return math.floor(length * (1.0 - r / R))


def run_refinement(plan, prompt, assignment, generator, lm, cfg, seed, mode="pair_full"):
    """Template construction plus R mask-and-fill passes; returns the final
    draft and the per-iteration trace.  The plan must already be corrected.
    """
    cfg.validate()
    if mode == "pair_light":
        from .template import all_mask_template

        template = all_mask_template(min(plan.doc_length(), cfg.max_target_len))
    else:
        template = build_template(plan, cfg.max_target_len)
    spans = template.spans
    trace = RefineTrace()
    draft = None
    for r in range(1, cfg.iterations + 1):
        pass_seed = derive_seed(seed, f"pass{r}")
        drafts, ppls = generate_candidates(
            generator, lm, prompt, assignment, template, cfg.decode, pass_seed, mode
        )
        best = min(range(len(ppls)), key=lambda i: ppls[i])
        draft = drafts[best]
        n = mask_count(len(draft.tokens), r, cfg.iterations)
        next_template = mask_low_confidence(draft, spans, n)
        trace.records.append(
            IterationRecord(
                iteration=r,
                template_tokens=list(template.tokens),
                seed=pass_seed,
                candidate_ppls=list(ppls),
                draft_tokens=list(draft.tokens),
                draft_probs=list(draft.probs),
                draft_forced=list(draft.forced),
                mask_count=n,
                masked_indices=masked_indices(next_template),
            )
        )
        template = next_template
    return draft, trace
