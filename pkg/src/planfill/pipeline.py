"""End-to-end orchestration: document encoding, model training loops,
plan prediction, generation/refinement over a split, and evaluation.

Everything is driven by a global seed expanded into per-component
sub-seeds, so complete runs are reproducible bit for bit.
"""

import json
from dataclasses import dataclass

import numpy as np
import torch

from . import metrics as M
from .config import derive_seed
from .generator import (
    CorruptionConfig,
    DecodeConfig,
    corrupt_target,
    lm_perplexity,
    shuffle_phrases,
)
from .nnet import ModelConfig, OptimizerState, build_model, run_training
from .planner import (
    ContentPlan,
    KeyphraseSet,
    PlanExample,
    extract_oracle_plan,
    planner_batch_loss,
    predict_plan,
)
from .refine import RefineConfig, run_refinement
from .template import build_template, correct_plan
from .vocab import EOS_ID, PAD_ID


@dataclass
class EncodedDoc:
    prompt: list  # ids
    sentences: list  # list of id lists
    flat_target: list
    keyphrases: KeyphraseSet
    plan: ContentPlan  # oracle plan read off the reference
    spans: list  # keyphrase spans at their actual target offsets


def canonical_keyphrases(doc, vocab):
    """Keyphrases in lexicographic surface order, encoded."""
    ordered = sorted(doc.keyphrases, key=lambda p: tuple(p))
    return KeyphraseSet([tuple(vocab.encode(p)) for p in ordered])


def encode_doc(doc, vocab):
    prompt = vocab.encode(doc.prompt)
    sentences = [vocab.encode(s) for s in doc.target]
    kp = canonical_keyphrases(doc, vocab)
    plan = extract_oracle_plan(sentences, kp)
    flat = [t for s in sentences for t in s]
    spans = build_template(plan, max_target_len=len(flat)).spans
    return EncodedDoc(prompt, sentences, flat, kp, plan, spans)


def encode_docs(docs, vocab):
    return [encode_doc(d, vocab) for d in docs]


def assignment_tokens(plan):
    """The generator-side keyphrase assignment: the plan sequence without
    its EOS terminator."""
    return [t for t in plan.assignment if t != EOS_ID]


def model_config(cfg, vocab_size, kind):
    m = cfg["model"]
    return ModelConfig(
        vocab_size=vocab_size,
        d_model=m["d_model"],
        n_heads=m["n_heads"],
        n_layers=m["n_layers"],
        ffn_dim=m["ffn_dim"],
        max_len=m["max_len"],
        dropout=m["dropout"],
        kind=kind,
        uses_segment_embeddings=kind != "causal_lm",
        n_segments=3,
    )


def _epoch_batches(n, batch_size, rng):
    while True:
        order = rng.permutation(n)
        for i in range(0, n - batch_size + 1, batch_size):
            yield order[i : i + batch_size]


def train_planner(encoded, vocab, cfg, seed, log=None):
    torch.manual_seed(derive_seed(seed, "planner-init"))
    model = build_model(model_config(cfg, len(vocab), "bidir_causal_hybrid"))
    pc = cfg["planner"]
    opt = OptimizerState(model, pc["lr_max"], pc["warmup"], pc["grad_clip"])
    rng = np.random.default_rng(derive_seed(seed, "planner-data"))
    examples = [
        PlanExample(d.prompt, d.keyphrases, d.plan.assignment, d.plan.positions)
        for d in encoded
    ]

    def batches():
        for idx in _epoch_batches(len(examples), pc["batch_size"], rng):
            yield [examples[i] for i in idx]

    run_training(
        model, batches(), lambda m, b: planner_batch_loss(m, b), opt,
        pc["max_steps"], log=log,
    )
    model.eval()
    return model


def train_generator(encoded, vocab, cfg, seed, mode="pair_full", log=None):
    """Denoising training for the pair modes (identical for full/light), or
    plain seq2seq training for the baselines."""
    torch.manual_seed(derive_seed(seed, f"gen-init-{mode}"))
    model = build_model(model_config(cfg, len(vocab), "encoder_decoder"))
    gc = cfg["generator"]
    opt = OptimizerState(model, gc["lr_max"], gc["warmup"], gc["grad_clip"])
    rng = np.random.default_rng(derive_seed(seed, f"gen-data-{mode}"))
    train_mode = "pair_full" if mode in ("pair_full", "pair_light") else mode
    strategy = gc["strategy"]

    def make_example(d):
        if train_mode == "pair_full":
            frac = rng.uniform(gc["mask_fraction_low"], gc["mask_fraction_high"])
            corrupted = corrupt_target(
                d.flat_target, d.spans, CorruptionConfig(strategy, frac), rng
            )
            return (d.prompt, assignment_tokens(d.plan), corrupted, d.flat_target)
        if train_mode == "kp_seq2seq":
            return (d.prompt, shuffle_phrases(d.keyphrases, rng), [], d.flat_target)
        return (d.prompt, [], [], d.flat_target)

    def batches():
        for idx in _epoch_batches(len(encoded), gc["batch_size"], rng):
            yield [make_example(encoded[i]) for i in idx]

    from .generator import generator_batch_loss

    run_training(
        model, batches(), lambda m, b: generator_batch_loss(m, b, train_mode), opt,
        gc["max_steps"], log=log,
    )
    model.eval()
    return model


def train_lm(encoded, vocab, cfg, seed, log=None):
    torch.manual_seed(derive_seed(seed, "lm-init"))
    model = build_model(model_config(cfg, len(vocab), "causal_lm"))
    lc = cfg["lm"]
    opt = OptimizerState(model, lc["lr_max"], lc["warmup"], lc["grad_clip"])
    rng = np.random.default_rng(derive_seed(seed, "lm-data"))
    import torch.nn.functional as F

    def loss_fn(m, idx):
        rows = [encoded[i].flat_target for i in idx]
        T = max(len(r) for r in rows) + 1
        ids = torch.full((len(rows), T), PAD_ID, dtype=torch.long)
        tgt = torch.full((len(rows), T), PAD_ID, dtype=torch.long)
        from .vocab import BOS_ID

        for b, r in enumerate(rows):
            ids[b, 0] = BOS_ID
            ids[b, 1 : len(r) + 1] = torch.tensor(r)
            tgt[b, : len(r)] = torch.tensor(r)
            tgt[b, len(r)] = EOS_ID
        logits = m(ids).logits
        return F.cross_entropy(
            logits.reshape(-1, logits.size(-1)), tgt.reshape(-1), ignore_index=PAD_ID
        )

    run_training(
        model, _epoch_batches(len(encoded), lc["batch_size"], rng), loss_fn, opt,
        lc["max_steps"], log=log,
    )
    model.eval()
    return model


def predict_plans(planner, encoded):
    return [predict_plan(planner, d.prompt, d.keyphrases) for d in encoded]


def decode_config(cfg, mode, enforce=None):
    dc = cfg["decode"]
    return DecodeConfig(
        k=dc["k"],
        p=dc["p"],
        temperature=dc["temperature"],
        enforce=dc["enforce"] if enforce is None else enforce,
        window=dc["window"],
        samples=dc["samples"],
        max_len=dc["max_len"],
        fixed_length=(mode == "pair_full"),
    )


def generate_split(generator, lm, encoded, plans, cfg, seed, mode="pair_full",
                   iterations=1, enforce=None):
    """Refine every document; returns (drafts, traces, corrected_plans)."""
    rcfg = RefineConfig(
        iterations=iterations,
        decode=decode_config(cfg, mode, enforce),
        max_target_len=cfg["generator"]["max_target_len"],
    )
    drafts, traces, corrected = [], [], []
    for i, (doc, plan) in enumerate(zip(encoded, plans)):
        plan = correct_plan(plan)
        if mode in ("pair_full", "pair_light"):
            assignment = assignment_tokens(plan)
        elif mode == "kp_seq2seq":
            rng = np.random.default_rng(derive_seed(seed, f"kporder{i}"))
            assignment = shuffle_phrases(doc.keyphrases, rng)
        else:
            assignment = []
        draft, trace = run_refinement(
            plan, doc.prompt, assignment, generator, lm, rcfg,
            derive_seed(seed, f"doc{i}"), mode,
        )
        drafts.append(draft)
        traces.append(trace)
        corrected.append(plan)
    return drafts, traces, corrected


def evaluate_outputs(draft_tokens, references, plans=None, lm=None, smooth=False):
    report = {
        "bleu4": M.bleu4(draft_tokens, references, smooth=smooth),
        "rouge_l": M.rouge_l(draft_tokens, references),
        "mean_output_len": sum(len(t) for t in draft_tokens) / max(1, len(draft_tokens)),
        "mean_reference_len": sum(len(r) for r in references) / max(1, len(references)),
    }
    if plans is not None:
        report["kp_coverage"] = M.kp_coverage(draft_tokens, plans)
    if lm is not None:
        ppls = [lm_perplexity(lm, t) for t in draft_tokens if t]
        report["mean_ppl"] = sum(ppls) / len(ppls) if ppls else None
    return report


def iteration_series(traces, references, lm=None, smooth=False):
    """Per-pass BLEU/ROUGE (and mean perplexity) across a set of traces."""
    n_iter = max(len(t.records) for t in traces)
    series = {"iteration": list(range(1, n_iter + 1)), "bleu4": [], "rouge_l": []}
    if lm is not None:
        series["mean_ppl"] = []
    for r in range(n_iter):
        drafts = [
            t.records[min(r, len(t.records) - 1)].draft_tokens for t in traces
        ]
        series["bleu4"].append(M.bleu4(drafts, references, smooth=smooth))
        series["rouge_l"].append(M.rouge_l(drafts, references))
        if lm is not None:
            ppls = [lm_perplexity(lm, d) for d in drafts if d]
            series["mean_ppl"].append(sum(ppls) / len(ppls))
    return series


def save_outputs(drafts, plans, prompts, lm, path):
    from .report import atomic_write_text

    lines = []
    for draft, plan, prompt in zip(drafts, plans, prompts):
        lines.append(
            json.dumps(
                {
                    "prompt": list(prompt),
                    "plan": {
                        "assignment": plan.assignment,
                        "positions": plan.positions,
                        "phrase_lens": plan.phrase_lens,
                    },
                    "draft_tokens": draft.tokens,
                    "probs": draft.probs,
                    "forced": draft.forced,
                    "ppl": lm_perplexity(lm, draft.tokens) if draft.tokens else None,
                }
            )
        )
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_outputs(path):
    rows = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                rows.append(json.loads(line))
    return rows
