"""Command-line entry point.

Subcommands cover the whole experiment lifecycle: synth, extract-kp,
train-planner, train-generator, train-lm, plan, generate, refine,
evaluate, end2end, gradcheck.  Every command is deterministic given the
same --config and --seed; failures exit nonzero with one machine-readable
error line on stderr.
"""

import argparse
import json
import os
import sys

import numpy as np
import torch

from . import pipeline as P
from .config import ConfigError, derive_seed, load_config, save_config
from .corpus import (
    GrammarConfig,
    extract_corpus_keyphrases,
    kp_content_coverage,
    load_corpus,
    save_corpus,
    split,
    synth_corpus,
)
from .generator import MODES
from .nnet import load_checkpoint, save_checkpoint
from .planner import ContentPlan, load_plans, save_plans
from .refine import RefineTrace
from .report import atomic_write_text, plot_mode_scores, plot_refinement_curves, write_report
from .vocab import Vocabulary, build_vocab


def _grammar_config(cfg):
    c = cfg["corpus"]
    return GrammarConfig(
        n_topics=c["n_topics"],
        entities_per_topic=c["entities_per_topic"],
        sentences_per_doc=(c["min_sentences"], c["max_sentences"]),
        kp_coverage=c["kp_coverage"],
        max_phrase_len=c["max_phrase_len"],
    )


def _fractions(cfg):
    c = cfg["corpus"]
    return (c["train_fraction"], c["valid_fraction"], c["test_fraction"])


def _load_split(out_dir, name):
    return load_corpus(os.path.join(out_dir, f"{name}.jsonl"))


def _load_vocab(out_dir):
    return Vocabulary.load(os.path.join(out_dir, "vocab.tsv"))


def cmd_synth(args, cfg):
    rng = np.random.default_rng(derive_seed(args.seed, "corpus"))
    docs = synth_corpus(_grammar_config(cfg), cfg["corpus"]["n_docs"], rng)
    os.makedirs(args.out_dir, exist_ok=True)
    save_corpus(docs, os.path.join(args.out_dir, "corpus.jsonl"))
    train, valid, test = split(docs, _fractions(cfg))
    for name, part in (("train", train), ("valid", valid), ("test", test)):
        save_corpus(part, os.path.join(args.out_dir, f"{name}.jsonl"))
    vocab = build_vocab(train, min_count=cfg["corpus"]["min_count"])
    vocab.save(os.path.join(args.out_dir, "vocab.tsv"))
    print(
        f"synth: {len(docs)} docs ({len(train)}/{len(valid)}/{len(test)}), "
        f"vocab {len(vocab)}, kp coverage {kp_content_coverage(docs):.3f}"
    )
    return {
        "corpus": "corpus.jsonl",
        "splits": ["train.jsonl", "valid.jsonl", "test.jsonl"],
        "vocab": "vocab.tsv",
    }


def cmd_extract_kp(args, cfg):
    docs = load_corpus(args.corpus)
    docs = extract_corpus_keyphrases(
        docs, cfg["corpus"]["llr_threshold"], cfg["corpus"]["max_phrase_len"]
    )
    docs = [d for d in docs if d.keyphrases]
    save_corpus(docs, args.out)
    print(f"extract-kp: {len(docs)} docs with keyphrases -> {args.out}")


def _train(args, cfg, which, mode=None):
    vocab = _load_vocab(args.out_dir)
    train_docs = _load_split(args.out_dir, "train")
    encoded = P.encode_docs(train_docs, vocab)
    log = lambda step, loss: print(f"  step {step}: loss {loss:.4f}")
    if which == "planner":
        model = P.train_planner(encoded, vocab, cfg, args.seed, log=log)
        name = "planner.ckpt"
    elif which == "lm":
        model = P.train_lm(encoded, vocab, cfg, args.seed, log=log)
        name = "lm.ckpt"
    else:
        model = P.train_generator(encoded, vocab, cfg, args.seed, mode=mode, log=log)
        name = f"generator-{'pair' if mode.startswith('pair') else mode}.ckpt"
    path = os.path.join(args.out_dir, name)
    save_checkpoint(model, path)
    print(f"train-{which}: saved {path}")
    return {f"{which}_checkpoint": name}


def cmd_plan(args, cfg):
    vocab = _load_vocab(args.out_dir)
    docs = _load_split(args.out_dir, args.split)
    encoded = P.encode_docs(docs, vocab)
    if args.source == "oracle":
        plans = [d.plan for d in encoded]
    else:
        planner = load_checkpoint(os.path.join(args.out_dir, "planner.ckpt"))
        plans = P.predict_plans(planner, encoded)
    path = os.path.join(args.out_dir, args.plans)
    save_plans(zip(plans, (d.prompt for d in encoded)), path)
    print(f"plan: wrote {len(plans)} plans ({args.source}) -> {path}")
    return {"plans": args.plans}


def _run_generation(args, cfg, iterations):
    vocab = _load_vocab(args.out_dir)
    docs = _load_split(args.out_dir, args.split)
    encoded = P.encode_docs(docs, vocab)
    plans = [p for p, _ in load_plans(os.path.join(args.out_dir, args.plans))]
    if len(plans) != len(encoded):
        raise ValueError("plan file does not match the split")
    if args.limit:
        encoded, plans = encoded[: args.limit], plans[: args.limit]
    gen_name = "generator-pair.ckpt" if args.mode.startswith("pair") else f"generator-{args.mode}.ckpt"
    generator = load_checkpoint(os.path.join(args.out_dir, gen_name))
    lm = load_checkpoint(os.path.join(args.out_dir, "lm.ckpt"))
    drafts, traces, corrected = P.generate_split(
        generator, lm, encoded, plans, cfg, args.seed, mode=args.mode,
        iterations=iterations, enforce=False if args.no_enforce else None,
    )
    out_path = os.path.join(args.out_dir, args.outputs)
    P.save_outputs(drafts, corrected, [d.prompt for d in encoded], lm, out_path)
    artifacts = {"outputs": args.outputs}
    if args.traces:
        tr_path = os.path.join(args.out_dir, args.traces)
        atomic_write_text(
            tr_path,
            "\n".join(
                json.dumps([r.__dict__ for r in t.records]) for t in traces
            )
            + "\n",
        )
        artifacts["traces"] = args.traces
    print(f"{'refine' if iterations > 1 else 'generate'}: wrote {out_path}")
    return artifacts


def cmd_generate(args, cfg):
    return _run_generation(args, cfg, iterations=1)


def cmd_refine(args, cfg):
    return _run_generation(args, cfg, iterations=args.iterations)


def cmd_evaluate(args, cfg):
    vocab = _load_vocab(args.out_dir)
    docs = _load_split(args.out_dir, args.split)
    rows = P.load_outputs(os.path.join(args.out_dir, args.outputs))
    refs = [vocab.encode(d.flat_target()) for d in docs][: len(rows)]
    if len(rows) != len(refs):
        raise ValueError("outputs do not match the split")
    draft_tokens = [r["draft_tokens"] for r in rows]
    plans = [
        ContentPlan(
            r["plan"]["assignment"], r["plan"]["positions"], r["plan"]["phrase_lens"]
        )
        for r in rows
    ]
    lm = None
    lm_path = os.path.join(args.out_dir, "lm.ckpt")
    if os.path.exists(lm_path):
        lm = load_checkpoint(lm_path)
    report = P.evaluate_outputs(
        draft_tokens, refs, plans, lm, smooth=cfg["eval"]["smooth_bleu"]
    )
    if args.traces:
        traces = _load_trace_file(os.path.join(args.out_dir, args.traces))
        series = P.iteration_series(traces, refs, lm, smooth=cfg["eval"]["smooth_bleu"])
        report["refinement_series"] = series
        plot_refinement_curves(series, args.out_dir, name=args.report + "-refinement")
    path = write_report(report, args.out_dir, name=args.report)
    print(f"evaluate: bleu4 {report['bleu4']:.4f} rouge_l {report['rouge_l']:.4f} -> {path}")
    return {"report": args.report + ".json"}


def _load_trace_file(path):
    from .refine import IterationRecord

    traces = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                traces.append(
                    RefineTrace([IterationRecord(**r) for r in json.loads(line)])
                )
    return traces


def cmd_end2end(args, cfg):
    manifest = {"config": {s: dict(v) for s, v in cfg.items()}, "seed": args.seed}
    manifest["synth"] = cmd_synth(args, cfg)
    manifest["planner"] = _train(args, cfg, "planner")
    manifest["generator"] = _train(args, cfg, "generator", mode="pair_full")
    manifest["lm"] = _train(args, cfg, "lm")

    vocab = _load_vocab(args.out_dir)
    scores = {}
    for source in ("oracle", "planner"):
        ns = argparse.Namespace(**vars(args))
        ns.split = "test"
        ns.source = source
        ns.plans = f"plans-{source}.jsonl"
        manifest[f"plan_{source}"] = cmd_plan(ns, cfg)
        ns.mode = "pair_full"
        ns.outputs = f"outputs-{source}.jsonl"
        ns.traces = f"traces-{source}.jsonl"
        ns.no_enforce = False
        ns.limit = args.limit
        ns.iterations = cfg["refine"]["iterations"]
        manifest[f"refine_{source}"] = cmd_refine(ns, cfg)
        ns.report = f"report-{source}"
        manifest[f"evaluate_{source}"] = cmd_evaluate(ns, cfg)
        with open(os.path.join(args.out_dir, f"report-{source}.json")) as f:
            scores[source] = json.load(f)["bleu4"]
    plot_mode_scores(scores, args.out_dir, name="plan-source-scores")
    manifest["figures"] = ["plan-source-scores.png"]
    atomic_write_text(
        os.path.join(args.out_dir, "manifest.json"),
        json.dumps(manifest, sort_keys=True, indent=2) + "\n",
    )
    print(f"end2end: manifest -> {os.path.join(args.out_dir, 'manifest.json')}")


def cmd_gradcheck(args, cfg):
    import torch

    from .nnet import gradcheck as gc
    from .planner import PlanExample, planner_batch_loss
    from .generator import generator_batch_loss
    from .nnet import ModelConfig, build_model
    import torch.nn.functional as F

    torch.manual_seed(args.seed)
    results = {}
    V, L = 32, 12
    for kind in ("bidir_causal_hybrid", "encoder_decoder", "causal_lm"):
        mc = ModelConfig(
            vocab_size=V, d_model=16, n_heads=2, n_layers=2, ffn_dim=32,
            max_len=32, dropout=0.0, kind=kind,
            uses_segment_embeddings=kind != "causal_lm", n_segments=3,
        )
        model = build_model(mc)
        if kind == "bidir_causal_hybrid":
            from .planner import KeyphraseSet

            ex = PlanExample(
                [9, 10, 11], KeyphraseSet([(12, 13), (14,)]), [12, 13, 5, 14, 5, 3],
                [1, 2, 4, 0, 2, 0],
            )
            loss_fn = lambda m, b: planner_batch_loss(m, b)
            batch = [ex]
        elif kind == "encoder_decoder":
            loss_fn = lambda m, b: generator_batch_loss(m, b, "pair_full")
            batch = [([9, 10], [12, 13, 5], [4, 4, 15], [14, 12, 15])]
        else:
            def loss_fn(m, b):
                logits = m(b).logits
                return F.cross_entropy(
                    logits.reshape(-1, V), torch.roll(b, -1, 1).reshape(-1)
                )

            batch = torch.randint(8, V, (2, L))
        err = gc.gradcheck(model, batch, loss_fn, epsilon=1e-4, max_coords=200,
                           seed=args.seed)
        results[kind] = err
        print(f"gradcheck {kind}: max relative error {err:.3e}")
    worst = max(results.values())
    if worst >= 1e-4:
        raise RuntimeError(f"gradcheck failed: {worst:.3e} >= 1e-4")
    print("gradcheck: all kinds below 1e-4")


def build_parser():
    parser = argparse.ArgumentParser(prog="planfill")
    parser.add_argument("--config", default=None, help="INI config file")
    parser.add_argument("--set", action="append", default=[], metavar="SEC.KEY=VAL",
                        help="override a single config value")
    parser.add_argument("--seed", type=int, default=13)
    parser.add_argument("--out-dir", default="runs/default")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("synth")
    p = sub.add_parser("extract-kp")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)

    sub.add_parser("train-planner")
    p = sub.add_parser("train-generator")
    p.add_argument("--mode", choices=MODES, default="pair_full")
    sub.add_parser("train-lm")

    p = sub.add_parser("plan")
    p.add_argument("--split", default="test")
    p.add_argument("--source", choices=("oracle", "planner"), default="planner")
    p.add_argument("--plans", default="plans.jsonl")

    for name in ("generate", "refine"):
        p = sub.add_parser(name)
        p.add_argument("--split", default="test")
        p.add_argument("--plans", default="plans.jsonl")
        p.add_argument("--mode", choices=MODES, default="pair_full")
        p.add_argument("--outputs", default="outputs.jsonl")
        p.add_argument("--traces", default=None)
        p.add_argument("--no-enforce", action="store_true")
        p.add_argument("--limit", type=int, default=0)
        if name == "refine":
            p.add_argument("--R", dest="iterations", type=int, default=5)

    p = sub.add_parser("evaluate")
    p.add_argument("--split", default="test")
    p.add_argument("--outputs", default="outputs.jsonl")
    p.add_argument("--traces", default=None)
    p.add_argument("--report", default="report")

    p = sub.add_parser("end2end")
    p.add_argument("--limit", type=int, default=0)

    sub.add_parser("gradcheck")
    return parser


COMMANDS = {
    "synth": cmd_synth,
    "extract-kp": cmd_extract_kp,
    "train-planner": lambda a, c: _train(a, c, "planner"),
    "train-generator": lambda a, c: _train(a, c, "generator", mode=a.mode),
    "train-lm": lambda a, c: _train(a, c, "lm"),
    "plan": cmd_plan,
    "generate": cmd_generate,
    "refine": cmd_refine,
    "evaluate": cmd_evaluate,
    "end2end": cmd_end2end,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    torch.set_num_threads(max(1, os.cpu_count() or 1))
    try:
        cfg = load_config(args.config, args.set)
        os.makedirs(args.out_dir, exist_ok=True)
        save_config(cfg, os.path.join(args.out_dir, "resolved-config.ini"))
        COMMANDS[args.command](args, cfg)
    except (ConfigError, ValueError, RuntimeError, OSError) as exc:
        line = json.dumps(
            {"error": type(exc).__name__, "command": args.command, "message": str(exc)}
        )
        print(f"error\t{line}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
