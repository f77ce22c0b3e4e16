"""Metric reports: a JSON object, a TSV flat view, and matplotlib figures
rendered alongside (per-iteration refinement curves, per-mode score bars).
"""

import json
import os
import tempfile

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def atomic_write_text(path, text):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def _flatten(obj, prefix=""):
    rows = []
    if isinstance(obj, dict):
        for k in sorted(obj):
            rows.extend(_flatten(obj[k], f"{prefix}{k}." if prefix else f"{k}."))
    elif isinstance(obj, (list, tuple)):
        for i, v in enumerate(obj):
            rows.extend(_flatten(v, f"{prefix}{i}."))
    else:
        rows.append((prefix[:-1], obj))
    return rows


def write_report(report, out_dir, name="report"):
    """Write <name>.json and <name>.tsv; returns the JSON path.

    The JSON rendering is canonical (sorted keys, no whitespace variance)
    so identical metric values produce byte-identical files.
    """
    os.makedirs(out_dir, exist_ok=True)
    json_path = os.path.join(out_dir, f"{name}.json")
    atomic_write_text(json_path, json.dumps(report, sort_keys=True, indent=2) + "\n")
    tsv_path = os.path.join(out_dir, f"{name}.tsv")
    lines = [f"{key}\t{val}" for key, val in _flatten(report)]
    atomic_write_text(tsv_path, "\n".join(lines) + "\n")
    return json_path


def plot_refinement_curves(series, out_dir, name="refinement"):
    """series: dict with 'iteration' plus metric-name -> list of values."""
    os.makedirs(out_dir, exist_ok=True)
    iters = series["iteration"]
    metrics = [k for k in series if k != "iteration"]
    fig, axes = plt.subplots(1, len(metrics), figsize=(4 * len(metrics), 3.2))
    if len(metrics) == 1:
        axes = [axes]
    for ax, key in zip(axes, metrics):
        ax.plot(iters, series[key], marker="o")
        ax.set_xlabel("refinement pass")
        ax.set_ylabel(key)
        ax.set_xticks(iters)
        ax.grid(alpha=0.3)
    fig.tight_layout()
    path = os.path.join(out_dir, f"{name}.png")
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_mode_scores(scores, out_dir, metric="bleu4", name="mode_scores"):
    """scores: mode -> value (in [0,1]); rendered as percentage bars."""
    os.makedirs(out_dir, exist_ok=True)
    modes = list(scores)
    vals = [100.0 * scores[m] for m in modes]
    fig, ax = plt.subplots(figsize=(1.2 * len(modes) + 2, 3.2))
    ax.bar(modes, vals, color="#4878a8")
    ax.set_ylabel(f"{metric} (%)")
    ax.grid(axis="y", alpha=0.3)
    for i, v in enumerate(vals):
        ax.text(i, v, f"{v:.1f}", ha="center", va="bottom", fontsize=9)
    fig.tight_layout()
    path = os.path.join(out_dir, f"{name}.png")
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
