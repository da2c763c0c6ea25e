"""CSV reports built from run logs: learning curves, average loss, length buckets."""

from __future__ import annotations

import csv
import math
import re
from pathlib import Path

import numpy as np

from .evaluation import corpus_bleu

DEFAULT_BUCKETS = [(0, 5), (5, 10), (10, 15), (15, None)]


def write_csv(rows, path, fieldnames=None):
    rows = list(rows)
    if fieldnames is None:
        fieldnames = list(rows[0]) if rows else []
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("NA" if row.get(k) is None else row.get(k)) for k in fieldnames})
    return Path(path)


def slug(name: str) -> str:
    """File-name friendly label: ``"Decline + DMC"`` -> ``"decline_dmc"``."""
    return re.sub(r"[^a-z0-9]+", "_", name.lower()).strip("_")


def _label(run, i):
    return slug(run.config.get("name") or run.method) or f"run{i}"


def _labels(logs):
    labels = [_label(r, i) for i, r in enumerate(logs)]
    seen = {}
    out = []
    for lab in labels:
        seen[lab] = seen.get(lab, 0) + 1
        out.append(lab if labels.count(lab) == 1 else f"{lab}_{seen[lab]}")
    return out


# ---------------------------------------------------------------------------
# learning curves


def curve_rows(run):
    return [{"phase": p["phase"], "steps": p["steps"], "dev_bleu": p["dev_bleu"]} for p in run.phases]


def report_curves(logs, out_dir) -> list[Path]:
    """One (phase, steps, dev_bleu) CSV per run plus ``curves.csv`` on a shared step axis."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    labels = _labels(logs)
    paths = [write_csv(curve_rows(run), out / f"curve_{lab}.csv", ["phase", "steps", "dev_bleu"])
             for run, lab in zip(logs, labels)]
    steps = sorted({p["steps"] for run in logs for p in run.phases})
    by_run = [{p["steps"]: p["dev_bleu"] for p in run.phases} for run in logs]
    rows = [{"steps": s, **{lab: m.get(s) for lab, m in zip(labels, by_run)}} for s in steps]
    paths.append(write_csv(rows, out / "curves.csv", ["steps", *labels]))
    return paths


# ---------------------------------------------------------------------------
# average loss against training count


def avg_loss_series(run) -> list[tuple[float, float]]:
    """(mean per-sample training count, mean full-corpus NLL) before every phase and at the end."""
    n = len(run.training_counts) or len(run.train_source_lengths)
    pts = []
    seen = 0
    for p in run.phases:
        pts.append((seen / n, p["train_loss"]))
        seen += p["selected_count"]
    if run.final:
        pts.append((seen / n, run.final["final_train_loss"]))
    return pts


def report_avg_loss(logs, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for run, lab in zip(logs, _labels(logs)):
        rows = [{"training_count": c, "mean_loss": loss} for c, loss in avg_loss_series(run)]
        paths.append(write_csv(rows, out / f"avg_loss_{lab}.csv", ["training_count", "mean_loss"]))
    return paths


def loss_at_count(series, count) -> float:
    """Linear interpolation of an avg-loss series at ``count`` (NaN outside its range)."""
    xs = np.array([c for c, _ in series])
    ys = np.array([v for _, v in series])
    if count < xs[0] or count > xs[-1]:
        return math.nan
    return float(np.interp(count, xs, ys))


# ---------------------------------------------------------------------------
# sentence-length buckets


def _in_bucket(n, lo, hi):
    return n >= lo and (hi is None or n < hi)


def report_length_buckets(run, test_corpus, bucket_edges=DEFAULT_BUCKETS, params=None,
                          beam_size=None, alpha=None, slack=None) -> list[dict]:
    """Per source-length bucket: mean training count of train samples and test BLEU.

    Buckets are half-open ``[lo, hi)``; ``hi=None`` means unbounded. Empty
    buckets get ``None`` in place of the statistic.
    """
    from .decode import beam_decode
    from .harness import final_params

    cfg = run.config
    beam_size = beam_size or cfg.get("beam_size", 5)
    alpha = cfg.get("length_penalty", 1.0) if alpha is None else alpha
    slack = cfg.get("decode_slack", 5) if slack is None else slack
    params = params if params is not None else final_params(run)

    counts = np.asarray(run.training_counts)
    lengths = np.asarray(run.train_source_lengths)
    hyps = [beam_decode(params, s.source, beam_size, alpha, len(s.source) + slack).translation
            for s in test_corpus]
    rows = []
    for lo, hi in bucket_edges:
        in_train = np.array([_in_bucket(n, lo, hi) for n in lengths], dtype=bool)
        test_idx = [i for i, s in enumerate(test_corpus) if _in_bucket(len(s.source), lo, hi)]
        bleu = None
        if test_idx:
            bleu = corpus_bleu([hyps[i] for i in test_idx], [list(test_corpus[i].target) for i in test_idx]).bleu
        rows.append({
            "bucket_lo": lo,
            "bucket_hi": hi,
            "n_train": int(in_train.sum()),
            "mean_training_count": float(counts[in_train].mean()) if in_train.any() else None,
            "n_test": len(test_idx),
            "test_bleu": bleu,
        })
    return rows


def parse_buckets(spec: str):
    """``"0,5,10,15"`` -> [(0,5), (5,10), (10,15), (15,None)]."""
    edges = [int(x) for x in spec.split(",") if x.strip()]
    if len(edges) < 1 or edges != sorted(edges):
        raise ValueError(f"bucket edges must be increasing integers, got {spec!r}")
    return [(lo, hi) for lo, hi in zip(edges, edges[1:])] + [(edges[-1], None)]
