"""End-to-end acceptance checks, one test per numbered criterion.

Each test records a PASS/FAIL line (printed in the terminal summary) and
then asserts, so a failing criterion shows up both in the summary and as a
failed test.
"""

import csv
import math
import re
import subprocess
import sys
import time
from decimal import Decimal, getcontext
from pathlib import Path

import numpy as np
import pytest

from conftest import record_criterion, tiny_config
from curriclab.cli import main as cli_main
from curriclab.config import ExperimentConfig
from curriclab.curriculum import (
    CurriculumState,
    DifficultyScore,
    advance_phase,
    competence_dmc,
    competence_functional,
    difficulty_decline,
    select_subset,
)
from curriclab.evaluation import corpus_bleu
from curriclab.harness import METHOD_ROWS, build_task, row_config, run_experiment, steps_to_reach
from curriclab.model import backward, init_params
from curriclab.reports import avg_loss_series, loss_at_count, parse_buckets, report_length_buckets, slug
from reference_loop import plain_training_run
from test_evaluation import FIXTURE, split
from test_model import finite_difference, relative_error

pytestmark = pytest.mark.acceptance
TESTS = Path(__file__).parent
getcontext().prec = 50


# ---------------------------------------------------------------------------
# 1. formula oracles


def oracle_decline(prev, cur, phase, a):
    if phase < a:
        return Decimal(cur)
    return -(Decimal(prev) - Decimal(cur)) / max(Decimal(prev), Decimal("1e-8"))


def oracle_functional(t, T, c0, p):
    inner = Decimal(t) / Decimal(T) * (1 - Decimal(c0) ** p) + Decimal(c0) ** p
    root = inner if p == 1 else inner.sqrt()
    return min(Decimal(1), root)


def oracle_dmc(bleu_t, bleu_T, beta, c0, previous):
    raw = min(Decimal(1), Decimal(bleu_t) / (Decimal(bleu_T) * Decimal(beta)) * (1 - Decimal(c0)) + Decimal(c0))
    return max(raw, Decimal(previous))


def oracle_selection(values, c):
    n = len(values)
    k = max(1, math.ceil(n * c - 1e-9))
    pairs = sorted((v, i) for i, v in enumerate(values))
    return [i for _, i in pairs[:k]]


def rel_err(got, want):
    want = float(want)
    return abs(got - want) / max(abs(want), 1e-300) if want else abs(got)


def test_criterion_01_formula_oracles():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = {"decline": 0.0, "functional": 0.0, "dmc": 0.0}
    selection_mismatches = 0
    for _ in range(1000):
        a = int(rng.integers(1, 4))
        phase = int(rng.integers(0, 6))
        prev, cur = rng.exponential(20.0, size=2)
        if rng.random() < 0.05:
            prev = 0.0
        state = CurriculumState(a=a, bleu_T=10.0)
        if phase >= a:
            state.phase = phase - a
            state.record_losses([prev])
        state.phase = phase
        state.record_losses([cur])
        got = difficulty_decline(0, state).value
        worst["decline"] = max(worst["decline"], rel_err(got, oracle_decline(prev, cur, phase, a)))

        T = int(rng.integers(1, 50))
        t = int(rng.integers(0, 2 * T))
        c0 = float(rng.uniform(0.01, 1.0))
        p = int(rng.choice([1, 2]))
        got = competence_functional(t, T, c0, p)
        worst["functional"] = max(worst["functional"], rel_err(got, oracle_functional(t, T, c0, p)))

        bleu_T = float(rng.uniform(1, 100))
        bleu_t = float(rng.uniform(0, 110))
        beta = float(rng.uniform(0.1, 1.0))
        previous = float(rng.uniform(c0, 1.0))
        s = CurriculumState(c0=c0, beta=beta, bleu_T=bleu_T, competence=previous)
        got = competence_dmc(bleu_t, s)
        worst["dmc"] = max(worst["dmc"], rel_err(got, oracle_dmc(bleu_t, bleu_T, beta, c0, previous)))

        n = int(rng.integers(1, 300))
        values = rng.normal(size=n)
        if rng.random() < 0.3:
            values = np.round(values, 1)   # force ties
        c = float(rng.uniform(1e-3, 1.0))
        got_sel = select_subset([DifficultyScore(i, float(v)) for i, v in enumerate(values)], c, n)
        selection_mismatches += got_sel != oracle_selection(values.tolist(), c)
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) <= 1e-12 and selection_mismatches == 0 and elapsed < 10
    detail = (f"max rel err decline={worst['decline']:.1e} functional={worst['functional']:.1e} "
              f"dmc={worst['dmc']:.1e}; selection mismatches={selection_mismatches}/1000; {elapsed:.1f}s")
    record_criterion(1, ok, detail)
    assert ok, detail


# ---------------------------------------------------------------------------
# 2. gradient soundness


def test_criterion_02_gradient_check():
    from curriclab.data import generate_copy_task

    start = time.perf_counter()
    params = init_params(tiny_config(), np.random.default_rng(0))
    batch = list(generate_copy_task(3, (2, 5), 12, seed=1))
    grads, _ = backward(params, batch, np.random.default_rng(5))
    numeric = finite_difference(params, batch, seed=5)
    errors = {name: relative_error(grads[name], numeric[name]) for name in params.weights}
    elapsed = time.perf_counter() - start
    worst = max(errors, key=errors.get)
    ok = all(e <= 1e-4 for e in errors.values()) and len(errors) == len(params.weights) and elapsed < 120
    detail = (f"{len(errors)} tensors, worst rel err {errors[worst]:.1e} ({worst}); "
              f"{params.num_parameters()} weights; {elapsed:.1f}s")
    record_criterion(2, ok, detail)
    assert ok, detail


# ---------------------------------------------------------------------------
# 3. BLEU oracle


def test_criterion_03_bleu_fixture():
    diffs = []
    for c in FIXTURE["corpora"]:
        diffs.append(abs(corpus_bleu(split(c["hyps"]), split(c["refs"])).bleu - c["bleu"]))
    clip = corpus_bleu([["the"] * 7], [["the", "cat", "is", "on", "the", "mat"]])
    brevity = corpus_bleu([list("abcdefghi")], [list("abcdefghij")])
    ok = (max(diffs) <= 0.01 and len(diffs) == 20
          and math.isclose(clip.ngram_precisions[0], 2 / 7, rel_tol=1e-12)
          and math.isclose(brevity.brevity_penalty, math.exp(1 - 10 / 9), rel_tol=1e-12))
    detail = (f"{len(diffs)} corpora, max |diff| {max(diffs):.2e} BLEU; p1={clip.ngram_precisions[0]:.6f}; "
              f"BP={brevity.brevity_penalty:.6f}")
    record_criterion(3, ok, detail)
    assert ok, detail


# ---------------------------------------------------------------------------
# 4. baseline degeneracy


def test_criterion_04_baseline_degeneracy():
    cfg = ExperimentConfig(seed=7, max_phases=30, patience=50, token_budget=64, beam_size=2)
    cfg.task.kind = "copy"
    cfg.task.n_train, cfg.task.n_dev, cfg.task.n_test = 200, 20, 20
    cfg.task.len_min, cfg.task.len_max, cfg.task.vocab_size = 2, 8, 16
    run = run_experiment(cfg)
    plain = plain_training_run(cfg)
    same_log = run.fingerprint() == plain.fingerprint()
    same_params = run.params.digest() == plain.params.digest()
    ok = same_log and same_params and len(run.phases) == 30
    detail = (f"{len(run.phases)} phases, {run.final['total_steps']} steps; log identical={same_log}, "
              f"weights identical={same_params}")
    record_criterion(4, ok, detail)
    assert ok, detail


# ---------------------------------------------------------------------------
# shared dict-translation runs for criteria 5-8

DICT_SEEDS = (1, 2, 3)
BUCKETS = "2,4,6,8"


def dict_config(seed):
    cfg = ExperimentConfig(seed=seed, token_budget=128)
    cfg.task.kind = "dict"
    cfg.task.n_train, cfg.task.n_dev, cfg.task.n_test = 5000, 200, 200
    cfg.task.vocab_size, cfg.task.swap_window = 64, 2
    cfg.task.len_min, cfg.task.len_max = 2, 10
    return cfg


@pytest.fixture(scope="module")
def dict_runs():
    out = []
    cpu = time.process_time()
    for seed in DICT_SEEDS:
        cfg = dict_config(seed)
        data = build_task(cfg.task, seed)
        base = run_experiment(cfg, data=data)
        dcl = run_experiment(row_config(cfg, "decline", "dmc", "length"), baseline=base, data=data)
        out.append((base, dcl, data))
    return out, time.process_time() - cpu


def bleu_at(run, step):
    steps, bleu = zip(*run.curve())
    return float(np.interp(step, steps, bleu))


def test_criterion_05_curriculum_boundaries(dict_runs):
    runs, _ = dict_runs
    problems = []
    for base, dcl, (train, _, _) in runs:
        n = len(train)
        if dcl.phases[0]["selected_count"] != math.ceil(0.2 * n):
            problems.append(f"phase 0 selected {dcl.phases[0]['selected_count']}")
        threshold = 0.9 * dcl.final["bleu_T"]
        hit = next((i for i, p in enumerate(dcl.phases) if p["dev_bleu"] >= threshold), None)
        if hit is None:
            problems.append("dev BLEU never reached 0.9 * bleu_T")
            continue
        for p in dcl.phases[hit + 1:]:
            if p["competence"] != 1.0 or p["selected_count"] != n:
                problems.append(f"phase {p['phase']} competence {p['competence']}")
    # the state machine on its own, with bleu_t exactly at the threshold
    state = CurriculumState(bleu_T=40.0)
    state, sel = advance_phase(state, np.arange(1, 11, dtype=float), 0.0)
    edge = [len(sel.ids)]
    for bleu in (36.0, 5.0, 0.0):
        state, sel = advance_phase(state, np.arange(1, 11, dtype=float), bleu)
        edge.append(len(sel.ids))
    if edge != [2, 10, 10, 10]:
        problems.append(f"state machine sizes {edge}")
    ok = not problems
    firsts = [r[1].phases[0]["selected_count"] for r in runs]
    detail = f"phase-0 selections {firsts} of 5000; full corpus after 0.9*bleu_T in all seeds" if ok else "; ".join(problems)
    record_criterion(5, ok, detail)
    assert ok, detail


def test_criterion_06_faster_convergence(dict_runs):
    runs, cpu = dict_runs
    base_need, dcl_need, base_q, dcl_q = [], [], [], []
    for base, dcl, _ in runs:
        target = base.final["best_dev_bleu"]
        base_need.append(base.final["best_step"])
        dcl_need.append(steps_to_reach(dcl, target))
        quarter = 0.25 * base.final["total_steps"]
        base_q.append(bleu_at(base, quarter))
        dcl_q.append(bleu_at(dcl, quarter))
    reach_ok = np.mean(dcl_need) <= np.mean(base_need)
    early_ok = np.mean(dcl_q) > np.mean(base_q)
    ok = reach_ok and early_ok and cpu < 30 * 60
    detail = (f"steps to baseline best: DCL {np.mean(dcl_need):.0f} vs baseline {np.mean(base_need):.0f} "
              f"(per seed {dcl_need} vs {base_need}); BLEU at 25% of baseline steps: "
              f"DCL {np.mean(dcl_q):.2f} vs baseline {np.mean(base_q):.2f}; {cpu / 60:.1f} CPU-min")
    record_criterion(6, ok, detail)
    assert ok, detail


def test_criterion_07_lower_loss_at_matched_counts(dict_runs):
    runs, _ = dict_runs
    base_series = [avg_loss_series(b) for b, _, _ in runs]
    dcl_series = [avg_loss_series(d) for _, d, _ in runs]
    reach = min(s[-1][0] for s in dcl_series + base_series)
    counts = sorted({c for s in base_series for c, _ in s if c <= reach})
    rows = []
    for c in counts:
        b = np.mean([loss_at_count(s, c) for s in base_series])
        d = np.mean([loss_at_count(s, c) for s in dcl_series])
        rows.append((c, d, b))
    worse = [(c, d, b) for c, d, b in rows if d > b + 1e-9]
    ok = bool(rows) and not worse
    shown = ", ".join(f"{c:g}: {d:.2f}/{b:.2f}" for c, d, b in rows[:6])
    detail = f"{len(rows)} matched counts, DCL above baseline at {len(worse)}; count: DCL/baseline {shown}"
    if worse:
        detail += f"; first violation at count {worse[0][0]:g}"
    record_criterion(7, ok, detail)
    assert ok, detail


def test_criterion_08_training_counts_by_length(dict_runs):
    runs, _ = dict_runs
    buckets = parse_buckets(BUCKETS)
    dcl_means, base_flat = [], True
    for base, dcl, (_, _, test) in runs:
        b_rows = report_length_buckets(base, test, buckets)
        d_rows = report_length_buckets(dcl, test, buckets)
        epochs = base.final["phases_run"]
        base_flat &= all(r["mean_training_count"] == epochs for r in b_rows if r["n_train"])
        dcl_means.append([r["mean_training_count"] for r in d_rows])
    avg = np.mean(np.array(dcl_means, dtype=float), axis=0)
    non_increasing = bool(np.all(np.diff(avg) <= 1e-12))
    ok = non_increasing and base_flat
    detail = (f"DCL mean count by bucket {BUCKETS}+: {', '.join(f'{v:.2f}' for v in avg)}; "
              f"baseline flat at epoch count={base_flat}")
    record_criterion(8, ok, detail)
    assert ok, detail


# ---------------------------------------------------------------------------
# 9. invariant suites


def test_criterion_09_invariant_suites():
    proc = subprocess.run(
        [sys.executable, "-m", "pytest", str(TESTS), "-m", "invariant and not acceptance", "-q",
         "-p", "no:cacheprovider", "--hypothesis-show-statistics", "--hypothesis-seed=0"],
        capture_output=True, text=True, cwd=TESTS.parent,
    )
    counts: dict[str, int] = {}
    current = None
    for line in proc.stdout.splitlines():
        head = re.match(r"^(\S+::\S+):\s*$", line)
        if head:
            current = head.group(1)
            counts.setdefault(current, 0)
            continue
        m = re.search(r"(\d+) passing examples", line)
        if m and current:
            counts[current] += int(m.group(1))
    summary = re.search(r"(\d+) passed", proc.stdout)
    passed = int(summary.group(1)) if summary else 0
    short = {k: v for k, v in counts.items() if v < 200}
    ok = proc.returncode == 0 and counts and not short and passed == len(counts)
    detail = f"{len(counts)} property tests passed, min {min(counts.values(), default=0)} cases each"
    if short:
        detail += f"; under 200: {short}"
    if proc.returncode:
        detail += f"; pytest exit {proc.returncode}: {proc.stdout[-400:]}"
    record_criterion(9, ok, detail)
    assert ok, detail


# ---------------------------------------------------------------------------
# 10. matrix smoke


def test_criterion_10_matrix_smoke(tmp_path_factory):
    out = tmp_path_factory.mktemp("matrix")
    args = ["matrix", "--task.kind", "copy", "--task.n_train", "2000", "--task.n_dev", "100",
            "--task.n_test", "100", "--task.len_max", "10", "--token_budget", "128", "--out", str(out)]
    cpu = time.process_time()
    code = cli_main(args)
    cpu = time.process_time() - cpu
    problems = []
    if code != 0:
        problems.append(f"exit code {code}")
    table = list(csv.DictReader(open(out / "table.csv"))) if (out / "table.csv").exists() else []
    if len(table) != len(METHOD_ROWS):
        problems.append(f"table has {len(table)} rows")
    required = {"method", "metric", "schedule", "batching", "test_bleu", "best_dev_bleu", "total_steps"}
    for row in table:
        if not required <= set(row) or any(row[k] in ("", None) for k in required):
            problems.append(f"malformed row {row.get('method')}")
        elif not 0.0 <= float(row["test_bleu"]) <= 100.0:
            problems.append(f"test BLEU out of range for {row['method']}")
    expected = ["table.csv", "curves.csv"]
    for row in table:
        s = slug(row["method"])
        expected += [f"curve_{s}.csv", f"avg_loss_{s}.csv", f"length_buckets_{s}.csv", f"{s}.jsonl"]
    missing = [name for name in expected if not (out / name).exists()]
    if missing:
        problems.append(f"missing {missing}")
    ok = not problems and cpu < 20 * 60
    best = ", ".join(f"{r['method']}={float(r['test_bleu']):.1f}" for r in table)
    detail = (f"{len(table)} rows, {len(expected)} files, {cpu / 60:.1f} CPU-min; test BLEU {best}"
              if not problems else "; ".join(problems))
    record_criterion(10, ok, detail)
    assert ok, detail
