"""Phase-level training driver, run logs and the method matrix."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, TaskConfig
from .curriculum import CurriculumState, advance_phase
from .data import (
    ParallelCorpus,
    generate_copy_task,
    generate_dict_translation_task,
    load_parallel_text,
    plan_batches,
)
from .decode import beam_decode
from .evaluation import StoppingState, corpus_bleu, evaluate_dev, observe_checkpoint
from .model import (
    ModelConfig,
    ModelParams,
    NumericalDivergence,
    backward,
    corpus_nll,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .optim import AdamConfig, LrSchedule, adam_step
from .reports import slug

log = logging.getLogger(__name__)

# the comparison matrix: (metric, schedule, batching)
METHOD_ROWS = [
    ("none", "none", "length"),
    ("length", "sqrt", "length"),
    ("rarity", "sqrt", "length"),
    ("random", "dmc", "length"),
    ("loss", "dmc", "length"),
    ("decline", "linear", "length"),
    ("decline", "sqrt", "length"),
    ("decline", "dmc", "length"),
    ("decline", "dmc", "difficulty"),
]

TIMING_KEYS = ("wall_time", "score_time", "train_time", "eval_time")


def build_task(task: TaskConfig, seed: int):
    """Return ``(train, dev, test)`` corpora sharing vocabularies."""
    task_seed = seed if task.seed is None else task.seed
    if task.kind == "files":
        train = load_parallel_text(task.train_src, task.train_tgt, task.tokenizer)
        vocabs = (train.source_vocab, train.target_vocab)
        dev = load_parallel_text(task.dev_src, task.dev_tgt, task.tokenizer, vocabs)
        test = (load_parallel_text(task.test_src, task.test_tgt, task.tokenizer, vocabs)
                if task.test_src else dev)
        return train, dev, test
    total = task.n_train + task.n_dev + task.n_test
    lens = (task.len_min, task.len_max)
    if task.kind == "copy":
        full = generate_copy_task(total, lens, task.vocab_size, task_seed, task.zipf)
    else:
        full = generate_dict_translation_task(total, lens, task.vocab_size, task.swap_window, task_seed, task.zipf)
    return tuple(full.split(task.n_train, task.n_dev, task.n_test))


# ---------------------------------------------------------------------------
# run log


@dataclass
class RunLog:
    run_id: str
    config: dict
    method: str
    baseline: dict | None = None
    initial: dict = field(default_factory=dict)
    phases: list[dict] = field(default_factory=list)
    training_counts: list[int] = field(default_factory=list)
    train_source_lengths: list[int] = field(default_factory=list)
    final: dict = field(default_factory=dict)
    error: str | None = None
    params: ModelParams | None = field(default=None, repr=False, compare=False)

    def records(self):
        yield {"type": "header", "run_id": self.run_id, "method": self.method,
               "config": self.config, "baseline": self.baseline, "initial": self.initial}
        for rec in self.phases:
            yield {"type": "phase", **rec}
        if self.final:
            yield {"type": "final", "training_counts": self.training_counts,
                   "train_source_lengths": self.train_source_lengths, **self.final}
        if self.error:
            yield {"type": "error", "message": self.error}

    def write(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self.records():
                fh.write(json.dumps(rec) + "\n")

    @classmethod
    def read(cls, path) -> "RunLog":
        out = None
        for line in Path(path).read_text().splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            kind = rec.pop("type")
            if kind == "header":
                out = cls(rec["run_id"], rec["config"], rec["method"], rec.get("baseline"), rec.get("initial", {}))
            elif kind == "phase":
                out.phases.append(rec)
            elif kind == "final":
                out.training_counts = rec.pop("training_counts")
                out.train_source_lengths = rec.pop("train_source_lengths")
                out.final = rec
            elif kind == "error":
                out.error = rec["message"]
        if out is None:
            raise ValueError(f"{path}: no header record")
        return out

    def fingerprint(self) -> str:
        """Canonical JSON of everything except wall-clock timings."""
        def strip(obj):
            if isinstance(obj, dict):
                return {k: strip(v) for k, v in obj.items() if k not in TIMING_KEYS}
            if isinstance(obj, list):
                return [strip(v) for v in obj]
            return obj
        return json.dumps(strip(list(self.records())), sort_keys=True)

    @property
    def best_dev_bleu(self) -> float:
        return self.final.get("best_dev_bleu", max([p["dev_bleu"] for p in self.phases], default=0.0))

    def curve(self):
        """(cumulative steps, dev BLEU) including the untrained starting point."""
        pts = [(0, self.initial.get("dev_bleu", 0.0))]
        pts += [(p["steps"], p["dev_bleu"]) for p in self.phases]
        return pts


# ---------------------------------------------------------------------------
# single run


def _resolve_bleu_T(config: ExperimentConfig, baseline: "RunLog | None"):
    cur = config.curriculum
    if cur.schedule != "dmc":
        return None, None
    if baseline is not None:
        return baseline.best_dev_bleu, {"run_id": baseline.run_id, "best_bleu": baseline.best_dev_bleu}
    if cur.bleu_T is not None:
        return cur.bleu_T, {"run_id": None, "best_bleu": cur.bleu_T, "source": "inline"}
    base = RunLog.read(cur.baseline_log)
    return base.best_dev_bleu, {"run_id": base.run_id, "best_bleu": base.best_dev_bleu, "source": cur.baseline_log}


def _curriculum_phases(config, baseline):
    if config.curriculum.curriculum_phases is not None:
        return config.curriculum.curriculum_phases
    if baseline is not None and baseline.final.get("best_phase") is not None:
        return baseline.final["best_phase"] + 1
    return 10


def score_test_set(params, test: ParallelCorpus, beam_size, alpha, slack):
    hyps = [beam_decode(params, s.source, beam_size, alpha, len(s.source) + slack).translation for s in test]
    return corpus_bleu(hyps, [list(s.target) for s in test]), hyps


def run_experiment(config: ExperimentConfig, baseline: RunLog | None = None, log_path=None,
                   checkpoint_path=None, data=None) -> RunLog:
    """Train one configuration phase by phase until early stop or ``max_phases``.

    Each phase: score the whole corpus in eval mode, let the curriculum pick
    the subset, plan batches over it, make one pass, then evaluate the dev set.
    ``baseline`` supplies BLEU_T (and a default T for functional schedules).
    """
    config.validate(baseline_given=baseline is not None)
    train, dev, test = data if data is not None else build_task(config.task, config.seed)
    seed = config.seed
    cur = config.curriculum
    bleu_T, provenance = _resolve_bleu_T(config, baseline)
    if cur.schedule == "dmc" and not bleu_T:
        raise ConfigError("curriculum length BLEU_T must be positive for the dmc schedule")

    model_cfg = ModelConfig(len(train.source_vocab), len(train.target_vocab), **vars(config.model))
    params = init_params(model_cfg, np.random.default_rng([seed, 0]))
    dropout_rng = np.random.default_rng([seed, 1])
    schedule = LrSchedule(config.optim.peak_lr, config.optim.warmup_steps, config.optim.init_lr)
    adam = AdamConfig(config.optim.beta1, config.optim.beta2, config.optim.eps)
    state = CurriculumState(
        metric=cur.metric, schedule=cur.schedule, a=cur.a, c0=cur.c0,
        p=2.0 if cur.schedule == "sqrt" else 1.0, beta=cur.beta, bleu_T=bleu_T,
        curriculum_phases=_curriculum_phases(config, baseline), monotone=cur.monotone, seed=seed,
    )
    stopping = StoppingState(patience=config.patience)
    counts = np.zeros(len(train), dtype=np.int64)

    run = RunLog(config.run_id(), config.to_dict(), config.method_name(), provenance)
    run.train_source_lengths = [int(n) for n in train.source_lengths()]
    t0 = time.perf_counter()
    dev_report = evaluate_dev(params, dev, config.decode_slack)
    run.initial = {"dev_bleu": dev_report.bleu, "dev_bleu_smoothed": dev_report.smoothed_bleu,
                   "eval_time": time.perf_counter() - t0}
    best = (params.copy(), -1, 0)
    stopped = False

    def flush():
        if log_path is not None:
            run.write(log_path)

    try:
        for phase in range(config.max_phases):
            t_start = time.perf_counter()
            losses = corpus_nll(params, train, config.score_token_budget)
            t_scored = time.perf_counter()
            state, sel = advance_phase(state, losses, dev_report.bleu, corpus=train)
            plan = plan_batches(train, sel.ids, sel.scores, cur.batching, config.token_budget, seed=[seed, phase])
            nll_sum = 0.0
            for batch_ids in plan:
                grads, nll = backward(params, [train[i] for i in batch_ids], dropout_rng)
                adam_step(params, grads, schedule, adam)
                nll_sum += nll
            counts[sel.ids] += 1
            t_trained = time.perf_counter()
            dev_report = evaluate_dev(params, dev, config.decode_slack)
            stopping, stop = observe_checkpoint(stopping, dev_report.bleu)
            if stopping.stagnant_checkpoints == 0:
                best = (params.copy(), phase, params.step)
            t_end = time.perf_counter()
            run.phases.append({
                "phase": phase,
                "steps": params.step,
                "phase_steps": len(plan),
                "competence": sel.trace["competence"],
                "selected_count": len(sel.ids),
                "train_loss": float(losses.mean()),
                "selected_nll": nll_sum / len(sel.ids),
                "lr": schedule(params.step),
                "dev_bleu": dev_report.bleu,
                "dev_bleu_smoothed": dev_report.smoothed_bleu,
                "stagnant": stopping.stagnant_checkpoints,
                "curriculum": sel.trace,
                "score_time": t_scored - t_start,
                "train_time": t_trained - t_scored,
                "eval_time": t_end - t_trained,
                "wall_time": t_end - t0,
            })
            log.info("%s phase %d: steps=%d sel=%d c=%.3f loss=%.3f dev=%.2f",
                     run.method, phase, params.step, len(sel.ids), sel.trace["competence"],
                     losses.mean(), dev_report.bleu)
            flush()
            if stop:
                stopped = True
                break
    except NumericalDivergence as exc:
        run.error = str(exc)
        run.training_counts = [int(c) for c in counts]
        flush()
        exc.run_log = run
        raise

    final_losses = corpus_nll(params, train, config.score_token_budget)
    best_params, best_phase, best_step = best
    report, _ = score_test_set(best_params, test, config.beam_size, config.length_penalty, config.decode_slack)
    run.training_counts = [int(c) for c in counts]
    run.final = {
        "phases_run": len(run.phases),
        "total_steps": params.step,
        "stopped_early": stopped,
        "best_dev_bleu": stopping.best_bleu if best_phase >= 0 else run.initial["dev_bleu"],
        "best_phase": best_phase,
        "best_step": best_step,
        "final_train_loss": float(final_losses.mean()),
        "final_mean_count": float(counts.mean()),
        "test_bleu": report.bleu,
        "test_report": report.to_dict(),
        "bleu_T": bleu_T,
        "curriculum_phases": state.curriculum_phases,
        "score_time": sum(p["score_time"] for p in run.phases),
        "train_time": sum(p["train_time"] for p in run.phases),
        "wall_time": time.perf_counter() - t0,
    }
    run.params = best_params
    if checkpoint_path is not None:
        save_checkpoint(best_params, checkpoint_path)
        run.final["checkpoint"] = str(checkpoint_path)
    flush()
    return run


def final_params(run: RunLog) -> ModelParams:
    if run.params is not None:
        return run.params
    path = run.final.get("checkpoint")
    if not path:
        raise ValueError(f"run {run.run_id} has neither in-memory params nor a checkpoint")
    return load_checkpoint(path)


# ---------------------------------------------------------------------------
# method matrix


@dataclass
class MatrixResult:
    table: list[dict]
    logs: list[RunLog]


def row_config(base: ExperimentConfig, metric, schedule, batching) -> ExperimentConfig:
    cur = replace(base.curriculum, metric=metric, schedule=schedule, batching=batching)
    return replace(base, curriculum=cur)


def run_matrix(base_config: ExperimentConfig, rows=METHOD_ROWS, out_dir=None) -> MatrixResult:
    """Run the baseline first (its best dev BLEU becomes BLEU_T), then every method row."""
    rows = [tuple(r) for r in rows]
    has_baseline = ("none", "none", "length") in rows
    if not has_baseline and any(r[1] == "dmc" for r in rows):
        raise ConfigError("dmc rows need a baseline row in the same matrix")
    configs = [row_config(base_config, *r) for r in rows]
    for cfg in configs:
        cfg.validate(baseline_given=has_baseline)

    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    data = build_task(base_config.task, base_config.seed)
    order = sorted(range(len(rows)), key=lambda i: rows[i] != ("none", "none", "length"))
    logs: dict[int, RunLog] = {}
    baseline = None
    for i in order:
        cfg = configs[i]
        name = slug(cfg.method_name())
        kwargs = {}
        if out:
            kwargs = {"log_path": out / f"{name}.jsonl", "checkpoint_path": out / f"{name}.npz"}
        run = run_experiment(cfg, baseline=baseline if cfg.curriculum.metric != "none" else None, data=data, **kwargs)
        if rows[i] == ("none", "none", "length"):
            baseline = run
        logs[i] = run
    table = []
    for i, r in enumerate(rows):
        run = logs[i]
        table.append({
            "method": run.method,
            "metric": r[0],
            "schedule": r[1],
            "batching": r[2],
            "test_bleu": round(run.final["test_bleu"], 4),
            "best_dev_bleu": round(run.final["best_dev_bleu"], 4),
            "phases": run.final["phases_run"],
            "total_steps": run.final["total_steps"],
            "best_step": run.final["best_step"],
            "run_id": run.run_id,
        })
    return MatrixResult(table, [logs[i] for i in range(len(rows))])


def selected_fraction(run: RunLog):
    return [p["selected_count"] / len(run.training_counts or [1]) for p in run.phases]


def steps_to_reach(run: RunLog, bleu: float):
    """First cumulative step count at which dev BLEU >= ``bleu`` (``math.inf`` if never)."""
    for steps, b in run.curve():
        if b >= bleu:
            return steps
    return math.inf
