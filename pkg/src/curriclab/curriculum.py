"""Sample difficulty, model competence and per-phase subset selection."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .vocab import UNK

METRICS = ("length", "rarity", "random", "loss", "decline", "none")
SCHEDULES = ("linear", "sqrt", "dmc", "none")
EPS_DIV = 1e-8


@dataclass(frozen=True)
class DifficultyScore:
    sample_id: int
    value: float


@dataclass
class CurriculumState:
    metric: str = "decline"
    schedule: str = "dmc"
    a: int = 1
    c0: float = 0.2
    p: float = 2.0
    beta: float = 0.9
    bleu_T: float | None = None
    curriculum_phases: int = 10     # T for the functional schedules
    monotone: bool = True
    seed: int = 0
    phase: int = 0
    competence: float | None = None
    loss_history: deque = field(default=None, repr=False)

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"unknown difficulty metric {self.metric!r}")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"unknown competence schedule {self.schedule!r}")
        if (self.metric == "none") != (self.schedule == "none"):
            raise ValueError("metric 'none' and schedule 'none' only go together")
        if self.a < 1:
            raise ValueError(f"phase lag a must be >= 1, got {self.a}")
        if not 0.0 < self.c0 <= 1.0:
            raise ValueError(f"c0 must lie in (0, 1], got {self.c0}")
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")
        if self.curriculum_phases <= 0:
            raise ValueError("curriculum_phases must be positive")
        if self.competence is None:
            self.competence = 1.0 if self.schedule == "none" else self.c0
        # entries are (phase, per-sample losses); keeps phases t-a .. t
        self.loss_history = deque(self.loss_history or (), maxlen=self.a + 1)

    def record_losses(self, losses) -> None:
        """Store the full-corpus losses measured with the current phase's parameters."""
        losses = np.asarray(losses, dtype=np.float64)
        if not np.all(np.isfinite(losses)) or np.any(losses < 0):
            raise ValueError("losses must be finite and non-negative")
        if self.loss_history and self.loss_history[-1][0] == self.phase:
            self.loss_history.pop()
        self.loss_history.append((self.phase, losses))

    def losses_at(self, phase):
        for ph, arr in self.loss_history:
            if ph == phase:
                return arr
        return None


# ---------------------------------------------------------------------------
# difficulty metrics (lower = easier)


def difficulty_length(sample) -> DifficultyScore:
    return DifficultyScore(sample.id, float(len(sample.source)))


def _token_prob(tok, unigram_freqs, total_tokens):
    p = unigram_freqs.get(tok, 0.0)
    if p > 0.0:
        return p
    p = unigram_freqs.get(UNK, 0.0)
    if total_tokens:
        p = max(p, 1.0 / (2 * total_tokens))
    return p


def difficulty_rarity(sample, unigram_freqs, total_tokens=None) -> DifficultyScore:
    """Negative log-likelihood of the source under the unigram model."""
    value = 0.0
    for tok in sample.source:
        p = _token_prob(tok, unigram_freqs, total_tokens)
        if p <= 0.0:
            raise ValueError(f"zero frequency for token {tok}")
        value -= math.log(p)
    return DifficultyScore(sample.id, value)


def difficulty_random(sample_id, phase, seed) -> DifficultyScore:
    return DifficultyScore(sample_id, float(np.random.default_rng([seed, phase, sample_id]).random()))


def difficulty_loss(sample_id, state: CurriculumState) -> DifficultyScore:
    current = state.losses_at(state.phase)
    if current is None or not 0 <= sample_id < len(current):
        raise ValueError(f"unscored sample {sample_id}")
    return DifficultyScore(sample_id, float(current[sample_id]))


def decline_value(previous, current):
    """Negated relative loss decline; works elementwise on arrays."""
    return -(previous - current) / np.maximum(previous, EPS_DIV)


def difficulty_decline(sample_id, state: CurriculumState) -> DifficultyScore:
    current = state.losses_at(state.phase)
    if current is None or not 0 <= sample_id < len(current):
        raise ValueError(f"insufficient loss history for sample {sample_id}")
    if state.phase < state.a:
        return DifficultyScore(sample_id, float(current[sample_id]))
    previous = state.losses_at(state.phase - state.a)
    if previous is None:
        raise ValueError(f"insufficient loss history for sample {sample_id}")
    return DifficultyScore(sample_id, float(decline_value(previous[sample_id], current[sample_id])))


def score_corpus(state: CurriculumState, corpus=None) -> np.ndarray:
    """Difficulty of every sample for the configured metric at ``state.phase``."""
    metric = state.metric
    if metric == "none":
        n = len(corpus) if corpus is not None else len(state.loss_history[-1][1])
        return np.zeros(n)
    if metric == "length":
        return np.array([difficulty_length(s).value for s in corpus])
    if metric == "rarity":
        return np.array([difficulty_rarity(s, corpus.unigram_freqs, corpus.source_token_total).value for s in corpus])
    if metric == "random":
        n = len(corpus) if corpus is not None else len(state.loss_history[-1][1])
        return np.array([difficulty_random(i, state.phase, state.seed).value for i in range(n)])
    current = state.losses_at(state.phase)
    if current is None:
        raise ValueError("unscored sample: no losses recorded for the current phase")
    if metric == "loss" or state.phase < state.a:
        return current.copy()
    previous = state.losses_at(state.phase - state.a)
    if previous is None:
        raise ValueError("insufficient loss history")
    return decline_value(previous, current)


# ---------------------------------------------------------------------------
# competence


def competence_functional(t, T, c0, p) -> float:
    if T <= 0:
        raise ValueError("curriculum length T must be positive")
    return min(1.0, ((t / T) * (1.0 - c0 ** p) + c0 ** p) ** (1.0 / p))


def competence_dmc_raw(bleu_t, bleu_T, beta, c0) -> float:
    return min(1.0, (bleu_t / (bleu_T * beta)) * (1.0 - c0) + c0)


def competence_dmc(bleu_t, state: CurriculumState) -> float:
    if state.bleu_T is None or state.bleu_T <= 0:
        raise ValueError("curriculum length unavailable")
    raw = competence_dmc_raw(bleu_t, state.bleu_T, state.beta, state.c0)
    if state.monotone and state.competence is not None:
        return max(raw, state.competence)
    return raw


def next_competence(state: CurriculumState, dev_bleu, schedule=None) -> float:
    schedule = schedule or state.schedule
    if schedule == "none":
        return 1.0
    if schedule == "linear":
        return competence_functional(state.phase, state.curriculum_phases, state.c0, 1)
    if schedule == "sqrt":
        return competence_functional(state.phase, state.curriculum_phases, state.c0, 2)
    if schedule == "dmc":
        return competence_dmc(dev_bleu, state)
    raise ValueError(f"unknown competence schedule {schedule!r}")


# ---------------------------------------------------------------------------
# selection


def selection_size(corpus_size, competence) -> int:
    # rounding strips float noise such as 10 * 0.7 = 7.000000000000001
    return max(1, math.ceil(round(corpus_size * competence, 9)))


def select_subset(scores, competence, corpus_size) -> list[int]:
    """The ``max(1, ceil(n * c))`` easiest ids ordered by (difficulty, id).

    ``scores`` is a list of DifficultyScore or an array indexed by sample id.
    """
    if len(scores) == 0:
        raise ValueError("empty scores")
    if isinstance(scores, np.ndarray):
        ids = np.arange(len(scores))
        values = scores.astype(np.float64)
    else:
        ids = np.array([s.sample_id for s in scores])
        values = np.array([s.value for s in scores], dtype=np.float64)
    if len(ids) != corpus_size or set(ids.tolist()) != set(range(corpus_size)):
        raise ValueError("scores must cover every sample of the corpus exactly once")
    if not np.all(np.isfinite(values)):
        raise ValueError("non-finite difficulty score")
    if not 0.0 < competence <= 1.0:
        raise ValueError(f"competence must lie in (0, 1], got {competence}")
    order = np.lexsort((ids, values))
    k = selection_size(corpus_size, competence)
    return [int(i) for i in ids[order[:k]]]


@dataclass
class PhaseSelection:
    ids: list[int]
    scores: np.ndarray
    trace: dict


def advance_phase(state: CurriculumState, losses, dev_bleu, schedule_kind=None, corpus=None):
    """Record losses, score, update competence, select, and move to the next phase.

    Returns ``(state, selection)`` where ``selection.ids`` is the ordered id
    list; the state is updated in place.
    """
    state.record_losses(losses)
    n = len(state.loss_history[-1][1])
    scores = score_corpus(state, corpus)
    competence = next_competence(state, dev_bleu, schedule_kind)
    if state.schedule != "none":
        competence = max(competence, state.c0)
    ids = select_subset(scores, competence, n)
    trace = {
        "phase": state.phase,
        "metric": state.metric,
        "schedule": schedule_kind or state.schedule,
        "competence": competence,
        "selected_count": len(ids),
        "difficulty_min": float(np.min(scores)),
        "difficulty_median": float(np.median(scores)),
        "difficulty_max": float(np.max(scores)),
    }
    state.competence = competence
    state.phase += 1
    return state, PhaseSelection(ids, scores, trace)
