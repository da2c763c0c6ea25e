"""Dynamic curriculum learning for toy neural machine translation."""

from .config import ConfigError, ExperimentConfig, apply_overrides, load_config
from .curriculum import (
    CurriculumState,
    DifficultyScore,
    PhaseSelection,
    advance_phase,
    competence_dmc,
    competence_functional,
    difficulty_decline,
    select_subset,
)
from .data import ParallelCorpus, Sample, generate_copy_task, generate_dict_translation_task, plan_batches
from .decode import beam_decode, greedy_decode
from .evaluation import BleuReport, StoppingState, corpus_bleu, observe_checkpoint
from .harness import RunLog, run_experiment, run_matrix
from .model import ModelConfig, ModelParams, NumericalDivergence, backward, init_params, sequence_nll

__version__ = "0.1.0"

__all__ = [
    "BleuReport", "ConfigError", "CurriculumState", "DifficultyScore", "ExperimentConfig",
    "ModelConfig", "ModelParams", "NumericalDivergence", "ParallelCorpus", "PhaseSelection",
    "RunLog", "Sample", "StoppingState", "advance_phase", "apply_overrides", "backward",
    "beam_decode", "competence_dmc", "competence_functional", "corpus_bleu", "difficulty_decline",
    "generate_copy_task", "generate_dict_translation_task", "greedy_decode", "init_params",
    "load_config", "observe_checkpoint", "plan_batches", "run_experiment", "run_matrix",
    "select_subset", "sequence_nll",
]
