"""Corpus BLEU (multi-bleu convention), dev evaluation and early stopping."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass, field

MAX_ORDER = 4


@dataclass
class BleuReport:
    bleu: float                     # percent, unsmoothed
    ngram_precisions: list[float]   # p1..p4 as fractions
    brevity_penalty: float
    hyp_length: int
    ref_length: int
    smoothed_bleu: float = 0.0      # +1 smoothing on orders >= 2; logging only
    matches: list[int] = field(default_factory=list)
    totals: list[int] = field(default_factory=list)

    def to_dict(self):
        return asdict(self)

    def __str__(self):
        prec = "/".join(f"{100 * p:.1f}" for p in self.ngram_precisions)
        return (f"BLEU = {self.bleu:.2f}, {prec} (BP={self.brevity_penalty:.3f}, "
                f"ratio={self.hyp_length / max(self.ref_length, 1):.3f}, "
                f"hyp_len={self.hyp_length}, ref_len={self.ref_length})")


def ngram_counts(tokens, n) -> Counter:
    tokens = tuple(tokens)
    return Counter(tokens[i:i + n] for i in range(len(tokens) - n + 1))


def corpus_bleu(hypotheses, references) -> BleuReport:
    """Pooled clipped n-gram precision for n = 1..4 with a brevity penalty.

    Any zero pooled precision makes the headline score 0; no smoothing.
    """
    hypotheses, references = list(hypotheses), list(references)
    if not hypotheses:
        raise ValueError("empty corpus")
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    matches = [0] * MAX_ORDER
    totals = [0] * MAX_ORDER
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, MAX_ORDER + 1):
            h = ngram_counts(hyp, n)
            r = ngram_counts(ref, n)
            matches[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)

    precisions = [m / t if t else 0.0 for m, t in zip(matches, totals)]
    if hyp_len == 0:
        bp = 0.0
    else:
        bp = min(1.0, math.exp(1.0 - ref_len / hyp_len))
    if min(matches) == 0 or hyp_len == 0:
        bleu = 0.0
    else:
        bleu = 100.0 * bp * math.exp(sum(math.log(p) for p in precisions) / MAX_ORDER)

    smoothed = 0.0
    if hyp_len and matches[0]:
        logs = [math.log(matches[0] / totals[0])]
        logs += [math.log((matches[n] + 1) / (totals[n] + 1)) for n in range(1, MAX_ORDER)]
        smoothed = 100.0 * bp * math.exp(sum(logs) / MAX_ORDER)
    return BleuReport(bleu, precisions, bp, hyp_len, ref_len, smoothed, matches, totals)


def evaluate_dev(params, dev_corpus, max_len_slack=5) -> BleuReport:
    """Greedy-decode every dev source and score against its reference."""
    from .decode import greedy_decode_batch

    samples = list(dev_corpus)
    limits = [len(s.source) + max_len_slack for s in samples]
    results = greedy_decode_batch(params, [s.source for s in samples], limits)
    return corpus_bleu([r.translation for r in results], [list(s.target) for s in samples])


@dataclass
class StoppingState:
    best_bleu: float | None = None
    stagnant_checkpoints: int = 0
    patience: int = 10


def observe_checkpoint(stopping: StoppingState, bleu: float) -> tuple[StoppingState, bool]:
    """Strict improvement (at 4 decimals) resets the counter; anything else counts as stagnant."""
    score = round(bleu, 4)
    if stopping.best_bleu is None or score > round(stopping.best_bleu, 4):
        new = StoppingState(bleu, 0, stopping.patience)
    else:
        new = StoppingState(stopping.best_bleu, stopping.stagnant_checkpoints + 1, stopping.patience)
    return new, new.stagnant_checkpoints >= new.patience
