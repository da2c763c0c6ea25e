"""Greedy and beam search over any ``next_log_probs(prefixes) -> (n, V)`` scorer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import DecoderState, ModelParams
from .vocab import BOS, EOS, PAD

_BANNED = (PAD, BOS)


@dataclass
class DecodeResult:
    tokens: list[int]        # generated ids; ends with EOS unless max_len was hit
    score: float             # total log-probability
    length_penalized_score: float

    @property
    def translation(self) -> list[int]:
        return self.tokens[:-1] if self.tokens and self.tokens[-1] == EOS else list(self.tokens)


def _penalized(score, length, alpha):
    return score / max(length, 1) ** alpha


def _mask_banned(logp):
    logp = logp.copy()
    logp[..., list(_BANNED)] = -np.inf
    return logp


def greedy_search(next_log_probs, max_len: int) -> DecodeResult:
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    tokens: list[int] = []
    score = 0.0
    for _ in range(max_len):
        logp = _mask_banned(next_log_probs(np.array([[BOS] + tokens])))[0]
        tok = int(np.argmax(logp))
        tokens.append(tok)
        score += float(logp[tok])
        if tok == EOS:
            break
    return DecodeResult(tokens, score, score)


def beam_search(next_log_probs, beam_size: int, alpha: float, max_len: int) -> DecodeResult:
    """Shrinking beam: each hypothesis that emits EOS retires and frees no slot.

    The winner maximises ``logprob / len(tokens) ** alpha`` where the length
    counts the closing EOS.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    live: list[tuple[list[int], float]] = [([], 0.0)]
    finished: list[tuple[list[int], float]] = []
    for step in range(max_len):
        prefixes = np.array([[BOS] + toks for toks, _ in live])
        logp = _mask_banned(next_log_probs(prefixes))
        cand = np.array([s for _, s in live])[:, None] + logp
        slots = beam_size - len(finished)
        order = np.argsort(-cand.ravel(), kind="stable")[:slots]
        vocab = logp.shape[1]
        nxt = []
        for flat in order:
            row, tok = divmod(int(flat), vocab)
            if not np.isfinite(cand[row, tok]):
                continue
            hyp = (live[row][0] + [tok], float(cand[row, tok]))
            if tok == EOS or step == max_len - 1:
                finished.append(hyp)
            else:
                nxt.append(hyp)
        live = nxt
        if not live:
            break
    best = max(finished, key=lambda h: _penalized(h[1], len(h[0]), alpha))
    return DecodeResult(best[0], best[1], _penalized(best[1], len(best[0]), alpha))


def greedy_decode(params: ModelParams, source, max_len: int) -> DecodeResult:
    state = DecoderState(params, [tuple(source)])
    return greedy_search(state.next_log_probs, max_len)


def beam_decode(params: ModelParams, source, beam_size=5, length_penalty_alpha=1.0, max_len=50) -> DecodeResult:
    state = DecoderState(params, [tuple(source)])

    def scorer(prefixes):
        return state.next_log_probs(prefixes, rows=np.zeros(len(prefixes), dtype=np.int64))

    return beam_search(scorer, beam_size, length_penalty_alpha, max_len)


def greedy_decode_batch(params: ModelParams, sources, max_len) -> list[DecodeResult]:
    """Greedy decoding of many sources at once; ``max_len`` may be per-source."""
    sources = [tuple(s) for s in sources]
    n = len(sources)
    if n == 0:
        return []
    limits = np.broadcast_to(np.asarray(max_len), (n,)).astype(int)
    if limits.min() < 1:
        raise ValueError("max_len must be >= 1")
    state = DecoderState(params, sources)
    prefixes = np.full((n, 1), BOS, dtype=np.int64)
    done = np.zeros(n, dtype=bool)
    scores = np.zeros(n)
    out: list[list[int]] = [[] for _ in range(n)]
    for step in range(int(limits.max())):
        active = np.flatnonzero(~done)
        logp = _mask_banned(state.next_log_probs(prefixes[active], rows=active))
        toks = logp.argmax(axis=1)
        col = np.full(n, EOS, dtype=np.int64)
        for j, r in enumerate(active):
            tok = int(toks[j])
            out[r].append(tok)
            scores[r] += logp[j, tok]
            col[r] = tok
            if tok == EOS or step + 1 >= limits[r]:
                done[r] = True
        prefixes = np.concatenate([prefixes, col[:, None]], axis=1)
        if done.all():
            break
    return [DecodeResult(out[r], float(scores[r]), float(scores[r])) for r in range(n)]
