"""Parallel corpora, toy task generators and token-budget batch planning."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .vocab import RESERVED, Vocabulary


@dataclass(frozen=True)
class Sample:
    id: int
    source: tuple[int, ...]
    target: tuple[int, ...]

    def __post_init__(self):
        if not self.source:
            raise ValueError(f"sample {self.id}: empty source")
        if not self.target:
            raise ValueError(f"sample {self.id}: empty target")


@dataclass
class ParallelCorpus:
    samples: list[Sample]
    source_vocab: Vocabulary
    target_vocab: Vocabulary
    unigram_freqs: dict[int, float] | None = None
    source_token_total: int = 0

    def __post_init__(self):
        for i, s in enumerate(self.samples):
            if s.id != i:
                raise ValueError(f"sample ids must be 0..n-1 in order; position {i} has id {s.id}")
        counts = Counter(tok for s in self.samples for tok in s.source)
        self.source_token_total = sum(counts.values())
        if self.unigram_freqs is None:
            total = self.source_token_total or 1
            self.unigram_freqs = {tok: c / total for tok, c in sorted(counts.items())}

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, idx) -> Sample:
        return self.samples[idx]

    def __iter__(self):
        return iter(self.samples)

    def source_lengths(self) -> np.ndarray:
        return np.array([len(s.source) for s in self.samples])

    def target_lengths(self) -> np.ndarray:
        return np.array([len(s.target) for s in self.samples])

    def split(self, *sizes: int) -> list["ParallelCorpus"]:
        """Cut into consecutive pieces of the given sizes, renumbering ids from 0."""
        if sum(sizes) > len(self):
            raise ValueError(f"split sizes {sizes} exceed corpus size {len(self)}")
        out, start = [], 0
        for n in sizes:
            chunk = [Sample(i, s.source, s.target) for i, s in enumerate(self.samples[start:start + n])]
            out.append(ParallelCorpus(chunk, self.source_vocab, self.target_vocab))
            start += n
        return out


def _check_len_range(len_range):
    lo, hi = int(len_range[0]), int(len_range[1])
    if lo < 1 or hi < lo:
        raise ValueError(f"empty length range {tuple(len_range)}")
    return lo, hi


def _zipf_probs(n, exponent):
    w = 1.0 / np.arange(1, n + 1) ** exponent
    return w / w.sum()


def _draw_sentences(rng, n, len_range, n_words, zipf):
    lo, hi = _check_len_range(len_range)
    lengths = rng.integers(lo, hi + 1, size=n)
    words = rng.choice(n_words, size=int(lengths.sum()), p=_zipf_probs(n_words, zipf))
    return np.split(words, np.cumsum(lengths)[:-1])


def generate_copy_task(n, len_range, vocab_size, seed, zipf=1.0) -> ParallelCorpus:
    """Source sentences over a Zipf-distributed vocabulary; target equals source."""
    if vocab_size < 5:
        raise ValueError(f"vocab_size must be >= 5, got {vocab_size}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    n_words = vocab_size - len(RESERVED)
    vocab = Vocabulary(list(RESERVED) + [f"w{i}" for i in range(n_words)])
    rng = np.random.default_rng(seed)
    sents = _draw_sentences(rng, n, len_range, n_words, zipf)
    samples = []
    for i, words in enumerate(sents):
        ids = tuple(int(w) + len(RESERVED) for w in words)
        samples.append(Sample(i, ids, ids))
    return ParallelCorpus(samples, vocab, vocab)


def dictionary_permutation(vocab_size, seed) -> np.ndarray:
    """The word-level bijection used by the dict-translation task for ``seed``."""
    n_words = vocab_size - len(RESERVED)
    return np.random.default_rng([seed, 7919]).permutation(n_words)


def reverse_windows(seq, window):
    """Reverse each consecutive block of ``window`` items (the last block may be short)."""
    seq = list(seq)
    out = []
    for start in range(0, len(seq), window):
        out.extend(reversed(seq[start:start + window]))
    return out


def generate_dict_translation_task(n, len_range, vocab_size, swap_window, seed, zipf=1.0) -> ParallelCorpus:
    """Toy translation: map each word through a fixed bijection, then reverse every
    block of ``swap_window`` positions. Longer sentences carry more reorderings."""
    if swap_window < 1:
        raise ValueError(f"swap_window must be >= 1, got {swap_window}")
    if vocab_size < len(RESERVED) + 2:
        raise ValueError(f"vocab_size {vocab_size} too small for a word bijection")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    n_words = vocab_size - len(RESERVED)
    perm = dictionary_permutation(vocab_size, seed)
    src_vocab = Vocabulary(list(RESERVED) + [f"s{i}" for i in range(n_words)])
    tgt_vocab = Vocabulary(list(RESERVED) + [f"t{i}" for i in range(n_words)])
    rng = np.random.default_rng(seed)
    sents = _draw_sentences(rng, n, len_range, n_words, zipf)
    samples = []
    off = len(RESERVED)
    for i, words in enumerate(sents):
        src = tuple(int(w) + off for w in words)
        tgt = tuple(int(perm[w]) + off for w in reverse_windows(words, swap_window))
        samples.append(Sample(i, src, tgt))
    return ParallelCorpus(samples, src_vocab, tgt_vocab)


def _tokenize(line, tokenizer):
    if tokenizer == "whitespace":
        return line.split()
    if tokenizer == "char":
        return [c for c in line if not c.isspace()]
    raise ValueError(f"unknown tokenizer {tokenizer!r}")


def _read_lines(path, tokenizer):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            toks = _tokenize(line.rstrip("\n"), tokenizer)
            if not toks:
                raise ValueError(f"{path}: empty line {lineno}")
            rows.append(toks)
    return rows


def load_parallel_text(source_path, target_path, tokenizer="whitespace", vocabs=None) -> ParallelCorpus:
    """Line i of each file becomes sample i.

    Vocabularies are built from the files unless ``vocabs=(source, target)``
    is given (e.g. to encode a dev set with the training vocabularies).
    """
    src = _read_lines(source_path, tokenizer)
    tgt = _read_lines(target_path, tokenizer)
    if len(src) != len(tgt):
        raise ValueError(
            f"line count mismatch: {source_path} has {len(src)} lines, {target_path} has {len(tgt)}"
        )
    if vocabs is None:
        src_vocab = Vocabulary.from_tokens(t for row in src for t in row)
        tgt_vocab = Vocabulary.from_tokens(t for row in tgt for t in row)
    else:
        src_vocab, tgt_vocab = vocabs
    samples = [Sample(i, src_vocab.encode(s), tgt_vocab.encode(t)) for i, (s, t) in enumerate(zip(src, tgt))]
    return ParallelCorpus(samples, src_vocab, tgt_vocab)


def dump_corpus(corpus: ParallelCorpus, path) -> None:
    """One JSON record per line: {"id", "source", "target"} with token strings."""
    with open(path, "w", encoding="utf-8") as fh:
        for s in corpus:
            rec = {
                "id": s.id,
                "source": [corpus.source_vocab.token(i) for i in s.source],
                "target": [corpus.target_vocab.token(i) for i in s.target],
            }
            fh.write(json.dumps(rec) + "\n")


def load_corpus_dump(path) -> ParallelCorpus:
    recs = [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]
    recs.sort(key=lambda r: r["id"])
    src_vocab = Vocabulary.from_tokens(t for r in recs for t in r["source"])
    tgt_vocab = Vocabulary.from_tokens(t for r in recs for t in r["target"])
    samples = [Sample(i, src_vocab.encode(r["source"]), tgt_vocab.encode(r["target"])) for i, r in enumerate(recs)]
    return ParallelCorpus(samples, src_vocab, tgt_vocab)


# ---------------------------------------------------------------------------
# batching


@dataclass
class BatchPlan:
    batches: list[list[int]]
    token_budget: int
    key: str

    def __len__(self):
        return len(self.batches)

    def __iter__(self):
        return iter(self.batches)

    def ids(self) -> list[int]:
        return [i for b in self.batches for i in b]


def padded_tokens(corpus: ParallelCorpus, ids) -> int:
    """Cost of a batch: rows times the longest sequence on either side."""
    longest = max(max(len(corpus[i].source), len(corpus[i].target)) for i in ids)
    return len(ids) * longest


def plan_batches(corpus, selected_ids, scores=None, key="length", token_budget=512, seed=0) -> BatchPlan:
    """Sort the selection by ``key``, pack greedily under ``token_budget`` and shuffle batch order.

    ``scores`` maps sample id to difficulty (dict or array indexed by id) and
    is required for ``key="difficulty"``. A sample too large for the budget
    on its own becomes a singleton batch.
    """
    ids = [int(i) for i in selected_ids]
    if not ids:
        raise ValueError("empty phase selection")
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate ids in selection")
    if key == "length":
        order = sorted(ids, key=lambda i: (len(corpus[i].source), len(corpus[i].target), i))
    elif key == "difficulty":
        if scores is None:
            raise ValueError("key='difficulty' needs scores")
        missing = [i for i in ids if _score_of(scores, i) is None]
        if missing:
            raise ValueError(f"no difficulty score for ids {missing[:5]}")
        order = sorted(ids, key=lambda i: (_score_of(scores, i), i))
    else:
        raise ValueError(f"unknown batching key {key!r}")

    batches: list[list[int]] = []
    current: list[int] = []
    longest = 0
    for i in order:
        n = max(len(corpus[i].source), len(corpus[i].target))
        if current and (len(current) + 1) * max(longest, n) > token_budget:
            batches.append(current)
            current, longest = [], 0
        current.append(i)
        longest = max(longest, n)
    batches.append(current)

    perm = np.random.default_rng(seed).permutation(len(batches))
    return BatchPlan([batches[j] for j in perm], token_budget, key)


def _score_of(scores, i):
    if isinstance(scores, dict):
        v = scores.get(i)
    else:
        v = scores[i] if i < len(scores) else None
    return None if v is None else float(v)
