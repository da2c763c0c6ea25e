"""Minimal pre-norm transformer encoder-decoder in float64 numpy.

Parameters live in a flat ``{name: ndarray}`` dict so the optimizer,
checkpointing and gradient checks can all treat them uniformly.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .data import Sample
from .vocab import BOS, EOS, PAD

NEG_INF = -1e9


class NumericalDivergence(RuntimeError):
    def __init__(self, step, what="non-finite value"):
        super().__init__(f"numerical divergence at step {step}: {what}")
        self.step = step


@dataclass
class ModelConfig:
    src_vocab_size: int
    tgt_vocab_size: int
    embed_dim: int = 32
    ff_dim: int = 64
    layers: int = 2
    heads: int = 2
    dropout: float = 0.1
    label_smoothing: float = 0.1

    def __post_init__(self):
        if self.embed_dim % self.heads:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")


@dataclass
class ModelParams:
    config: ModelConfig
    weights: dict[str, np.ndarray]
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def __post_init__(self):
        for name, w in self.weights.items():
            self.m.setdefault(name, np.zeros_like(w))
            self.v.setdefault(name, np.zeros_like(w))

    def copy(self) -> "ModelParams":
        return ModelParams(
            ModelConfig(**asdict(self.config)),
            {k: w.copy() for k, w in self.weights.items()},
            {k: a.copy() for k, a in self.m.items()},
            {k: a.copy() for k, a in self.v.items()},
            self.step,
        )

    def digest(self) -> str:
        """SHA-256 over config, step and every array (weights and moments)."""
        h = hashlib.sha256(json.dumps(asdict(self.config), sort_keys=True).encode())
        h.update(str(self.step).encode())
        for store in (self.weights, self.m, self.v):
            for k in sorted(store):
                h.update(k.encode())
                h.update(np.ascontiguousarray(store[k]).tobytes())
        return h.hexdigest()

    def num_parameters(self) -> int:
        return sum(w.size for w in self.weights.values())


def _layer_shapes(prefix, d, ff, cross):
    shapes = {}
    blocks = ["self", "cross"] if cross else ["self"]
    for blk in blocks:
        for proj in "qkvo":
            shapes[f"{prefix}.{blk}.{proj}.w"] = (d, d)
            shapes[f"{prefix}.{blk}.{proj}.b"] = (d,)
    shapes[f"{prefix}.ff1.w"] = (d, ff)
    shapes[f"{prefix}.ff1.b"] = (ff,)
    shapes[f"{prefix}.ff2.w"] = (ff, d)
    shapes[f"{prefix}.ff2.b"] = (d,)
    for i in range(len(blocks) + 1):
        shapes[f"{prefix}.ln{i}.g"] = (d,)
        shapes[f"{prefix}.ln{i}.b"] = (d,)
    return shapes


def param_shapes(config: ModelConfig) -> dict[str, tuple]:
    d, ff = config.embed_dim, config.ff_dim
    shapes = {"enc.emb": (config.src_vocab_size, d), "dec.emb": (config.tgt_vocab_size, d)}
    for i in range(config.layers):
        shapes.update(_layer_shapes(f"enc.{i}", d, ff, cross=False))
    for i in range(config.layers):
        shapes.update(_layer_shapes(f"dec.{i}", d, ff, cross=True))
    for side in ("enc", "dec"):
        shapes[f"{side}.ln.g"] = (d,)
        shapes[f"{side}.ln.b"] = (d,)
    return shapes


def init_params(config: ModelConfig, rng: np.random.Generator) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for matrices; zero biases, unit LN gains."""
    weights = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".emb"):
            bound = 1.0 / math.sqrt(shape[1])
            weights[name] = rng.uniform(-bound, bound, size=shape)
        elif len(shape) == 2:
            bound = 1.0 / math.sqrt(shape[0])
            weights[name] = rng.uniform(-bound, bound, size=shape)
        elif ".ln" in name and name.endswith(".g"):
            weights[name] = np.ones(shape)
        else:
            weights[name] = np.zeros(shape)
    return ModelParams(config, weights)


_PE_CACHE: dict[tuple[int, int], np.ndarray] = {}


def sinusoidal_positions(length, dim) -> np.ndarray:
    key = (length, dim)
    if key not in _PE_CACHE:
        pos = np.arange(length)[:, None]
        rates = np.exp(-math.log(10000.0) * (np.arange(0, dim, 2) / dim))
        pe = np.zeros((length, dim))
        pe[:, 0::2] = np.sin(pos * rates)
        pe[:, 1::2] = np.cos(pos * rates[: dim // 2])
        _PE_CACHE[key] = pe
    return _PE_CACHE[key]


# ---------------------------------------------------------------------------
# batches


@dataclass
class Batch:
    src: np.ndarray       # (B, S) source ids, PAD-padded
    tgt_in: np.ndarray    # (B, T) BOS + target
    tgt_out: np.ndarray   # (B, T) target + EOS
    mask: np.ndarray      # (B, T) 1.0 on real target positions

    @property
    def size(self):
        return self.src.shape[0]


def make_batch(samples) -> Batch:
    samples = list(samples)
    if not samples:
        raise ValueError("empty batch")
    b = len(samples)
    s_len = max(len(s.source) for s in samples)
    t_len = max(len(s.target) for s in samples) + 1
    src = np.full((b, s_len), PAD, dtype=np.int64)
    tgt_in = np.full((b, t_len), PAD, dtype=np.int64)
    tgt_out = np.full((b, t_len), PAD, dtype=np.int64)
    for r, s in enumerate(samples):
        if not s.target:
            raise ValueError("empty target")
        src[r, : len(s.source)] = s.source
        tgt_in[r, 0] = BOS
        tgt_in[r, 1 : len(s.target) + 1] = s.target
        tgt_out[r, : len(s.target)] = s.target
        tgt_out[r, len(s.target)] = EOS
    return Batch(src, tgt_in, tgt_out, (tgt_out != PAD).astype(np.float64))


# ---------------------------------------------------------------------------
# forward pass


class _Net:
    """One forward evaluation: binds weights as tensors plus the dropout source."""

    def __init__(self, params: ModelParams, train: bool, rng=None, track=False):
        self.cfg = params.config
        self.train = train and self.cfg.dropout > 0
        self.rng = rng
        if self.train and rng is None:
            raise ValueError("training-mode forward needs a dropout generator")
        self.w = {k: Tensor(a, requires_grad=track) for k, a in params.weights.items()}

    def dropout(self, x):
        if not self.train:
            return x
        p = self.cfg.dropout
        keep = (self.rng.random(x.shape) >= p) / (1.0 - p)
        return ag.mul(x, keep)

    def linear(self, x, name):
        return ag.add(ag.matmul(x, self.w[name + ".w"]), self.w[name + ".b"])

    def ln(self, x, name):
        return ag.layer_norm(x, self.w[name + ".g"], self.w[name + ".b"])

    def attention(self, xq, xkv, bias, name):
        h = self.cfg.heads
        b, lq, d = xq.shape
        lk = xkv.shape[1]
        dh = d // h
        q = ag.transpose(ag.reshape(self.linear(xq, name + ".q"), (b, lq, h, dh)), (0, 2, 1, 3))
        k = ag.transpose(ag.reshape(self.linear(xkv, name + ".k"), (b, lk, h, dh)), (0, 2, 3, 1))
        v = ag.transpose(ag.reshape(self.linear(xkv, name + ".v"), (b, lk, h, dh)), (0, 2, 1, 3))
        scores = ag.mul(ag.matmul(q, k), 1.0 / math.sqrt(dh))
        attn = ag.softmax(scores, bias)
        ctx = ag.reshape(ag.transpose(ag.matmul(attn, v), (0, 2, 1, 3)), (b, lq, d))
        return self.linear(ctx, name + ".o")

    def feed_forward(self, x, name):
        return self.linear(ag.relu(self.linear(x, name + ".ff1")), name + ".ff2")

    def embed(self, ids, table):
        d = self.cfg.embed_dim
        x = ag.mul(ag.embedding(self.w[table], ids), math.sqrt(d))
        x = ag.add(x, sinusoidal_positions(ids.shape[1], d))
        return self.dropout(x)

    def encode(self, src):
        src_bias = np.where(src == PAD, NEG_INF, 0.0)[:, None, None, :]
        x = self.embed(src, "enc.emb")
        for i in range(self.cfg.layers):
            p = f"enc.{i}"
            y = self.ln(x, p + ".ln0")
            x = ag.add(x, self.dropout(self.attention(y, y, src_bias, p + ".self")))
            x = ag.add(x, self.dropout(self.feed_forward(self.ln(x, p + ".ln1"), p)))
        return self.ln(x, "enc.ln"), src_bias

    def decode(self, tgt_in, memory, src_bias):
        t = tgt_in.shape[1]
        causal = np.triu(np.full((t, t), NEG_INF), k=1)
        self_bias = causal[None, None, :, :] + np.where(tgt_in == PAD, NEG_INF, 0.0)[:, None, None, :]
        x = self.embed(tgt_in, "dec.emb")
        for i in range(self.cfg.layers):
            p = f"dec.{i}"
            y = self.ln(x, p + ".ln0")
            x = ag.add(x, self.dropout(self.attention(y, y, self_bias, p + ".self")))
            x = ag.add(x, self.dropout(self.attention(self.ln(x, p + ".ln1"), memory, src_bias, p + ".cross")))
            x = ag.add(x, self.dropout(self.feed_forward(self.ln(x, p + ".ln2"), p)))
        x = self.ln(x, "dec.ln")
        # tied output projection
        return ag.matmul(x, ag.transpose(self.w["dec.emb"], (1, 0)))


def _forward(params, batch, train, rng, track):
    net = _Net(params, train, rng, track)
    memory, src_bias = net.encode(batch.src)
    logits = net.decode(batch.tgt_in, memory, src_bias)
    smoothing = params.config.label_smoothing if train else 0.0
    loss, per_sample = ag.token_nll(logits, batch.tgt_out, batch.mask, smoothing)
    if not np.all(np.isfinite(per_sample)) or not np.isfinite(loss.data):
        raise NumericalDivergence(params.step, "non-finite loss")
    return net, loss, per_sample


def sequence_nll(params: ModelParams, sample: Sample, mode="eval", rng=None) -> float:
    """Unsmoothed sentence NLL, summed over target tokens plus the closing EOS."""
    if not sample.target:
        raise ValueError("empty target")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    with ag.no_grad():
        _, _, per = _forward(params, make_batch([sample]), mode == "train", rng, track=False)
    return float(per[0])


def batch_nll(params: ModelParams, samples) -> np.ndarray:
    """Eval-mode sentence NLL of every sample in one padded batch."""
    with ag.no_grad():
        _, _, per = _forward(params, make_batch(samples), False, None, track=False)
    return per


def corpus_nll(params: ModelParams, corpus, token_budget=4096) -> np.ndarray:
    """Eval-mode sentence NLL for every sample, indexed by sample id.

    Samples are grouped by length so padding stays small; the result does not
    depend on the grouping beyond floating-point summation order inside a row.
    """
    samples = list(corpus)
    out = np.zeros(len(samples))
    order = sorted(range(len(samples)), key=lambda i: (len(samples[i].source), len(samples[i].target), i))
    start = 0
    while start < len(order):
        longest, end = 0, start
        while end < len(order):
            s = samples[order[end]]
            n = max(len(s.source), len(s.target) + 1)
            if end > start and (end - start + 1) * max(longest, n) > token_budget:
                break
            longest = max(longest, n)
            end += 1
        idx = order[start:end]
        out[idx] = batch_nll(params, [samples[i] for i in idx])
        start = end
    return out


def backward(params: ModelParams, batch, rng=None) -> tuple[dict[str, np.ndarray], float]:
    """Gradient of the summed (label-smoothed) training loss over ``batch``.

    Returns ``(grads, unsmoothed_nll_sum)``. Dropout masks come from ``rng``;
    with ``dropout == 0`` no generator is needed.
    """
    samples = list(batch)
    if not samples:
        raise ValueError("empty batch")
    net, loss, per = _forward(params, make_batch(samples), True, rng, track=True)
    loss.backward()
    grads = {}
    for name, t in net.w.items():
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        if g.shape != params.weights[name].shape:
            raise RuntimeError(f"gradient shape {g.shape} != weight shape {params.weights[name].shape} for {name}")
        grads[name] = g
    return grads, float(per.sum())


def training_loss(params: ModelParams, batch, rng=None) -> float:
    """The scalar that ``backward`` differentiates (used by finite-difference checks)."""
    with ag.no_grad():
        _, loss, _ = _forward(params, make_batch(list(batch)), True, rng, track=False)
    return float(loss.data)


# ---------------------------------------------------------------------------
# incremental scoring for search


class DecoderState:
    """Encoded sources plus a ``next_log_probs(prefixes)`` callable for search."""

    def __init__(self, params: ModelParams, sources):
        self.params = params
        self.net = _Net(params, train=False)
        b = len(sources)
        s_len = max(len(s) for s in sources)
        src = np.full((b, s_len), PAD, dtype=np.int64)
        for r, s in enumerate(sources):
            src[r, : len(s)] = s
        with ag.no_grad():
            memory, bias = self.net.encode(src)
        self.memory = memory.data
        self.src_bias = bias

    def next_log_probs(self, prefixes: np.ndarray, rows=None) -> np.ndarray:
        """Log-probabilities of the next token for each prefix (BOS included).

        ``rows`` selects which encoded source each prefix belongs to.
        """
        memory, bias = self.memory, self.src_bias
        if rows is not None:
            memory, bias = memory[rows], bias[rows]
        with ag.no_grad():
            logits = self.net.decode(prefixes, Tensor(memory), bias).data[:, -1, :]
        out = ag.log_softmax_np(logits)
        if not np.all(np.isfinite(out)):
            raise NumericalDivergence(self.params.step, "non-finite decoder output")
        return out


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(params: ModelParams, path) -> None:
    arrays = {}
    for prefix, store in (("w", params.weights), ("m", params.m), ("v", params.v)):
        for k, a in store.items():
            arrays[f"{prefix}/{k}"] = a
    meta = json.dumps({"config": asdict(params.config), "step": params.step})
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.frombuffer(meta.encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path) -> ModelParams:
    with np.load(path) as z:
        meta = json.loads(bytes(z["__meta__"]).decode())
        stores = {"w": {}, "m": {}, "v": {}}
        for key in z.files:
            if key == "__meta__":
                continue
            prefix, name = key.split("/", 1)
            stores[prefix][name] = z[key].copy()
    return ModelParams(ModelConfig(**meta["config"]), stores["w"], stores["m"], stores["v"], meta["step"])
