"""Tiny reverse-mode automatic differentiation over numpy arrays.

Every op records its parents and a closure that pushes the upstream
gradient back to them. ``Tensor.backward`` walks the graph in reverse
topological order. Recording is switched off inside ``no_grad()`` so the
same model code serves both training and pure evaluation.
"""

from __future__ import annotations

import contextlib

import numpy as np

DTYPE = np.float64

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, g):
        self.grad = g if self.grad is None else self.grad + g

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                node.grad = None

    # arithmetic -----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return total(self)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=DTYPE))


def _make(data, parents, backward):
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, True, tuple(p for p in parents if p.requires_grad), backward)
    return Tensor(data)


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), backward)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), backward)


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if b.data.ndim == 2 and a.data.ndim > 2:
        return _matmul_flat(a, b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _make(a.data @ b.data, (a, b), backward)


def _matmul_flat(a, b):
    # (..., k) @ (k, n) as one 2-D product
    lead = a.shape[:-1]
    a2 = a.data.reshape(-1, a.shape[-1])

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        if a.requires_grad:
            a._accumulate((g2 @ b.data.T).reshape(a.shape))
        if b.requires_grad:
            b._accumulate(a2.T @ g2)

    return _make((a2 @ b.data).reshape(*lead, b.shape[1]), (a, b), backward)


def total(a):
    def backward(g):
        a._accumulate(np.broadcast_to(g, a.shape).copy())

    return _make(np.asarray(a.data.sum()), (a,), backward)


def reshape(a, shape):
    def backward(g):
        a._accumulate(g.reshape(a.shape))

    return _make(a.data.reshape(shape), (a,), backward)


def transpose(a, axes):
    inverse = np.argsort(axes)

    def backward(g):
        a._accumulate(g.transpose(inverse))

    return _make(a.data.transpose(axes), (a,), backward)


def relu(a):
    mask = a.data > 0

    def backward(g):
        a._accumulate(g * mask)

    return _make(a.data * mask, (a,), backward)


def embedding(table, ids):
    """Row lookup ``table[ids]``; the gradient scatters back with add.at."""

    def backward(g):
        grad = np.zeros_like(table.data)
        np.add.at(grad, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        table._accumulate(grad)

    return _make(table.data[ids], (table,), backward)


def softmax(a, bias=None):
    """Softmax over the last axis of ``a + bias`` (bias is a constant)."""
    x = a.data if bias is None else a.data + bias
    x = x - x.max(axis=-1, keepdims=True)
    e = np.exp(x)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        a._accumulate(_unbroadcast(s * (g - (g * s).sum(axis=-1, keepdims=True)), a.shape))

    return _make(s, (a,), backward)


def layer_norm(x, gamma, beta, eps=1e-5):
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        if gamma.requires_grad:
            gamma._accumulate(_unbroadcast(g * xhat, gamma.shape))
        if beta.requires_grad:
            beta._accumulate(_unbroadcast(g, beta.shape))
        if x.requires_grad:
            gx = g * gamma.data
            n = x.shape[-1]
            x._accumulate(
                inv / n * (n * gx - gx.sum(axis=-1, keepdims=True)
                           - xhat * (gx * xhat).sum(axis=-1, keepdims=True))
            )

    return _make(out, (x, gamma, beta), backward)


def log_softmax_np(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def token_nll(logits, targets, mask, smoothing=0.0):
    """Summed cross-entropy of ``targets`` under ``logits`` over unmasked positions.

    With ``smoothing`` > 0 the gold one-hot is mixed with a uniform
    distribution over the vocabulary. Returns ``(loss_tensor, per_row_nll)``
    where ``per_row_nll`` is always the unsmoothed NLL summed over each row
    of the leading axis.
    """
    logp = log_softmax_np(logits.data)
    vocab = logp.shape[-1]
    gold = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    nll = -gold * mask
    if smoothing > 0.0:
        tok_loss = (1.0 - smoothing) * -gold - smoothing * logp.mean(axis=-1)
        tok_loss = tok_loss * mask
    else:
        tok_loss = nll
    per_row = nll.reshape(nll.shape[0], -1).sum(axis=1)

    def backward(g):
        q = np.full(logp.shape, smoothing / vocab)
        np.put_along_axis(q, targets[..., None], 1.0 - smoothing + smoothing / vocab, axis=-1)
        logits._accumulate(g * (np.exp(logp) - q) * mask[..., None])

    return _make(np.asarray(tok_loss.sum()), (logits,), backward), per_row
