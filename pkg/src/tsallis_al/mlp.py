"""Fully-connected ReLU network with hand-written backpropagation, and Adam."""

from __future__ import annotations

import numpy as np


class Mlp:
    """``in -> hidden... -> out`` with ReLU between layers and a linear head.

    Parameters live in ``self.params`` as ``[W0, b0, W1, b1, ...]`` with
    ``W`` of shape ``(fan_in, fan_out)``. Initialization draws from
    ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``.
    """

    def __init__(self, sizes, rng=None, dtype=np.float32):
        self.sizes = tuple(int(s) for s in sizes)
        if len(self.sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(rng)
        self.params = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.params.append(rng.uniform(-bound, bound, (fan_in, fan_out)).astype(self.dtype))
            self.params.append(rng.uniform(-bound, bound, fan_out).astype(self.dtype))

    def forward(self, x, cache=False):
        h = np.asarray(x, dtype=self.dtype)
        if h.ndim == 1:
            h = h[None]
        acts = [h]
        n_layers = len(self.params) // 2
        for i in range(n_layers):
            W, b = self.params[2 * i], self.params[2 * i + 1]
            h = h @ W + b
            if i < n_layers - 1:
                h = np.maximum(h, 0)
                acts.append(h)
        return (h, acts) if cache else h

    __call__ = forward

    def backward(self, acts, dout):
        """Gradients of ``sum(dout * output)`` w.r.t. every parameter, same order as ``params``."""
        grads = [None] * len(self.params)
        d = np.asarray(dout, dtype=self.dtype)
        for i in reversed(range(len(self.params) // 2)):
            h = acts[i]
            grads[2 * i] = h.T @ d
            grads[2 * i + 1] = d.sum(0)
            if i > 0:
                d = (d @ self.params[2 * i].T) * (h > 0)
        return grads

    def copy(self) -> "Mlp":
        other = Mlp.__new__(Mlp)
        other.sizes, other.dtype = self.sizes, self.dtype
        other.params = [p.copy() for p in self.params]
        return other

    def load(self, other: "Mlp"):
        for dst, src in zip(self.params, other.params):
            dst[...] = src

    def astype(self, dtype) -> "Mlp":
        other = self.copy()
        other.dtype = np.dtype(dtype)
        other.params = [p.astype(dtype) for p in other.params]
        return other

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, vec):
        i = 0
        for p in self.params:
            p[...] = np.reshape(vec[i : i + p.size], p.shape)
            i += p.size


class Adam:
    """Adam with bias correction, updating a parameter list in place."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
