"""Fully connected tanh network with hand-written reverse-mode gradients."""

from __future__ import annotations

import numpy as np


def orthogonal(rng: np.random.Generator, n_in: int, n_out: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(n_in, n_out), min(n_in, n_out)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    w = q if n_in >= n_out else q.T
    return gain * w[:n_in, :n_out]


class Mlp:
    """``sizes[0] -> ... -> sizes[-1]``; tanh on every hidden layer, linear output.

    ``params`` alternates weight ``(n_in, n_out)`` and bias ``(n_out,)`` arrays.
    """

    def __init__(
        self,
        sizes: list[int],
        rng: np.random.Generator | None = None,
        hidden_gain: float = np.sqrt(2.0),
        output_gain: float = 1.0,
    ):
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValueError(f"invalid layer sizes {sizes}")
        self.sizes = [int(s) for s in sizes]
        rng = rng or np.random.default_rng(0)
        self.params: list[np.ndarray] = []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            gain = output_gain if i == len(sizes) - 2 else hidden_gain
            self.params.append(orthogonal(rng, n_in, n_out, gain))
            self.params.append(np.zeros(n_out))
        self._cache: list[np.ndarray] | None = None

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def forward(self, x: np.ndarray, keep: bool = True) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.sizes[0]:
            raise ValueError(f"input width {x.shape[-1]} does not match {self.sizes[0]}")
        acts = [x]
        h = x
        for i in range(self.n_layers):
            h = h @ self.params[2 * i] + self.params[2 * i + 1]
            if i < self.n_layers - 1:
                h = np.tanh(h)
            acts.append(h)
        self._cache = acts if keep else None
        return h

    def backward(self, grad_out: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        """Parameter gradients and the input gradient for the last ``forward``."""
        if self._cache is None:
            raise RuntimeError("backward called without a preceding forward")
        acts = self._cache
        g = np.asarray(grad_out, dtype=float)
        if g.shape != acts[-1].shape:
            raise ValueError(f"output gradient shape {g.shape} does not match {acts[-1].shape}")
        grads: list[np.ndarray] = [np.empty(0)] * len(self.params)
        for i in reversed(range(self.n_layers)):
            if i < self.n_layers - 1:
                g = g * (1.0 - acts[i + 1] ** 2)
            inp = acts[i]
            grads[2 * i] = inp.reshape(-1, inp.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            grads[2 * i + 1] = g.reshape(-1, g.shape[-1]).sum(axis=0)
            g = g @ self.params[2 * i].T
        return grads, g

    def zero_like(self) -> list[np.ndarray]:
        return [np.zeros_like(p) for p in self.params]
