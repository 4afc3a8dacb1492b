"""Adam with bias-corrected moments."""

from __future__ import annotations

import numpy as np


class NumericalError(RuntimeError):
    """Raised when training produces non-finite values."""


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """Update ``params`` in place from ``grads`` (both keyed by parameter name)."""
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
                raise NumericalError(f"non-finite gradient for {name}: {bad} of {np.size(g)} entries "
                                     f"(step {self.t + 1})")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1 - b1 ** self.t
        corr2 = 1 - b2 ** self.t
        for name, g in grads.items():
            p = params[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            g = g.astype(p.dtype, copy=False)
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= (self.lr * (m / corr1) / (np.sqrt(v / corr2) + self.eps)).astype(p.dtype)

    def state(self) -> dict[str, np.ndarray]:
        out = {"t": np.array([self.t], dtype=np.float32)}
        for name in self.m:
            out[f"m/{name}"] = self.m[name]
            out[f"v/{name}"] = self.v[name]
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        self.t = int(state["t"][0])
        self.m, self.v = {}, {}
        for key, value in state.items():
            if key.startswith("m/"):
                self.m[key[2:]] = value.copy()
            elif key.startswith("v/"):
                self.v[key[2:]] = value.copy()
