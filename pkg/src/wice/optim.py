"""SGD and Adam over named parameter dicts.

Updates are deterministic functions of (params, grads, config, step
counter). Non-finite gradients abort the run, naming the offending
parameter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteGradient


@dataclass
class OptimizerConfig:
    kind: str = "adam"            # "adam" | "sgd"
    lr: float = 1e-3
    momentum: float = 0.0         # sgd only
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class Optimizer:
    def __init__(self, config: OptimizerConfig, arrays: dict[str, np.ndarray]):
        if config.kind not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {config.kind!r}")
        self.config = config
        self.step_count = 0
        self._m = {k: np.zeros_like(v) for k, v in arrays.items()}
        self._v = ({k: np.zeros_like(v) for k, v in arrays.items()}
                   if config.kind == "adam" else None)

    def step(self, arrays: dict[str, np.ndarray],
             grads: dict[str, np.ndarray], page_id: str | None = None):
        """Apply one update in place."""
        for name, grad in grads.items():
            if not np.all(np.isfinite(grad)):
                raise NonFiniteGradient(name, page_id)
        cfg = self.config
        self.step_count += 1
        if cfg.kind == "sgd":
            for name, grad in grads.items():
                if cfg.momentum:
                    m = self._m[name]
                    m *= cfg.momentum
                    m += grad
                    arrays[name] -= cfg.lr * m
                else:
                    arrays[name] -= cfg.lr * grad
            return
        t = self.step_count
        bc1 = 1.0 - cfg.beta1 ** t
        bc2 = 1.0 - cfg.beta2 ** t
        for name, grad in grads.items():
            m = self._m[name]
            v = self._v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * grad
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * grad * grad
            arrays[name] -= cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)


def optimizer_step(arrays, grads, config: OptimizerConfig,
                   optimizer: Optimizer | None = None) -> Optimizer:
    """Functional convenience wrapper: mutates `arrays`, returns the
    optimizer carrying the step counter and moment state."""
    if optimizer is None:
        optimizer = Optimizer(config, arrays)
    optimizer.step(arrays, grads)
    return optimizer
