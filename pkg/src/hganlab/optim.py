"""Bias-corrected Adam over named tensors."""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .tensor import ContractError

__all__ = ["AdamState", "adam_update", "Adam"]


@dataclass
class AdamState:
    m: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    v: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    t: int = 0


def adam_update(params, grads, state: AdamState, lr=2e-4, beta1=0.5, beta2=0.999, eps=1e-8) -> None:
    """One Adam step on ``params`` (name -> array, modified in place).

    Parameters whose gradient is identically zero on this step are left
    untouched, moments included.
    """
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ContractError(f"{name}: grad shape {g.shape} != param shape {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        if not g.any():
            continue
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * np.square(g)
        denom = np.sqrt(v)
        denom *= 1.0 / math.sqrt(bc2)
        denom += eps
        np.divide(m, denom, out=denom)
        denom *= lr / bc1
        p -= denom


class Adam:
    """Adam bound to a name -> Tensor mapping; reads ``.grad`` and writes ``.data``."""

    def __init__(self, params, lr=2e-4, beta1=0.5, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = AdamState()

    def step(self) -> None:
        adam_update(
            {k: p.data for k, p in self.params.items()},
            {k: p.grad for k, p in self.params.items()},
            self.state,
            self.lr,
            self.beta1,
            self.beta2,
            self.eps,
        )
