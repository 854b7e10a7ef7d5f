"""Finite-difference audit of every primitive and every training loss.

Each check draws ``n_states`` random states and reports the worst relative
error. Networks are kept small so every coordinate can be perturbed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import rng_stream
from .models import AutoregressiveNet, DiscriminatorNet, GeneratorNet, cross_entropy
from .tensor import Tensor, gradient_check
from .training import ar_loss, discriminator_loss, generator_loss

__all__ = ["TOLERANCE", "CheckResult", "run_gradchecks"]

TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    max_error: float

    @property
    def passed(self) -> bool:
        return self.max_error < TOLERANCE


def _away_from_kinks(rng, shape, margin=0.05):
    v = rng.normal(size=shape)
    return np.where(np.abs(v) < margin, v + np.copysign(2 * margin, v), v)


def _weighted_sum(out: Tensor, w: np.ndarray) -> Tensor:
    flat = T.reshape(out, (out.data.size,))
    return T.sum_(T.mul(flat, Tensor(w[: out.data.size])))


_UNARY = {
    "neg": T.neg,
    "log": lambda t: T.log(T.add(T.mul(t, t), 0.5)),
    "exp": T.exp,
    "sigmoid": T.sigmoid,
    "tanh": T.tanh,
    "relu": T.relu,
    "leaky_relu": T.leaky_relu,
    "abs": T.abs_,
    "clip": lambda t: T.clip(t, -2.0, 2.0),
    "sum_axis": lambda t: T.sum_(t, axis=1),
    "mean": T.mean,
    "reshape": lambda t: T.reshape(t, (12,)),
    "rows": lambda t: T.rows(t, 1, 3),
    "cols": lambda t: T.cols(t, 1, 3),
}

_BINARY = {"add": T.add, "sub": T.sub, "mul": T.mul}


def _primitive_checks(rng, n_states):
    results = []
    w = rng.normal(size=64)
    for name, fn in _UNARY.items():
        worst = 0.0
        for _ in range(n_states):
            x = Tensor(_away_from_kinks(rng, (3, 4)), requires_grad=True)
            if name == "clip":
                x.data[np.abs(np.abs(x.data) - 2.0) < 0.05] *= 0.5
            worst = max(worst, gradient_check(lambda t: _weighted_sum(fn(t), w), x))
        results.append(CheckResult(f"primitive {name}", worst))
    for name, fn in _BINARY.items():
        worst = 0.0
        for _ in range(n_states):
            a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
            b = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
            worst = max(worst, gradient_check(lambda t: _weighted_sum(fn(t, b), w), a))
            worst = max(worst, gradient_check(lambda t: _weighted_sum(fn(a, t), w), b))
        results.append(CheckResult(f"primitive {name}", worst))
    worst = 0.0
    for _ in range(n_states):
        a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
        s = Tensor(rng.normal(size=()), requires_grad=True)
        worst = max(worst, gradient_check(lambda t: _weighted_sum(T.matmul(t, b), w), a))
        worst = max(worst, gradient_check(lambda t: _weighted_sum(T.matmul(a, t), w), b))
        worst = max(worst, gradient_check(lambda t: _weighted_sum(T.mul(a, t), w), s))
        worst = max(worst, gradient_check(lambda t: _weighted_sum(T.concat_rows([t, a]), w), a))
    results.append(CheckResult("primitive matmul/broadcast/concat", worst))
    worst = 0.0
    for _ in range(n_states):
        logits = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
        labels = rng.integers(0, 4, size=5)
        worst = max(worst, gradient_check(lambda t: cross_entropy(t, labels), logits))
    results.append(CheckResult("primitive cross_entropy", worst))
    return results


def _randomize(net, rng):
    """Random biases too, so no pre-activation sits exactly on a relu kink."""
    for k, p in net.parameters().items():
        if k.endswith("bias"):
            p.data[...] = 0.5 * rng.normal(size=p.shape)
    return net


def _params_worst(loss_fn, params) -> float:
    return max(gradient_check(lambda _: loss_fn(), p) for p in params.values())


def _loss_checks(rng, n_states, seed):
    d, dz, b = 3, 2, 6
    names = [
        "discriminator_loss wrt D",
        "generator_loss wrt G",
        "ar_loss l1 wrt AR",
        "ar_loss nll wrt AR (gaussian)",
        "ar_loss nll wrt AR (mixture)",
        "ar_loss nll wrt AR (bernoulli)",
        "projection residual wrt z",
    ]
    worst = dict.fromkeys(names, 0.0)
    for i in range(n_states):
        s = seed * 1000 + i
        g = _randomize(GeneratorNet(dz, d, (6,), seed=s, std=0.5), rng)
        dn = _randomize(DiscriminatorNet(d, (6,), seed=s, std=0.5), rng)
        x = rng.normal(size=(b, d))
        x_xi = rng.normal(size=(b, d))
        z = Tensor(rng.normal(size=(b, dz)))

        def d_loss():
            fake = g(z).detach()
            return discriminator_loss(dn(Tensor(x_xi)), dn(Tensor(x)), dn(fake), dn(fake))

        worst["discriminator_loss wrt D"] = max(worst["discriminator_loss wrt D"], _params_worst(d_loss, dn.parameters()))

        def g_loss():
            with T.frozen(dn.parameters().values()):
                s_f = dn(g(z))
                return generator_loss(s_f, s_f)

        worst["generator_loss wrt G"] = max(worst["generator_loss wrt G"], _params_worst(g_loss, g.parameters()))

        ar = _randomize(AutoregressiveNet(d, (6,), "gaussian", 0.5, seed=s, std=0.5), rng)
        # keep residuals away from the |.| kink
        x_far = ar(Tensor(x)).data + np.copysign(0.5 + np.abs(rng.normal(size=(b, d))), rng.normal(size=(b, d)))
        k = "ar_loss l1 wrt AR"
        worst[k] = max(worst[k], _params_worst(lambda: ar_loss(x_far, ar(Tensor(x_far)), "l1"), ar.parameters()))
        k = "ar_loss nll wrt AR (gaussian)"
        worst[k] = max(worst[k], _params_worst(lambda: ar_loss(x, mode="nll", model=ar), ar.parameters()))
        mix = _randomize(AutoregressiveNet(d, (6,), "mixture", 0.7, seed=s, std=0.5, n_components=3), rng)
        k = "ar_loss nll wrt AR (mixture)"
        worst[k] = max(worst[k], _params_worst(lambda: ar_loss(x, mode="nll", model=mix), mix.parameters()))
        bern = _randomize(AutoregressiveNet(d, (6,), "bernoulli", seed=s, std=0.5), rng)
        xb = (rng.random((b, d)) < 0.5).astype(float)
        k = "ar_loss nll wrt AR (bernoulli)"
        worst[k] = max(worst[k], _params_worst(lambda: ar_loss(xb, mode="nll", model=bern), bern.parameters()))

        zt = Tensor(rng.normal(size=(b, dz)), requires_grad=True)

        def residual(t):
            with T.frozen(g.parameters().values()):
                diff = T.sub(g(t), Tensor(x))
                return T.sum_(T.mul(diff, diff))

        k = "projection residual wrt z"
        worst[k] = max(worst[k], gradient_check(residual, zt))
    return [CheckResult(k, v) for k, v in worst.items()]


def run_gradchecks(n_states: int = 10, seed: int = 0) -> list:
    """All checks; each result holds the worst error over ``n_states`` states."""
    rng = rng_stream(seed, "gradcheck")
    return _primitive_checks(rng, n_states) + _loss_checks(rng, n_states, seed)
