"""White-box attacks and purification by projection onto a generator's range."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array

from . import tensor as T
from .data import rng_stream
from .models import ClassifierNet, GeneratorNet, cross_entropy, softmax
from .tensor import ContractError, Tensor

__all__ = [
    "SWEEP_HEADER",
    "AttackConfig",
    "DefenseConfig",
    "ProjectionResult",
    "input_gradient",
    "fgsm",
    "pgd",
    "attack",
    "latent_project",
    "defended_classify",
    "defense_sweep",
    "sweep_to_csv",
    "LatentProjectionDefense",
]

SWEEP_HEADER = ["L", "R", "seed", "clean_acc", "attacked_acc", "defended_acc", "attack", "epsilon"]


@dataclass
class AttackConfig:
    kind: str = "fgsm"
    epsilon: float = 0.3
    pgd_steps: int = 40
    pgd_step_size: float = 0.01
    random_start: bool = True
    clip_lo: float = 0.0
    clip_hi: float = 1.0

    def __post_init__(self):
        if self.kind not in ("fgsm", "pgd"):
            raise ContractError(f"unknown attack {self.kind!r}")
        if self.epsilon < 0 or self.pgd_steps < 1 or self.pgd_step_size <= 0:
            raise ContractError("need epsilon >= 0, pgd_steps >= 1, pgd_step_size > 0")


@dataclass
class DefenseConfig:
    L: int = 200
    R: int = 10
    learning_rate: float = 0.05

    def __post_init__(self):
        if self.L < 1 or self.R < 1:
            raise ContractError("need L >= 1 and R >= 1")


@dataclass
class ProjectionResult:
    z: np.ndarray
    x_rec: np.ndarray
    residual: np.ndarray
    restart_residuals: np.ndarray


def _classifier_net(classifier) -> ClassifierNet:
    return getattr(classifier, "net_", classifier)


def _generator_net(generator) -> GeneratorNet:
    nets = getattr(generator, "nets_", None)
    return nets.generator if nets is not None else generator


def input_gradient(classifier, x, y) -> np.ndarray:
    """d CE(classifier(x), y) / dx, summed over the batch so rows are independent."""
    net = _classifier_net(classifier)
    xt = Tensor(np.array(x, dtype=np.float64), requires_grad=True)
    with T.frozen(net.parameters().values()):
        loss = cross_entropy(net(xt), np.asarray(y), reduction="sum")
    T.backward(loss)
    return xt.grad


def _within_budget(xa: np.ndarray, x0: np.ndarray, eps: float) -> np.ndarray:
    """Step rounded-out coordinates one ulp toward ``x0`` until ``|xa - x0| <= eps`` in floating point."""
    over = np.abs(xa - x0) > eps
    while np.any(over):
        xa = np.where(over, np.nextafter(xa, x0), xa)
        over = np.abs(xa - x0) > eps
    return xa


def fgsm(classifier, x, y_true, epsilon: float, clip=(0.0, 1.0)) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    g = input_gradient(classifier, x, y_true)
    return _within_budget(np.clip(x + epsilon * np.sign(g), clip[0], clip[1]), x, epsilon)


def pgd(classifier, x, y_true, config: AttackConfig, seed: int = 0) -> np.ndarray:
    """Iterated sign-gradient ascent projected onto the eps-ball and the clip box."""
    x0 = np.asarray(x, dtype=np.float64)
    eps, lo, hi = config.epsilon, config.clip_lo, config.clip_hi
    if config.random_start:
        rng = rng_stream(seed, "pgd-start")
        xa = _within_budget(np.clip(x0 + rng.uniform(-eps, eps, size=x0.shape), lo, hi), x0, eps)
    else:
        xa = x0.copy()
    for _ in range(config.pgd_steps):
        g = input_gradient(classifier, xa, y_true)
        xa = np.clip(xa + config.pgd_step_size * np.sign(g), lo, hi)
        xa = _within_budget(np.clip(xa, x0 - eps, x0 + eps), x0, eps)
    return xa


def attack(classifier, x, y_true, config: AttackConfig, seed: int = 0) -> np.ndarray:
    if config.kind == "fgsm":
        return fgsm(classifier, x, y_true, config.epsilon, (config.clip_lo, config.clip_hi))
    return pgd(classifier, x, y_true, config, seed)


def _restart_latents(seed: int, n_restarts: int, n: int, dz: int) -> np.ndarray:
    # drawn restart by restart so the first R restarts never depend on the total count
    rng = rng_stream(seed, "projection")
    return np.stack([rng.standard_normal((n, dz)) for _ in range(n_restarts)])


def _project_trace(g: GeneratorNet, x: np.ndarray, z0: np.ndarray, record_at, lr: float):
    """Gradient descent on ||G(z) - x||^2 for all restarts at once.

    ``z0`` has shape (R, n, dz). Yields ``(L, z, residuals)`` after each step
    count listed in ``record_at``; residuals have shape (R, n).
    """
    r, n, dz = z0.shape
    target = np.tile(x, (r, 1))
    z = z0.reshape(r * n, dz).copy()
    wanted = sorted(set(record_at))
    params = g.parameters().values()
    step = 0
    for stop in wanted:
        while step < stop:
            zt = Tensor(z, requires_grad=True)
            with T.frozen(params):
                diff = T.sub(g(zt), Tensor(target))
                loss = T.sum_(T.mul(diff, diff))
            T.backward(loss)
            z = z - lr * zt.grad
            step += 1
        out = g(Tensor(z)).data
        res = ((out - target) ** 2).sum(axis=1).reshape(r, n)
        yield stop, z.reshape(r, n, dz), out.reshape(r, n, -1), res


def _best_restart(z, out, res, n_restarts: int) -> ProjectionResult:
    res = res[:n_restarts]
    masked = np.where(np.isfinite(res), res, np.inf)
    if np.any(np.all(~np.isfinite(masked), axis=0)):
        raise FloatingPointError("every restart produced a non-finite residual")
    best = np.argmin(masked, axis=0)
    cols = np.arange(res.shape[1])
    return ProjectionResult(z[best, cols], out[best, cols], masked[best, cols], res)


def latent_project(generator, x, config: DefenseConfig, seed: int = 0, z_init=None) -> ProjectionResult:
    """Best-of-R latent reconstruction after L gradient steps.

    ``z_init`` (n, dz), if given, replaces the first restart's starting point.
    """
    g = _generator_net(generator)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != g.data_dim:
        raise ContractError(f"generator emits {g.data_dim} dims, input has {x.shape[1]}")
    z0 = _restart_latents(seed, config.R, len(x), g.latent_dim)
    if z_init is not None:
        z0[0] = z_init
    (_, z, out, res), = _project_trace(g, x, z0, [config.L], config.learning_rate)
    return _best_restart(z, out, res, config.R)


def defended_classify(classifier, generator, x, config: DefenseConfig, seed: int = 0) -> np.ndarray:
    rec = latent_project(generator, x, config, seed).x_rec
    return np.argmax(softmax(_classifier_net(classifier)(Tensor(rec)).data), axis=1)


def _accuracy(net, x, y) -> float:
    return float(np.mean(np.argmax(net(Tensor(x)).data, axis=1) == y))


def defense_sweep(classifier, generator, x_test, y_test, L_values, R_values, attack_config: AttackConfig, seeds, lr: float = 0.05) -> list:
    """Accuracy table over an (L, R, seed) grid.

    For each seed one projection run with max(L) steps and max(R) restarts is
    recorded at every requested L; smaller R keep the first R restarts, which
    is exactly what a separate run with that R would draw.
    """
    if not len(L_values) or not len(R_values) or not len(seeds):
        raise ContractError("sweep grids must be non-empty")
    net = _classifier_net(classifier)
    g = _generator_net(generator)
    x_test = np.asarray(x_test, dtype=np.float64)
    y_test = np.asarray(y_test)
    clean_acc = _accuracy(net, x_test, y_test)
    rows = []
    for seed in seeds:
        x_adv = attack(net, x_test, y_test, attack_config, seed)
        attacked_acc = _accuracy(net, x_adv, y_test)
        z0 = _restart_latents(seed, max(R_values), len(x_test), g.latent_dim)
        for L, z, out, res in _project_trace(g, x_adv, z0, L_values, lr):
            for R in R_values:
                rec = _best_restart(z, out, res, R).x_rec
                rows.append(
                    {
                        "L": L,
                        "R": R,
                        "seed": seed,
                        "clean_acc": clean_acc,
                        "attacked_acc": attacked_acc,
                        "defended_acc": _accuracy(net, rec, y_test),
                        "attack": attack_config.kind,
                        "epsilon": attack_config.epsilon,
                    }
                )
    order = {L: i for i, L in enumerate(L_values)}
    rorder = {R: i for i, R in enumerate(R_values)}
    rows.sort(key=lambda r: (list(seeds).index(r["seed"]), order[r["L"]], rorder[r["R"]]))
    return rows


def sweep_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    for r in rows:
        w.writerow([r[k] if isinstance(r[k], (int, str)) else repr(float(r[k])) for k in SWEEP_HEADER])
    return buf.getvalue()


class LatentProjectionDefense(TransformerMixin, BaseEstimator):
    """Replace each input by its closest reconstruction from ``generator``.

    ``generator`` is a fitted :class:`~hganlab.training.HybridGAN` or a bare
    generator network. ``fit`` is a no-op kept for pipeline compatibility.
    """

    def __init__(self, generator=None, n_iter=200, n_restarts=10, learning_rate=0.05, random_state=0):
        self.generator = generator
        self.n_iter = n_iter
        self.n_restarts = n_restarts
        self.learning_rate = learning_rate
        self.random_state = random_state

    def fit(self, X=None, y=None):
        if self.generator is None:
            raise ContractError("LatentProjectionDefense needs a generator")
        return self

    def transform(self, X):
        X = check_array(X, dtype=np.float64)
        cfg = DefenseConfig(self.n_iter, self.n_restarts, self.learning_rate)
        return latent_project(self.generator, X, cfg, self.random_state).x_rec
