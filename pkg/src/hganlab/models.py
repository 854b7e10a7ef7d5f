"""Fully connected networks: generator, discriminator, masked autoregressive
density model and the mode classifier used for evaluation."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import tensor as T
from .data import rng_stream
from .optim import Adam
from .tensor import ContractError, DomainError, Tensor

__all__ = [
    "INIT_STD",
    "init_params",
    "MLP",
    "GeneratorNet",
    "DiscriminatorNet",
    "AutoregressiveNet",
    "ClassifierNet",
    "generator_forward",
    "discriminator_forward",
    "ar_forward",
    "ar_sample",
    "ar_log_likelihood",
    "softmax",
    "cross_entropy",
    "classifier_forward",
    "classifier_train",
    "ModeClassifier",
]

# N(0, 0.01) read as variance 0.01
INIT_STD = 0.1

_ACTS = {
    "relu": T.relu,
    "leaky_relu": T.leaky_relu,
    "sigmoid": T.sigmoid,
    "tanh": T.tanh,
    "identity": lambda x: x,
}


def init_params(sizes, seed: int, std: float = INIT_STD, stream: str = "init") -> "OrderedDict[str, np.ndarray]":
    """Gaussian weights and zero biases for a chain of dense layers."""
    if len(sizes) < 2 or any(int(s) < 1 for s in sizes):
        raise ContractError(f"invalid layer plan {sizes}")
    rng = rng_stream(seed, stream)
    params = OrderedDict()
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        params[f"layer{i}.weight"] = std * rng.standard_normal((n_in, n_out))
        params[f"layer{i}.bias"] = np.zeros((1, n_out))
    return params


class MLP:
    """Dense chain ``x @ W + 1 b`` with a hidden and an output activation.

    ``masks`` (optional, one per layer) multiply the weights elementwise
    before every use.
    """

    def __init__(self, sizes, hidden="relu", output="identity", seed=0, std=INIT_STD, masks=None, stream="init"):
        self.sizes = [int(s) for s in sizes]
        self.hidden = hidden
        self.output = output
        self.params = OrderedDict(
            (k, Tensor(v, requires_grad=True)) for k, v in init_params(self.sizes, seed, std, stream).items()
        )
        self.masks = None if masks is None else [Tensor(m) for m in masks]
        if self.masks is not None:
            for i, m in enumerate(self.masks):
                if m.shape != (self.sizes[i], self.sizes[i + 1]):
                    raise ContractError(f"mask {i} has shape {m.shape}")
        self._ones: dict[int, Tensor] = {}

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def parameters(self) -> "OrderedDict[str, Tensor]":
        return self.params

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def _ones_col(self, n: int) -> Tensor:
        if n not in self._ones:
            self._ones[n] = Tensor(np.ones((n, 1)))
        return self._ones[n]

    def forward(self, x, return_hidden: bool = False):
        x = T.constant(x)
        if x.data.ndim != 2 or x.shape[1] != self.sizes[0]:
            raise ContractError(f"expected input (batch, {self.sizes[0]}), got {x.shape}")
        ones = self._ones_col(x.shape[0])
        h = x
        last_hidden = x
        for i in range(self.n_layers):
            w = self.params[f"layer{i}.weight"]
            if self.masks is not None:
                w = T.mul(w, self.masks[i])
            h = T.add(T.matmul(h, w), T.matmul(ones, self.params[f"layer{i}.bias"]))
            if i < self.n_layers - 1:
                h = _ACTS[self.hidden](h)
                last_hidden = h
            else:
                h = _ACTS[self.output](h)
        return (h, last_hidden) if return_hidden else h

    __call__ = forward

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v.data.copy()) for k, v in self.params.items())

    def load_state_dict(self, state) -> None:
        for k, p in self.params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise ContractError(f"{k}: shape {arr.shape} != {p.shape}")
            p.data[...] = arr


class GeneratorNet(MLP):
    """z (latent_dim) -> x (data_dim); relu hidden, identity or sigmoid output."""

    def __init__(self, latent_dim=16, data_dim=2, hidden=(128, 128, 128), output="identity", seed=0, std=INIT_STD):
        super().__init__([latent_dim, *hidden, data_dim], "relu", output, seed, std, stream="init/generator")
        self.latent_dim = latent_dim
        self.data_dim = data_dim


class DiscriminatorNet(MLP):
    """Single shared discriminator: leaky relu (0.2) hidden, sigmoid score."""

    def __init__(self, data_dim=2, hidden=(128, 128, 128), seed=0, std=INIT_STD):
        super().__init__([data_dim, *hidden, 1], "leaky_relu", "sigmoid", seed, std, stream="init/discriminator")
        self.data_dim = data_dim


def made_masks(d: int, hidden, outputs_per_dim: int = 1) -> list:
    """Connectivity masks so output i sees only inputs 1..i-1 (raster order).

    With ``outputs_per_dim = k`` the output layer is ``k`` consecutive blocks
    of ``d`` units each, and unit ``b * d + i`` belongs to dimension ``i``.
    """
    deg_in = np.arange(1, d + 1)
    span = max(d - 1, 1)
    degrees = [deg_in]
    for h in hidden:
        degrees.append(np.arange(h) % span + 1)
    masks = []
    for prev, cur in zip(degrees[:-1], degrees[1:]):
        masks.append((cur[None, :] >= prev[:, None]).astype(np.float64))
    deg_out = np.tile(deg_in, outputs_per_dim)
    masks.append((deg_out[None, :] > degrees[-1][:, None]).astype(np.float64))
    return masks


AR_HEADS = ("gaussian", "bernoulli", "mixture")


class AutoregressiveNet(MLP):
    """Masked network predicting each conditional p(x_i | x_<i).

    ``head='gaussian'`` outputs conditional means (fixed std ``sigma``);
    ``head='bernoulli'`` outputs Bernoulli probabilities;
    ``head='mixture'`` models each conditional as ``n_components`` Gaussians
    with learned means and weights and fixed std ``sigma``. Its point
    prediction is the conditional mean.

    Mixture outputs are laid out as ``n_components`` blocks of means followed
    by ``n_components`` blocks of weight logits, each block ``d`` wide.
    """

    def __init__(self, data_dim=2, hidden=(128, 128), head="gaussian", sigma=0.05, seed=0, std=INIT_STD, n_components=8):
        if head not in AR_HEADS:
            raise ContractError(f"unknown head {head!r}")
        k = 2 * n_components if head == "mixture" else 1
        masks = made_masks(data_dim, hidden, k)
        super().__init__([data_dim, *hidden, k * data_dim], "relu", "identity", seed, std, masks, stream="init/ar")
        self.data_dim = data_dim
        self.head = head
        self.sigma = float(sigma)
        self.n_components = n_components if head == "mixture" else 1
        if head == "mixture":
            m, d = n_components, data_dim
            # group-sum matrix: (m*d, d), sums the m entries that share a dimension
            self._group = Tensor(np.tile(np.eye(d), (m, 1)))
            self._spread = Tensor(np.tile(np.eye(d), (1, m)))
            # the first dimension's means are bias-only; identical zero biases
            # would keep every component identical forever
            last = self.params[f"layer{self.n_layers - 1}.bias"]
            last.data[0, : m * d] = rng_stream(seed, "init/ar-mixture").standard_normal(m * d)

    def logits(self, x) -> Tensor:
        return MLP.forward(self, x)

    def mixture_params(self, x):
        """(means, log weights), each (batch, M*d), for the mixture head."""
        out = MLP.forward(self, x)
        md = self.n_components * self.data_dim
        means, logits = T.cols(out, 0, md), T.cols(out, md, 2 * md)
        shift = Tensor(_group_max(logits.data, self.n_components, self.data_dim) @ self._spread.data)
        z = T.sub(logits, shift)
        log_norm = T.log(T.matmul(T.exp(z), self._group))
        log_w = T.sub(z, T.matmul(log_norm, self._spread))
        return means, log_w

    def forward(self, x, return_hidden: bool = False):
        if self.head == "mixture":
            means, log_w = self.mixture_params(x)
            return T.matmul(T.mul(T.exp(log_w), means), self._group)
        out = MLP.forward(self, x)
        return T.sigmoid(out) if self.head == "bernoulli" else out

    __call__ = forward


def _group_max(a: np.ndarray, m: int, d: int) -> np.ndarray:
    return a.reshape(len(a), m, d).max(axis=1)


class ClassifierNet(MLP):
    """Four dense layers ending in C logits; the last hidden layer doubles as a feature map."""

    def __init__(self, data_dim=2, n_classes=8, hidden=(64, 64, 64), seed=0, std=INIT_STD):
        super().__init__([data_dim, *hidden, n_classes], "relu", "identity", seed, std, stream="init/classifier")
        self.n_classes = n_classes


# ---------------------------------------------------------------------------
# functional forms


def generator_forward(g: GeneratorNet, z) -> Tensor:
    return g(z)


def discriminator_forward(dnet: DiscriminatorNet, x) -> Tensor:
    return dnet(x)


def ar_forward(p: AutoregressiveNet, x) -> Tensor:
    """Teacher-forced per-dimension prediction (mean or probability)."""
    return p(x)


def ar_log_likelihood(p: AutoregressiveNet, x) -> Tensor:
    """Per-sample log p(x) = sum_i log p(x_i | x_<i), shape (batch,)."""
    x = T.constant(x)
    if p.head != "bernoulli" and not np.all(np.isfinite(x.data)):
        raise DomainError("non-finite input to a gaussian likelihood")
    if p.head == "mixture":
        means, log_w = p.mixture_params(x)
        r = T.sub(T.matmul(x, p._spread), means)
        log_c = T.add(T.mul(T.mul(r, r), -0.5 / p.sigma**2), T.add(log_w, -0.5 * np.log(2.0 * np.pi * p.sigma**2)))
        shift = _group_max(log_c.data, p.n_components, p.data_dim)
        spread = Tensor(shift @ p._spread.data)
        per_dim = T.add(T.log(T.matmul(T.exp(T.sub(log_c, spread)), p._group)), Tensor(shift))
    elif p.head == "gaussian":
        mu = p(x)
        r = T.sub(x, mu)
        quad = T.mul(T.mul(r, r), -0.5 / p.sigma**2)
        per_dim = T.add(quad, -0.5 * np.log(2.0 * np.pi * p.sigma**2))
    else:
        logits = p.logits(x)
        log_p = T.log(T.clip(T.sigmoid(logits), T.LOG_FLOOR))
        log_q = T.log(T.clip(T.sigmoid(T.neg(logits)), T.LOG_FLOOR))
        per_dim = T.add(T.mul(x, log_p), T.mul(T.sub(1.0, x), log_q))
    return T.sum_(per_dim, axis=1)


def ar_sample(p: AutoregressiveNet, n: int, seed: int = 0, rng: np.random.Generator | None = None) -> np.ndarray:
    """Ancestral sampling, one dimension at a time in raster order.

    Draws from ``rng`` when given, else from the seeded ``ar-sample`` stream.
    """
    if rng is None:
        rng = rng_stream(seed, "ar-sample")
    d = p.data_dim
    x = np.zeros((n, d))
    m = p.n_components
    for i in range(d):
        if p.head == "mixture":
            means, log_w = p.mixture_params(Tensor(x))
            cols = np.arange(m) * d + i
            w = np.exp(log_w.data[:, cols])
            u = rng.random((n, 1))
            pick = np.minimum((u > np.cumsum(w, axis=1)).sum(axis=1), m - 1)
            x[:, i] = means.data[np.arange(n), cols[pick]] + p.sigma * rng.standard_normal(n)
            continue
        out = p(Tensor(x)).data[:, i]
        if p.head == "gaussian":
            x[:, i] = out + p.sigma * rng.standard_normal(n)
        else:
            x[:, i] = (rng.random(n) < out).astype(np.float64)
    return x


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: Tensor, labels: np.ndarray, reduction: str = "mean") -> Tensor:
    """Softmax cross entropy built from tape primitives."""
    n, c = logits.shape
    shift = Tensor(logits.data.max(axis=1, keepdims=True) @ np.ones((1, c)))
    z = T.sub(logits, shift)
    lse = T.log(T.sum_(T.exp(z), axis=1))
    lse_tiled = T.matmul(T.reshape(lse, (n, 1)), Tensor(np.ones((1, c))))
    log_probs = T.sub(z, lse_tiled)
    onehot = np.zeros((n, c))
    onehot[np.arange(n), labels] = 1.0
    total = T.neg(T.sum_(T.mul(log_probs, Tensor(onehot))))
    return T.mul(total, 1.0 / n) if reduction == "mean" else total


def classifier_forward(c: ClassifierNet, x) -> np.ndarray:
    return softmax(c(T.constant(x)).data)


def classifier_train(
    x: np.ndarray,
    y: np.ndarray,
    n_classes: int,
    epochs: int = 20,
    seed: int = 0,
    hidden=(64, 64, 64),
    batch_size: int = 64,
    learning_rate: float = 1e-3,
) -> ClassifierNet:
    net = ClassifierNet(x.shape[1], n_classes, hidden, seed=seed)
    opt = Adam(net.parameters(), lr=learning_rate, beta1=0.9)
    rng = rng_stream(seed, "classifier-batches")
    n = len(x)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            net.zero_grad()
            loss = cross_entropy(net(Tensor(x[idx])), y[idx])
            T.backward(loss)
            opt.step()
    return net


class ModeClassifier(ClassifierMixin, BaseEstimator):
    """Supervised mode labeller; stands in for a pretrained digit classifier."""

    def __init__(self, n_classes=None, hidden=(64, 64, 64), epochs=20, batch_size=64, learning_rate=1e-3, random_state=0):
        self.n_classes = n_classes
        self.hidden = hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        y = y.astype(np.int64)
        n_classes = self.n_classes or int(y.max()) + 1
        if y.min() < 0 or y.max() >= n_classes:
            raise ContractError("labels must lie in [0, n_classes)")
        self.classes_ = np.arange(n_classes)
        self.net_ = classifier_train(
            X, y, n_classes, self.epochs, self.random_state, self.hidden, self.batch_size, self.learning_rate
        )
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "net_")
        X = check_array(X, dtype=np.float64)
        return classifier_forward(self.net_, X)

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)

    def transform(self, X):
        """Penultimate-layer features."""
        check_is_fitted(self, "net_")
        X = check_array(X, dtype=np.float64)
        _, feats = self.net_.forward(Tensor(X), return_hidden=True)
        return feats.data
