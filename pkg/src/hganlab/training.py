"""Hybrid GAN training and its two ablation baselines.

Three variants share one loop:

``hgan``
    The discriminator sees two kinds of real input, the data batch ``x`` and
    the autoregressive model's teacher-forced output ``x_xi = p_xi(x)``, and
    the generator must fool it on both heads. The autoregressive model is fit
    to the data on every step.
``gan``
    Plain non-saturating GAN on ``(x, G(z))``.
``autogan``
    Only the ``(x_xi, G(z))`` head; the generator learns to mimic the
    autoregressive model.

Per step the order is: discriminator update, generator update on a fresh
forward pass, autoregressive update.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import tensor as T
from .data import DatasetConfig, rng_stream
from .models import AutoregressiveNet, DiscriminatorNet, GeneratorNet, ar_log_likelihood, ar_sample
from .optim import Adam
from .tensor import ContractError, Tensor

__all__ = [
    "VARIANTS",
    "METRICS_HEADER",
    "TrainConfig",
    "StepMetrics",
    "Networks",
    "TrainingAborted",
    "discriminator_loss",
    "generator_loss",
    "ar_loss",
    "hgan_step",
    "gan_step",
    "autogan_step",
    "HybridGAN",
    "train",
    "metrics_to_csv",
    "read_metrics_csv",
]

VARIANTS = ("hgan", "gan", "autogan")
AR_FEEDS = ("sample", "teacher")
AR_LOSSES = ("l1", "nll")
GENERATOR_OUTPUTS = ("identity", "sigmoid")
METRICS_HEADER = ["step", "loss_d", "loss_g", "loss_ar", "sr1", "sr2", "sf1", "sf2"]
NAN = float("nan")


class TrainingAborted(RuntimeError):
    """A loss went non-finite; ``snapshot`` holds the offending step's values."""

    def __init__(self, snapshot: dict):
        self.snapshot = snapshot
        super().__init__(f"non-finite loss at step {snapshot.get('step')}: {snapshot}")


@dataclass
class StepMetrics:
    step: int
    loss_d: float
    loss_g: float
    loss_ar: float
    sr1: float
    sr2: float
    sf1: float
    sf2: float

    def row(self) -> list:
        return [self.step] + [repr(float(getattr(self, k))) for k in METRICS_HEADER[1:]]


# ---------------------------------------------------------------------------
# losses


def _log(s: Tensor) -> Tensor:
    return T.log(T.clip(s, T.LOG_FLOOR))


def _log1m(s: Tensor) -> Tensor:
    return T.log(T.clip(T.sub(1.0, s), T.LOG_FLOOR))


def discriminator_loss(s_r1, s_r2, s_f1, s_f2) -> Tensor:
    """-mean[log s_r1 + log s_r2 + log(1 - s_f1) + log(1 - s_f2)].

    Pass ``None`` for an absent head: the plain GAN uses ``(None, s_r2, None,
    s_f2)`` and AutoGAN ``(s_r1, None, s_f1, None)``.
    """
    terms = [_log(s) for s in (s_r1, s_r2) if s is not None]
    terms += [_log1m(s) for s in (s_f1, s_f2) if s is not None]
    if not terms:
        raise ContractError("discriminator_loss needs at least one score")
    total = terms[0]
    for t in terms[1:]:
        total = T.add(total, t)
    return T.neg(T.mean(total))


def generator_loss(s_f1, s_f2) -> Tensor:
    """Non-saturating form -mean[log s_f1 + log s_f2]; ``None`` drops a head."""
    terms = [_log(s) for s in (s_f1, s_f2) if s is not None]
    if not terms:
        raise ContractError("generator_loss needs at least one score")
    total = terms[0] if len(terms) == 1 else T.add(terms[0], terms[1])
    return T.neg(T.mean(total))


def ar_loss(x, x_xi=None, mode: str = "l1", model: AutoregressiveNet | None = None) -> Tensor:
    """Mean |x - p_xi(x)| (``l1``) or mean negative log-likelihood (``nll``)."""
    x = T.constant(x)
    if mode == "l1":
        if x_xi is None or x_xi.shape != x.shape:
            raise ContractError("l1 ar_loss needs a prediction with the data's shape")
        return T.mean(T.abs_(T.sub(x, x_xi)))
    if mode == "nll":
        if model is None:
            raise ContractError("nll ar_loss needs the model")
        return T.neg(T.mean(ar_log_likelihood(model, x)))
    raise ContractError(f"unknown ar_loss mode {mode!r}")


# ---------------------------------------------------------------------------
# configuration and network bundle


@dataclass
class TrainConfig:
    variant: str = "hgan"
    steps: int = 20000
    batch_size: int = 64
    learning_rate: float = 0.0002
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    n_train: int = 50000
    latent_dim: int = 16
    generator_hidden: tuple = (128, 128, 128)
    discriminator_hidden: tuple = (128, 128, 128)
    ar_hidden: tuple = (128, 128)
    generator_output: str = "identity"
    ar_head: str = "auto"
    ar_sigma: float = 0.05
    ar_components: int = 8
    ar_loss: str = "nll"
    ar_feed: str = "sample"
    shared_z: bool = False
    init_std: float = 0.1
    metrics_every: int = 100

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ContractError(f"variant must be one of {VARIANTS}")
        if self.steps < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ContractError("need steps >= 1, batch_size >= 1, learning_rate > 0")
        if self.ar_loss not in AR_LOSSES:
            raise ContractError(f"ar_loss must be one of {AR_LOSSES}")
        if self.ar_feed not in AR_FEEDS:
            raise ContractError(f"ar_feed must be one of {AR_FEEDS}")
        if self.generator_output not in GENERATOR_OUTPUTS:
            raise ContractError(f"generator_output must be one of {GENERATOR_OUTPUTS}")

    def estimator(self) -> "HybridGAN":
        return HybridGAN(
            variant=self.variant,
            n_steps=self.steps,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            beta1=self.adam_beta1,
            beta2=self.adam_beta2,
            eps=self.adam_eps,
            latent_dim=self.latent_dim,
            generator_hidden=tuple(self.generator_hidden),
            discriminator_hidden=tuple(self.discriminator_hidden),
            ar_hidden=tuple(self.ar_hidden),
            ar_head=self.ar_head,
            ar_sigma=self.ar_sigma,
            ar_components=self.ar_components,
            ar_loss=self.ar_loss,
            ar_feed=self.ar_feed,
            output_activation=self.generator_output,
            shared_z=self.shared_z,
            init_std=self.init_std,
            metrics_every=self.metrics_every,
            random_state=self.seed,
        )


@dataclass
class Networks:
    generator: GeneratorNet
    discriminator: DiscriminatorNet
    autoregressive: AutoregressiveNet
    opt_g: Adam
    opt_d: Adam
    opt_ar: Adam

    def named_modules(self):
        return {"G": self.generator, "D": self.discriminator, "AR": self.autoregressive}

    def named_optimizers(self):
        return {"G": self.opt_g, "D": self.opt_d, "AR": self.opt_ar}


def _mean(s) -> float:
    return NAN if s is None else float(s.data.mean())


def _check_finite(step, losses, scores):
    if all(math.isfinite(v) for v in losses.values() if v is not None):
        return
    snapshot = {"step": step, **losses, **{k: _mean(v) for k, v in scores.items()}}
    raise TrainingAborted(snapshot)


def _score_heads(D, inputs: list) -> list:
    """Score several same-width batches with one discriminator pass."""
    if len(inputs) == 1:
        return [D(inputs[0])]
    scores = D(T.concat_rows(inputs))
    out, lo = [], 0
    for x in inputs:
        hi = lo + x.shape[0]
        out.append(T.rows(scores, lo, hi))
        lo = hi
    return out


def _run_step(nets: Networks, x: np.ndarray, cfg, rng: np.random.Generator, step: int, use_real: bool, use_ar: bool):
    G, D, AR = nets.generator, nets.discriminator, nets.autoregressive
    b = x.shape[0]
    xt = Tensor(x)
    # (1) teacher-forced prediction, kept on the tape for the l1 AR update;
    # with ancestral feeding the discriminator sees fresh AR samples instead
    x_xi = AR(xt) if use_ar and (cfg.ar_loss == "l1" or cfg.ar_feed == "teacher") else None
    if use_ar and cfg.ar_feed == "sample":
        x_feed = Tensor(ar_sample(AR, b, rng=rng))
    else:
        x_feed = x_xi.detach() if use_ar else None
    # (2) latents; a second draw only when both fake heads exist and z is not shared
    two_heads = use_ar and use_real
    z = rng.standard_normal((b, G.latent_dim))
    if two_heads and not cfg.shared_z:
        z = np.concatenate([z, rng.standard_normal((b, G.latent_dim))])
    zt = Tensor(z)

    # (3)-(5) discriminator update on detached inputs
    fake = G(zt).detach()
    real_inputs = ([x_feed] if use_ar else []) + ([xt] if use_real else [])
    if fake.shape[0] == b:
        fakes = [fake]
    else:
        fakes = [T.rows(fake, 0, b), T.rows(fake, b, 2 * b)]
    heads = _score_heads(D, real_inputs + fakes)
    real_scores, fake_scores = heads[: len(real_inputs)], heads[len(real_inputs) :]
    s_r1 = real_scores[0] if use_ar else None
    s_r2 = real_scores[-1] if use_real else None
    if two_heads:
        s_f1, s_f2 = fake_scores[0], fake_scores[-1]
    elif use_ar:
        s_f1, s_f2 = fake_scores[0], None
    else:
        s_f1, s_f2 = None, fake_scores[0]
    loss_d = discriminator_loss(s_r1, s_r2, s_f1, s_f2)
    D.zero_grad()
    T.backward(loss_d)
    nets.opt_d.step()
    scores = {"sr1": s_r1, "sr2": s_r2, "sf1": s_f1, "sf2": s_f2}

    # (6) generator update on a fresh forward through the updated discriminator
    with T.frozen(D.parameters().values()):
        g_scores = D(G(zt))
    if two_heads:
        if g_scores.shape[0] == b:
            g1 = g2 = g_scores
        else:
            g1, g2 = T.rows(g_scores, 0, b), T.rows(g_scores, b, 2 * b)
        loss_g = generator_loss(g1, g2)
    else:
        loss_g = generator_loss(g_scores, None)
    G.zero_grad()
    T.backward(loss_g)
    nets.opt_g.step()

    # (7) autoregressive update
    loss_ar_val = None
    if use_ar:
        loss_ar_t = ar_loss(xt, x_xi, cfg.ar_loss, AR)
        AR.zero_grad()
        T.backward(loss_ar_t)
        nets.opt_ar.step()
        loss_ar_val = loss_ar_t.item()

    losses = {"loss_d": loss_d.item(), "loss_g": loss_g.item(), "loss_ar": loss_ar_val}
    _check_finite(step, losses, scores)
    return StepMetrics(
        step,
        losses["loss_d"],
        losses["loss_g"],
        NAN if loss_ar_val is None else loss_ar_val,
        _mean(s_r1),
        _mean(s_r2),
        _mean(s_f1),
        _mean(s_f2),
    )


def hgan_step(nets: Networks, x, cfg, rng, step: int = 0) -> StepMetrics:
    """One HGAN step: both real heads, both fake heads, then the AR update."""
    return _run_step(nets, x, cfg, rng, step, use_real=True, use_ar=True)


def gan_step(nets: Networks, x, cfg, rng, step: int = 0) -> StepMetrics:
    """Plain GAN step; AR-related metrics are reported as NaN."""
    return _run_step(nets, x, cfg, rng, step, use_real=True, use_ar=False)


def autogan_step(nets: Networks, x, cfg, rng, step: int = 0) -> StepMetrics:
    """AutoGAN step: x_xi is the only real input; the AR model still trains."""
    return _run_step(nets, x, cfg, rng, step, use_real=False, use_ar=True)


_STEPS = {"hgan": hgan_step, "gan": gan_step, "autogan": autogan_step}


# ---------------------------------------------------------------------------
# estimator


class HybridGAN(BaseEstimator):
    """Generator trained adversarially against data and an autoregressive teacher.

    Parameters
    ----------
    variant : {'hgan', 'gan', 'autogan'}
    n_steps : int
        Number of minibatch steps ``S``.
    output_activation : {'identity', 'sigmoid'}
        Generator output layer. Identity is the default for binary data too,
        since a saturated sigmoid stops passing gradient to the generator.
    ar_head : str
        ``'auto'`` picks bernoulli for binary data and mixture otherwise.
    ar_feed : {'sample', 'teacher'}
        What the discriminator sees as the teacher's output: ancestral samples
        from the AR model, or its teacher-forced prediction ``AR(x)``.
    shared_z : bool
        Reuse one latent batch for both fake heads. By default each head gets
        its own draw.
    metrics_every : int
        Keep a :class:`StepMetrics` row every this many steps (plus the last).

    Attributes
    ----------
    nets_ : Networks
    metrics_ : list of StepMetrics
    steps_done_ : int
    """

    def __init__(
        self,
        variant="hgan",
        n_steps=20000,
        batch_size=64,
        learning_rate=0.0002,
        beta1=0.5,
        beta2=0.999,
        eps=1e-8,
        latent_dim=16,
        generator_hidden=(128, 128, 128),
        discriminator_hidden=(128, 128, 128),
        ar_hidden=(128, 128),
        ar_head="auto",
        ar_sigma=0.05,
        ar_components=8,
        ar_loss="nll",
        ar_feed="sample",
        output_activation="identity",
        shared_z=False,
        init_std=0.1,
        metrics_every=100,
        random_state=0,
    ):
        self.variant = variant
        self.n_steps = n_steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.latent_dim = latent_dim
        self.generator_hidden = generator_hidden
        self.discriminator_hidden = discriminator_hidden
        self.ar_hidden = ar_hidden
        self.ar_head = ar_head
        self.ar_sigma = ar_sigma
        self.ar_components = ar_components
        self.ar_loss = ar_loss
        self.ar_feed = ar_feed
        self.output_activation = output_activation
        self.shared_z = shared_z
        self.init_std = init_std
        self.metrics_every = metrics_every
        self.random_state = random_state

    def _build(self, d: int, binary: bool) -> Networks:
        seed = self.random_state
        out = self.output_activation
        head = self.ar_head
        if head == "auto":
            head = "bernoulli" if binary else "mixture"
        g = GeneratorNet(self.latent_dim, d, self.generator_hidden, out, seed, self.init_std)
        dn = DiscriminatorNet(d, self.discriminator_hidden, seed, self.init_std)
        ar = AutoregressiveNet(d, self.ar_hidden, head, self.ar_sigma, seed, self.init_std, self.ar_components)

        def adam(net):
            return Adam(net.parameters(), self.learning_rate, self.beta1, self.beta2, self.eps)

        return Networks(g, dn, ar, adam(g), adam(dn), adam(ar))

    def initialize(self, n_features: int, binary: bool = False) -> "HybridGAN":
        """Build fresh networks and RNG streams without training."""
        if self.variant not in VARIANTS:
            raise ContractError(f"variant must be one of {VARIANTS}")
        if self.ar_feed not in AR_FEEDS or self.ar_loss not in AR_LOSSES:
            raise ContractError(f"ar_feed must be in {AR_FEEDS} and ar_loss in {AR_LOSSES}")
        if self.output_activation not in GENERATOR_OUTPUTS:
            raise ContractError(f"output_activation must be one of {GENERATOR_OUTPUTS}")
        self.nets_ = self._build(n_features, binary)
        self.n_features_in_ = n_features
        self.binary_ = binary
        self.batch_rng_ = rng_stream(self.random_state, "batches")
        self.latent_rng_ = rng_stream(self.random_state, "latent")
        self.metrics_ = []
        self.steps_done_ = 0
        return self

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        binary = bool(np.all((X == 0) | (X == 1)))
        self.initialize(X.shape[1], binary)
        return self.partial_fit(X, n_steps=self.n_steps)

    def partial_fit(self, X, y=None, n_steps: int | None = None):
        """Continue training for ``n_steps`` (default ``self.n_steps``) more steps."""
        check_is_fitted(self, "nets_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ContractError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        n_steps = self.n_steps if n_steps is None else n_steps
        step_fn = _STEPS[self.variant]
        cfg = _StepConfig(self.shared_z, self.ar_loss, self.ar_feed)
        last = self.steps_done_ + n_steps - 1
        for _ in range(n_steps):
            idx = self.batch_rng_.integers(0, len(X), size=self.batch_size)
            step = self.steps_done_
            m = step_fn(self.nets_, X[idx], cfg, self.latent_rng_, step)
            if step % self.metrics_every == 0 or step == last:
                self.metrics_.append(m)
            self.steps_done_ += 1
        return self

    def sample(self, n: int, random_state: int = 0) -> np.ndarray:
        """The first ``n`` generator outputs of the seeded latent stream, unfiltered."""
        check_is_fitted(self, "nets_")
        g = self.nets_.generator
        if n == 0:
            return np.zeros((0, self.n_features_in_))
        z = rng_stream(random_state, "sample-latent").standard_normal((n, g.latent_dim))
        return g(Tensor(z)).data

    def score_samples(self, X) -> np.ndarray:
        """Discriminator score D(x) for each row."""
        check_is_fitted(self, "nets_")
        X = check_array(X, dtype=np.float64)
        return self.nets_.discriminator(Tensor(X)).data[:, 0]


@dataclass
class _StepConfig:
    shared_z: bool = False
    ar_loss: str = "nll"
    ar_feed: str = "sample"


def train(config: TrainConfig) -> HybridGAN:
    """Sample the configured training set and run ``config.steps`` steps."""
    data = config.dataset.sample(config.n_train, config.seed)
    est = config.estimator()
    est.initialize(data.samples.shape[1], config.dataset.is_binary)
    return est.partial_fit(data.samples)


def metrics_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for r in rows:
        w.writerow(r.row())
    return buf.getvalue()


def read_metrics_csv(text: str) -> list:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if header != METRICS_HEADER:
        raise ValueError(f"unexpected metrics header {header}")
    out = []
    for row in reader:
        out.append(StepMetrics(int(row[0]), *(float(v) for v in row[1:])))
    return out


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
