import hashlib
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hganlab import tensor as T
from hganlab.data import DatasetConfig
from hganlab.tensor import ContractError, Tensor, gradient_check
from hganlab.training import (
    METRICS_HEADER,
    HybridGAN,
    StepMetrics,
    TrainConfig,
    TrainingAborted,
    ar_loss,
    autogan_step,
    discriminator_loss,
    gan_step,
    generator_loss,
    hgan_step,
    metrics_to_csv,
    read_metrics_csv,
    train,
)

SMALL = dict(generator_hidden=(16,), discriminator_hidden=(16,), ar_hidden=(16,), latent_dim=4)


def scores(*values):
    return [Tensor(np.full((8, 1), v)) for v in values]


def small_model(variant="hgan", seed=0, **kw):
    est = HybridGAN(variant=variant, random_state=seed, **{**SMALL, **kw})
    return est.initialize(2, binary=False)


def batch(seed=0, n=16):
    return DatasetConfig().sample(n, seed).samples


def digest(net):
    h = hashlib.sha256()
    for p in net.parameters().values():
        h.update(p.data.tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# losses


def test_discriminator_loss_at_half():
    assert discriminator_loss(*scores(0.5, 0.5, 0.5, 0.5)).item() == pytest.approx(4 * math.log(2), abs=1e-12)
    assert discriminator_loss(None, *scores(0.5), None, *scores(0.5)).item() == pytest.approx(2 * math.log(2), abs=1e-12)
    assert discriminator_loss(*scores(0.5), None, *scores(0.5), None).item() == pytest.approx(2 * math.log(2), abs=1e-12)


def test_discriminator_loss_perfect_discriminator():
    loss = discriminator_loss(*scores(1 - 1e-12, 1 - 1e-12, 1e-12, 1e-12)).item()
    assert 0 <= loss < 1e-10


def test_discriminator_loss_head_swap_symmetry():
    rng = np.random.default_rng(0)
    a, b, c, d = (Tensor(rng.uniform(0.05, 0.95, (8, 1))) for _ in range(4))
    assert discriminator_loss(a, b, c, d).item() == pytest.approx(discriminator_loss(b, a, d, c).item(), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 0.99), min_size=4, max_size=4))
def test_discriminator_loss_decomposes(vals):
    s_r1, s_r2, s_f1, s_f2 = scores(*vals)
    full = discriminator_loss(s_r1, s_r2, s_f1, s_f2).item()
    parts = discriminator_loss(None, s_r2, None, s_f2).item() + discriminator_loss(s_r1, None, s_f1, None).item()
    assert abs(full - parts) < 1e-12


def test_discriminator_loss_needs_a_head():
    with pytest.raises(ContractError):
        discriminator_loss(None, None, None, None)


def test_generator_loss_values():
    assert generator_loss(*scores(0.5, 0.5)).item() == pytest.approx(2 * math.log(2), abs=1e-12)
    assert generator_loss(*scores(1 - 1e-12, 1 - 1e-12)).item() < 1e-10


def test_generator_loss_gradient_wrt_generator():
    est = small_model()
    g, d = est.nets_.generator, est.nets_.discriminator
    z = np.random.default_rng(1).normal(size=(6, 4))
    for name, p in g.parameters().items():
        err = gradient_check(lambda _: generator_loss(d(g(Tensor(z))), d(g(Tensor(z)))), p)
        assert err < 1e-4, name


def test_ar_loss_values():
    x = np.ones((3, 4))
    assert ar_loss(x, Tensor(x.copy())).item() == 0.0
    assert ar_loss(x, Tensor(np.full((3, 4), 0.75))).item() == pytest.approx(0.25)
    with pytest.raises(ContractError):
        ar_loss(x, Tensor(np.ones((3, 3))))
    with pytest.raises(ContractError):
        ar_loss(x, mode="nll")


def test_generator_step_decreases_its_loss_on_frozen_discriminator():
    for seed in range(5):
        est = small_model(seed=seed)
        g, d = est.nets_.generator, est.nets_.discriminator
        z = Tensor(np.random.default_rng(seed).normal(size=(32, 4)))

        def loss():
            with T.frozen(d.parameters().values()):
                return generator_loss(d(g(z)), None)

        before = loss()
        g.zero_grad()
        T.backward(before)
        for p in g.parameters().values():
            p.data -= 1e-4 * p.grad
        assert loss().item() < before.item()


# ---------------------------------------------------------------------------
# steps


@pytest.mark.parametrize("step_fn,variant", [(hgan_step, "hgan"), (gan_step, "gan"), (autogan_step, "autogan")])
def test_step_updates_exactly_the_right_parameter_sets(step_fn, variant):
    est = small_model(variant)
    nets = est.nets_
    before = {k: digest(m) for k, m in nets.named_modules().items()}
    from hganlab.training import _StepConfig

    m = step_fn(nets, batch(), _StepConfig(), np.random.default_rng(0), 0)
    after = {k: digest(m) for k, m in nets.named_modules().items()}
    assert after["G"] != before["G"]
    assert after["D"] != before["D"]
    assert (after["AR"] != before["AR"]) == (variant != "gan")
    assert isinstance(m, StepMetrics)


def test_discriminator_update_alone_leaves_generator_and_ar_untouched():
    est = small_model()
    nets = est.nets_
    g0, ar0 = digest(nets.generator), digest(nets.autoregressive)
    d = nets.discriminator
    loss = discriminator_loss(*(d(Tensor(batch(i))) for i in range(4)))
    d.zero_grad()
    T.backward(loss)
    nets.opt_d.step()
    assert digest(nets.generator) == g0 and digest(nets.autoregressive) == ar0


def test_initial_scores_near_half():
    est = small_model(n_steps=1, metrics_every=1).partial_fit(batch(n=200))
    m = est.metrics_[0]
    for v in (m.sr1, m.sr2, m.sf1, m.sf2):
        assert abs(v - 0.5) < 0.1


def test_gan_metrics_use_nan_sentinels():
    est = small_model("gan", n_steps=3, metrics_every=1).partial_fit(batch(n=200))
    for m in est.metrics_:
        assert math.isnan(m.sr1) and math.isnan(m.sf1) and math.isnan(m.loss_ar)
        assert 0 < m.sr2 < 1 and 0 < m.sf2 < 1


def test_shared_z_scores_match_and_unshared_differ():
    shared = small_model(n_steps=1, metrics_every=1, shared_z=True).partial_fit(batch(n=200)).metrics_[0]
    split = small_model(n_steps=1, metrics_every=1, shared_z=False).partial_fit(batch(n=200)).metrics_[0]
    assert shared.sf1 == shared.sf2
    assert split.sf1 != split.sf2


def test_teacher_feed_runs_literal_pipeline():
    est = small_model(n_steps=5, metrics_every=1, ar_feed="teacher", ar_loss="l1", ar_head="gaussian")
    est.partial_fit(batch(n=200))
    assert len(est.metrics_) == 5
    assert all(0 <= m.loss_ar < 10 for m in est.metrics_)


def test_nan_aborts_with_snapshot():
    est = small_model(n_steps=2)
    est.nets_.generator.parameters()["layer0.weight"].data[0, 0] = np.nan
    with pytest.raises(TrainingAborted) as info:
        est.partial_fit(batch(n=100))
    assert info.value.snapshot["step"] == 0
    assert "loss_g" in info.value.snapshot


def test_invalid_configuration_is_rejected():
    with pytest.raises(ContractError):
        TrainConfig(variant="wgan")
    with pytest.raises(ContractError):
        TrainConfig(steps=0)
    with pytest.raises(ContractError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ContractError):
        TrainConfig(ar_feed="mean")
    with pytest.raises(ContractError):
        HybridGAN(variant="nope").initialize(2)


# ---------------------------------------------------------------------------
# training loop


def test_single_step_gives_one_row():
    est = train(TrainConfig(steps=1, n_train=500, **SMALL))
    assert len(est.metrics_) == 1 and est.steps_done_ == 1


def test_metrics_cadence_includes_last_step():
    est = train(TrainConfig(steps=25, metrics_every=10, n_train=500, **SMALL))
    assert [m.step for m in est.metrics_] == [0, 10, 20, 24]


@pytest.mark.parametrize("variant", ["hgan", "gan", "autogan"])
def test_training_is_bitwise_deterministic(variant):
    cfg = TrainConfig(variant=variant, steps=30, metrics_every=1, n_train=500, seed=4, **SMALL)
    a, b = train(cfg), train(cfg)
    assert metrics_to_csv(a.metrics_) == metrics_to_csv(b.metrics_)
    assert a.sample(50, 1).tobytes() == b.sample(50, 1).tobytes()


def test_partial_fit_continues_the_same_run():
    cfg = TrainConfig(steps=20, metrics_every=1, n_train=500, **SMALL)
    whole = train(cfg)
    data = cfg.dataset.sample(cfg.n_train, cfg.seed).samples
    est = cfg.estimator().initialize(2)
    est.partial_fit(data, n_steps=8).partial_fit(data, n_steps=12)
    assert metrics_to_csv(est.metrics_) == metrics_to_csv(whole.metrics_)


def test_fit_on_binary_patterns():
    data = DatasetConfig(kind="patterns", k=4, quadrants=1).sample(300, 0).samples
    est = HybridGAN(n_steps=3, **SMALL).fit(data)
    assert est.binary_
    assert est.nets_.generator.output == "identity"
    assert est.nets_.autoregressive.head == "bernoulli"
    squashed = HybridGAN(n_steps=3, output_activation="sigmoid", **SMALL).fit(data)
    out = squashed.sample(20)
    assert np.all((out > 0) & (out < 1))
    with pytest.raises(ContractError):
        HybridGAN(output_activation="tanh", **SMALL).fit(data)
    with pytest.raises(ContractError):
        TrainConfig(generator_output="tanh")


def test_score_samples_shape():
    est = small_model()
    s = est.score_samples(batch(n=9))
    assert s.shape == (9,) and np.all((s > 0) & (s < 1))


def test_metrics_csv_schema_round_trip():
    est = train(TrainConfig(variant="gan", steps=5, metrics_every=1, n_train=500, **SMALL))
    text = metrics_to_csv(est.metrics_)
    assert text.splitlines()[0] == ",".join(METRICS_HEADER)
    back = read_metrics_csv(text)
    assert metrics_to_csv(back) == text
    with pytest.raises(ValueError):
        read_metrics_csv("step,loss\n")


def test_ar_loss_falls_during_hgan_training():
    first, last = [], []
    for seed in range(5):
        est = train(TrainConfig(steps=2001, metrics_every=2000, n_train=5000, seed=seed))
        assert [m.step for m in est.metrics_] == [0, 2000]
        first.append(est.metrics_[0].loss_ar)
        last.append(est.metrics_[-1].loss_ar)
    assert np.median(last) < np.median(first)
