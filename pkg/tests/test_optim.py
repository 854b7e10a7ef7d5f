import numpy as np
import pytest

from hganlab.optim import Adam, AdamState, adam_update
from hganlab.tensor import ContractError, Tensor


def test_zero_gradient_leaves_everything_unchanged():
    p = {"w": np.array([1.0, -2.0])}
    state = AdamState()
    adam_update(p, {"w": np.array([0.5, 0.5])}, state)
    w, v = p["w"].copy(), state.v["w"].copy()
    adam_update(p, {"w": np.zeros(2)}, state)
    np.testing.assert_array_equal(p["w"], w)
    np.testing.assert_array_equal(state.v["w"], v)


def test_first_step_is_lr_times_sign():
    lr, eps = 2e-4, 1e-8
    g = np.array([3.0, -0.02, 1e-3])
    p = {"w": np.zeros(3)}
    adam_update(p, {"w": g}, AdamState(), lr=lr, beta1=0.5, beta2=0.999, eps=eps)
    # bias-corrected m_hat = g and v_hat = g^2 at t = 1
    np.testing.assert_allclose(p["w"], -lr * g / (np.abs(g) + eps), rtol=1e-12)
    np.testing.assert_allclose(p["w"], -lr * np.sign(g), rtol=1e-4)


def test_matches_textbook_recurrence():
    rng = np.random.default_rng(0)
    lr, b1, b2, eps = 1e-2, 0.9, 0.99, 1e-8
    w = rng.normal(size=5)
    p = {"w": w.copy()}
    state = AdamState()
    m = v = np.zeros(5)
    for t in range(1, 30):
        g = rng.normal(size=5)
        adam_update(p, {"w": g}, state, lr, b1, b2, eps)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w = w - lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
    np.testing.assert_allclose(p["w"], w, rtol=1e-12, atol=1e-14)
    assert state.t == 29


def test_identical_runs_are_bitwise_identical():
    def run():
        rng = np.random.default_rng(1)
        params = {"a": Tensor(np.ones((2, 2)), requires_grad=True)}
        opt = Adam(params, lr=0.01)
        for _ in range(10):
            params["a"].grad = rng.normal(size=(2, 2))
            opt.step()
        return params["a"].data.tobytes()

    assert run() == run()


def test_shape_mismatch_rejected():
    with pytest.raises(ContractError):
        adam_update({"w": np.zeros(2)}, {"w": np.zeros(3)}, AdamState())
