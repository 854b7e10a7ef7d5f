import numpy as np

from hganlab import tensor as T
from hganlab.gradcheck import TOLERANCE, CheckResult, run_gradchecks
from hganlab.tensor import Tensor, gradient_check


def test_every_check_passes_and_covers_all_losses():
    results = run_gradchecks(n_states=3, seed=1)
    names = [r.name for r in results]
    for needed in ("discriminator_loss", "generator_loss", "ar_loss l1", "ar_loss nll", "projection residual", "matmul"):
        assert any(needed in n for n in names), needed
    bad = [(r.name, r.max_error) for r in results if not r.passed]
    assert not bad


def test_result_threshold_is_strict():
    assert CheckResult("x", TOLERANCE * 0.99).passed
    assert not CheckResult("x", TOLERANCE).passed
    assert not CheckResult("x", float("inf")).passed


def test_a_wrong_backward_is_caught():
    def bad_square(t):
        out = T.mul(t, t)
        out._backward = lambda g: [g * t.data, None]  # missing factor 2
        return T.sum_(out)

    x = Tensor(np.random.default_rng(0).normal(size=(3, 2)), requires_grad=True)
    assert gradient_check(lambda t: T.sum_(T.mul(t, t)), x) < 1e-8
    assert gradient_check(bad_square, x) > 0.1
