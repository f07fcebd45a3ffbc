import numpy as np
import pytest

from ncconv.gradcheck import (check_conv_layer, check_cross_entropy,
                              check_groupnorm, check_model, max_rel_err,
                              numeric_grad, run_gradcheck)


def test_numeric_grad_on_quadratic():
    x = np.array([1.0, -2.0, 0.5])
    a = np.array([3.0, 1.0, -4.0])

    def f():
        return float(a @ (x * x))

    g = numeric_grad(f, x)
    np.testing.assert_allclose(g, 2 * a * x, rtol=1e-8)


def test_max_rel_err_floor():
    assert max_rel_err(np.zeros(3), np.zeros(3)) == 0.0
    assert max_rel_err(np.array([1.0]), np.array([1.0 + 1e-7])) == pytest.approx(1e-7, rel=1e-2)


@pytest.mark.parametrize("kind", ["nc", "std"])
def test_conv_layers_match_fd(kind):
    for seed in range(8):
        case = check_conv_layer(kind, seed)
        assert case.passed, case


def test_groupnorm_matches_fd():
    for seed in range(8):
        case = check_groupnorm(seed)
        assert case.passed, case


def test_end_to_end_model_matches_fd():
    # 3-layer model (patch-standardized conv -> relu -> linear), all params
    for seed in range(6):
        case = check_model(seed, tol=1e-5)
        assert case.passed, case
        assert case.max_rel_err < 1e-5


def test_cross_entropy_matches_fd():
    case = check_cross_entropy(0)
    assert case.max_rel_err < 1e-7


def test_run_gradcheck_green_by_default():
    results = run_gradcheck(cases=3, seed=0)
    assert all(r.passed for r in results)
    families = {r.family for r in results}
    assert {"nc_conv", "std_conv", "groupnorm", "model", "activation",
            "cross_entropy"} <= families


def test_run_gradcheck_inject_bug_fails():
    results = run_gradcheck(cases=2, seed=0, inject_bug=True)
    assert any(not r.passed for r in results)
    # and the fault is where it was injected: the first nc case
    assert not results[0].passed
