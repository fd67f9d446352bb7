"""Finite-difference utilities and analytic-gradient verification."""

import numpy as np
import pytest

from histodense.nn import gradcheck, ops
from helpers import run_layer_gradchecks, run_tiny_densenet_gradcheck

TOL = 1e-3


# ------------------------------------------------------- utility behaviour

def test_numeric_gradient_quadratic():
    # f(x) = sum(a * x^2): gradient 2 a x, exact for central differences.
    a = np.array([1.0, -2.0, 3.0])
    x = np.array([0.5, 1.5, -2.0])
    grad = gradcheck.numeric_gradient(lambda v: float((a * v * v).sum()), x, h=1e-3)
    np.testing.assert_allclose(grad, 2 * a * x, rtol=1e-9)


def test_numeric_gradient_at_single_coordinate():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    g = gradcheck.numeric_gradient_at(lambda v: float((v ** 3).sum()), x, (1, 0), h=1e-5)
    assert g == pytest.approx(3 * 9.0, rel=1e-8)


def test_max_rel_error_scales():
    a = np.array([1.0, 2.0])
    assert gradcheck.max_rel_error(a, a) == 0.0
    assert gradcheck.max_rel_error(a, a * 1.01) == pytest.approx(0.01, rel=1e-2)


def test_max_rel_error_floor_damps_tiny_coords():
    # A coordinate one million times smaller than the gradient scale
    # disagreeing with itself by 100% stays under control via the floor.
    a = np.array([1.0, 1e-6])
    n = np.array([1.0, 2e-6])
    assert gradcheck.max_rel_error(a, n) < 1e-3


def test_sample_coords_distinct():
    rng = np.random.default_rng(0)
    coords = gradcheck.sample_coords((3, 4, 5), 10, rng)
    assert len(coords) == 10
    assert len(set(coords)) == 10
    coords = gradcheck.sample_coords((2, 2), 100, rng)
    assert len(coords) == 4


# ------------------------------------------------------------ layer sweep

@pytest.mark.parametrize("seed", [0, 1, 2])
def test_layer_gradients(seed):
    errors = run_layer_gradchecks(seed)
    expected = {
        "conv2d.x", "conv2d.w", "batchnorm.x", "batchnorm.gamma",
        "batchnorm.beta", "relu", "maxpool", "avgpool", "global_avgpool",
        "linear.x", "linear.w", "linear.b", "softmax_xent",
    }
    assert set(errors) == expected
    for name, err in errors.items():
        assert err < TOL, f"{name}: {err:.3e}"


# ----------------------------------------------------------- end to end

@pytest.mark.parametrize("seed", [0, 1])
def test_tiny_network_end_to_end(seed):
    worst, checked, skipped = run_tiny_densenet_gradcheck(seed)
    assert worst < TOL
    assert checked >= 100
    assert skipped <= 0.2 * (checked + skipped)


def test_harness_catches_planted_bug():
    # The end-to-end check must fail loudly when a backward formula is
    # wrong; otherwise passing it means nothing.
    original = ops.relu_backward
    ops.relu_backward = lambda dy, mask: dy
    try:
        worst, _, _ = run_tiny_densenet_gradcheck(0)
    finally:
        ops.relu_backward = original
    assert worst > 100 * TOL
