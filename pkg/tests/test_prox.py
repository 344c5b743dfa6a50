import numpy as np
import pytest

from l1l1rnn.errors import DimensionError, ParameterError
from l1l1rnn.prox import (
    ProxParams,
    boundary_margin,
    l1l1_prox,
    l1l1_prox_grad,
    l1l1_prox_vec,
    prox_oracle,
    soft_threshold,
)


def test_soft_threshold_values():
    assert soft_threshold(1.5, 0.5) == 1.0
    assert soft_threshold(-1.5, 0.5) == -1.0
    assert soft_threshold(0.3, 0.5) == 0.0
    assert soft_threshold(0.0, 0.7) == 0.0
    out = soft_threshold(np.array([2.0, -0.1, 0.6]), 0.5)
    assert np.allclose(out, [1.5, 0.0, 0.1])


def test_soft_threshold_rejects_negative_gamma():
    with pytest.raises(ParameterError):
        soft_threshold(1.0, -0.1)


def test_prox_worked_examples():
    p = ProxParams(0.5, 0.3)
    assert l1l1_prox(2.0, 1.0, p) == pytest.approx(1.2, abs=1e-15)
    # clamp case: exactly v, not approximately
    assert l1l1_prox(1.5, 1.0, p) == 1.0
    assert l1l1_prox(-2.0, -1.0, p) == pytest.approx(-1.2, abs=1e-15)
    # gamma1 = 0 keeps only the reference pull
    assert l1l1_prox(0.2, 1.0, ProxParams(0.0, 0.3)) == pytest.approx(0.5, abs=1e-15)
    # both thresholds zero: identity
    assert l1l1_prox(0.4, 0.0, ProxParams(0.0, 0.0)) == 0.4
    # dead zone: exactly 0
    assert l1l1_prox(0.1, 1.0, p) == 0.0


def test_oracle_worked_examples():
    p = ProxParams(0.5, 0.3)
    assert prox_oracle(2.0, 1.0, p) == pytest.approx(1.2, abs=1e-15)
    assert prox_oracle(1.5, 1.0, p) == 1.0
    assert prox_oracle(-2.0, -1.0, p) == pytest.approx(-1.2, abs=1e-15)


def test_closed_form_matches_oracle_everywhere():
    rng = np.random.default_rng(7)
    n = 20000
    u = rng.uniform(-5.0, 5.0, n)
    v = rng.uniform(-5.0, 5.0, n)
    g1 = rng.uniform(0.0, 3.0, n)
    g2 = rng.uniform(0.0, 3.0, n)
    worst = 0.0
    for i in range(n):
        p = ProxParams(g1[i], g2[i])
        worst = max(worst, abs(l1l1_prox(u[i], v[i], p) - prox_oracle(u[i], v[i], p)))
    assert worst <= 1e-12


def test_reduction_to_soft_threshold_when_gamma2_zero():
    rng = np.random.default_rng(11)
    for _ in range(2000):
        u, v = rng.uniform(-5, 5, 2)
        g1 = rng.uniform(0, 3)
        p = ProxParams(g1, 0.0)
        assert abs(l1l1_prox(u, v, p) - soft_threshold(u, g1)) <= 1e-12


def test_reduction_to_shifted_soft_threshold_when_gamma1_zero():
    rng = np.random.default_rng(13)
    for _ in range(2000):
        u, v = rng.uniform(-5, 5, 2)
        g2 = rng.uniform(0, 3)
        p = ProxParams(0.0, g2)
        assert abs(l1l1_prox(u, v, p) - (v + soft_threshold(u - v, g2))) <= 1e-12


def test_odd_symmetry():
    rng = np.random.default_rng(17)
    u = rng.uniform(-5, 5, 5000)
    v = rng.uniform(-5, 5, 5000)
    p = ProxParams(0.7, 0.4)
    a = l1l1_prox_vec(u, v, p)
    b = l1l1_prox_vec(-u, -v, p)
    assert np.max(np.abs(a + b)) <= 1e-12


def test_nonexpansive_in_u():
    rng = np.random.default_rng(19)
    u1 = rng.uniform(-5, 5, 5000)
    u2 = rng.uniform(-5, 5, 5000)
    v = rng.uniform(-5, 5, 5000)
    p = ProxParams(0.9, 0.2)
    d = np.abs(l1l1_prox_vec(u1, v, p) - l1l1_prox_vec(u2, v, p))
    assert np.all(d <= np.abs(u1 - u2) + 1e-12)


def test_flat_cases_are_exact():
    rng = np.random.default_rng(23)
    u = rng.uniform(-5, 5, 20000)
    v = rng.uniform(-5, 5, 20000)
    p = ProxParams(1.2, 0.8)
    out = l1l1_prox_vec(u, v, p)
    clamped = out == v
    zeroed = out == 0.0
    # both flat cases must actually occur at these thresholds
    assert clamped.sum() > 100
    assert zeroed.sum() > 100


def test_gradient_worked_examples():
    p = ProxParams(0.5, 0.3)
    g = l1l1_prox_grad(2.0, 1.0, p)
    assert (g.d_u, g.d_v, g.d_gamma1, g.d_gamma2) == (1.0, 0.0, -1.0, -1.0)
    g = l1l1_prox_grad(1.5, 1.0, p)
    assert (g.d_u, g.d_v, g.d_gamma1, g.d_gamma2) == (0.0, 1.0, 0.0, 0.0)
    g = l1l1_prox_grad(0.0, 1.0, p)
    assert (g.d_u, g.d_v, g.d_gamma1, g.d_gamma2) == (0.0, 0.0, 0.0, 0.0)


def test_gradient_boundary_convention():
    # at u exactly v + g1 + g2 the upper case owns the point
    p = ProxParams(0.5, 0.25)
    g = l1l1_prox_grad(1.75, 1.0, p)
    assert (g.d_u, g.d_v) == (1.0, 0.0)
    g = l1l1_prox_grad(np.nextafter(1.75, 0.0), 1.0, p)
    assert (g.d_u, g.d_v) == (0.0, 1.0)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(29)
    step = 1e-6
    checked = 0
    while checked < 500:
        u = rng.uniform(-4, 4)
        v = rng.uniform(-4, 4)
        g1 = rng.uniform(0.01, 2.0)
        g2 = rng.uniform(0.01, 2.0)
        if float(boundary_margin(u, v, g1, g2)) < 1e-3:
            continue
        grad = l1l1_prox_grad(u, v, ProxParams(g1, g2))
        fd = [
            (l1l1_prox(u + step, v, ProxParams(g1, g2)) - l1l1_prox(u - step, v, ProxParams(g1, g2))) / (2 * step),
            (l1l1_prox(u, v + step, ProxParams(g1, g2)) - l1l1_prox(u, v - step, ProxParams(g1, g2))) / (2 * step),
            (l1l1_prox(u, v, ProxParams(g1 + step, g2)) - l1l1_prox(u, v, ProxParams(g1 - step, g2))) / (2 * step),
            (l1l1_prox(u, v, ProxParams(g1, g2 + step)) - l1l1_prox(u, v, ProxParams(g1, g2 - step))) / (2 * step),
        ]
        analytic = [grad.d_u, grad.d_v, grad.d_gamma1, grad.d_gamma2]
        assert np.allclose(analytic, fd, atol=1e-6)
        checked += 1


def test_vec_validation():
    p = ProxParams(0.5, 0.3)
    with pytest.raises(DimensionError):
        l1l1_prox_vec(np.zeros(3), np.zeros(4), p)
    with pytest.raises(ParameterError):
        l1l1_prox_vec(np.array([np.nan]), np.array([0.0]), p)
    with pytest.raises(ParameterError):
        l1l1_prox(np.inf, 0.0, p)


def test_params_validation():
    with pytest.raises(ParameterError):
        ProxParams(-0.1, 0.0)
    with pytest.raises(ParameterError):
        ProxParams(0.0, np.nan)
