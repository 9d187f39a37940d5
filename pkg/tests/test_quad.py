import math

import numpy as np
import pytest
from scipy import integrate as sci_integrate
from scipy import special

from conftest import build, random_thetas
from ippest.errors import NonConvergence, SingularFisher, SingularJacobian
from ippest.model import Basis
from ippest.multistep import compensator
from ippest.quad import (
    QuadConfig,
    fisher_info,
    g_matrix,
    integrate,
    integrate_model,
    moment_jacobian,
    moment_map,
)

T1, T2 = Basis("poly", 1), Basis("poly", 2)
FAMILY_NAMES = ["gamma", "gaussian", "sine", "linear"]


def test_cos_squared():
    assert integrate(lambda t: np.cos(2 * np.pi * t) ** 2, 0.0, 1.0) == pytest.approx(0.5, abs=1e-14)


def test_sine_fisher_integrand_closed_form():
    val = integrate(lambda t: np.cos(2 * np.pi * t) ** 2 / (np.sin(2 * np.pi * t) + 2), 0.0, 1.0)
    assert val == pytest.approx(2 - math.sqrt(3), abs=1e-12)


def test_gamma_mean(gamma):
    val = integrate_model(gamma, [2.0, 3.0], lambda t: t * gamma.intensity([2.0, 3.0], t))
    assert val == pytest.approx(1.5, rel=1e-10)


def test_vector_valued_integrand():
    val = integrate(lambda t: np.stack([t, t**2, np.exp(t)], axis=-1), 0.0, 2.0)
    np.testing.assert_allclose(val, [2.0, 8.0 / 3.0, math.e**2 - 1], rtol=1e-13)


def test_breakpoints_and_kink():
    val = integrate(lambda t: np.abs(t - 0.3), 0.0, 1.0, points=[0.3])
    assert val == pytest.approx(0.045 + 0.245, abs=1e-14)


def test_endpoint_singularity_against_scipy():
    ref, _ = sci_integrate.quad(lambda t: t**-0.5 * math.exp(-t), 0.0, 5.0, epsabs=1e-14, epsrel=1e-13)
    assert integrate(lambda t: t**-0.5 * np.exp(-t), 0.0, 5.0) == pytest.approx(ref, rel=1e-9)


def test_full_output_rule_reproduces_value():
    res = integrate(lambda t: np.sin(3 * t) ** 2, 0.0, 2.0, full_output=True)
    assert res.apply(np.sin(3 * res.nodes) ** 2) == pytest.approx(float(res.value), rel=1e-14)
    assert np.all(np.diff(res.nodes) >= 0) and np.all(res.weights > 0)


def test_non_integrable_raises():
    with pytest.raises(NonConvergence):
        integrate(lambda t: 1.0 / t, 0.0, 1.0, QuadConfig(max_subdivisions=50))


def test_config_validation():
    with pytest.raises(ValueError):
        QuadConfig(rel_tol=0.0)
    with pytest.raises(ValueError):
        QuadConfig(max_subdivisions=0)


# ---------------------------------------------------------------- Fisher information


def test_gamma_fisher_closed_form(gamma):
    info = fisher_info(gamma, [2.0, 3.0])
    np.testing.assert_allclose(info, [[0.75, -0.5], [-0.5, math.pi**2 / 6 - 1.25]], atol=1e-8)
    assert info[1, 1] == pytest.approx(0.394934, abs=1e-6)


def test_gamma_fisher_over_box(gamma):
    for alpha, beta in random_thetas(gamma, 20, seed=1, shrink=0.0):
        info = fisher_info(gamma, [alpha, beta])
        closed = [[beta / alpha**2, -1 / alpha], [-1 / alpha, special.polygamma(1, beta)]]
        np.testing.assert_allclose(info, closed, rtol=1e-8)


def test_sine_fisher_phase_free(sine):
    for theta in (0.3, 1.0, 2.5):
        assert fisher_info(sine, [theta])[0, 0] == pytest.approx(2 - math.sqrt(3), abs=1e-10)


@pytest.mark.parametrize("name", FAMILY_NAMES)
def test_fisher_symmetric_positive_definite(families, name):
    model = families[name]
    for theta in random_thetas(model, 10, seed=2):
        info = fisher_info(model, theta)
        assert np.array_equal(info, info.T)
        assert np.linalg.eigvalsh(info)[0] > 0


def test_degenerate_fisher_raises():
    flat = build({"family": "sine", "A": 0.0, "lambda0": 2.0})
    with pytest.raises(SingularFisher):
        fisher_info(flat, [1.0])


@pytest.mark.parametrize("name", FAMILY_NAMES)
def test_fisher_against_scipy_quad(families, name):
    model = families[name]
    theta = random_thetas(model, 1, seed=9)[0]
    lo, hi = model.bounds(theta)
    d = model.param_dim
    ref = np.empty((d, d))
    for i in range(d):
        for j in range(d):
            def f(t):
                g = model.intensity_grad(theta, np.array([t]))[0]
                return g[i] * g[j] / model.intensity(theta, np.array([t]))[0]
            ref[i, j], _ = sci_integrate.quad(f, lo, hi, points=model.breakpoints(theta) or None, limit=400, epsabs=1e-13, epsrel=1e-11)
    np.testing.assert_allclose(fisher_info(model, theta), ref, rtol=1e-7, atol=1e-10)


# ---------------------------------------------------------------- compensator identity


@pytest.mark.parametrize("name", FAMILY_NAMES)
def test_compensator_identity(families, name):
    model = families[name]
    for theta in random_thetas(model, 20, seed=3):
        lhs = compensator(model, theta, theta + 0.0)  # the score-times-intensity form
        rhs = integrate_model(model, theta, lambda t: model.intensity_grad(theta, t))
        np.testing.assert_allclose(lhs, rhs, atol=1e-8)


@pytest.mark.parametrize("name", ["gamma", "gaussian"])
def test_normalized_families_have_zero_mass_gradient(families, name):
    model = families[name]
    for theta in random_thetas(model, 20, seed=4):
        np.testing.assert_allclose(compensator(model, theta), 0.0, atol=1e-8)


# ---------------------------------------------------------------- moments


def test_gamma_moment_map(gamma):
    np.testing.assert_allclose(moment_map(gamma, [2.0, 3.0], (T1, T2)), [1.5, 3.0], rtol=1e-10)


def test_sine_moment_map_follows_quadrature(sine):
    assert moment_map(sine, [0.0], (Basis("cos", 1),))[0] == pytest.approx(0.0, abs=1e-14)
    for theta in (0.4, 1.0, 2.2):
        # sin(2 pi t) pairs with the phase as (A/2) cos(theta), cos(2 pi t) as (A/2) sin(theta)
        assert moment_map(sine, [theta], (Basis("sin", 1),))[0] == pytest.approx(0.5 * math.cos(theta), abs=1e-12)
        assert moment_map(sine, [theta], (Basis("cos", 1),))[0] == pytest.approx(0.5 * math.sin(theta), abs=1e-12)


def test_linear_moment_map_and_g_matrix(linear_const):
    g = (Basis("poly", 0),)
    assert moment_map(linear_const, [1.0], g)[0] == pytest.approx(2.0)
    assert g_matrix(linear_const, [1.0], g)[0, 0] == pytest.approx(2.0)
    assert moment_jacobian(linear_const, [1.0], g)[0, 0] == pytest.approx(1.0)


def test_gamma_jacobian_and_g_matrix(gamma):
    J = moment_jacobian(gamma, [2.0, 3.0], (T1, T2))
    np.testing.assert_allclose(J, [[-0.75, 0.5], [-3.0, 1.75]], rtol=1e-9)
    G = g_matrix(gamma, [2.0, 3.0], (T1, T2))
    np.testing.assert_allclose(G, [[3.0, 7.5], [7.5, 22.5]], rtol=1e-10)


def test_linear_jacobian_is_constant(linear_2d):
    g = linear_2d.basis
    J1 = moment_jacobian(linear_2d, [1.0, 0.1], g)
    J2 = moment_jacobian(linear_2d, [3.0, -0.3], g)
    np.testing.assert_allclose(J1, J2, rtol=1e-12)
    np.testing.assert_allclose(J1, [[1.0, 0.0], [0.0, 0.5]], atol=1e-13)


@pytest.mark.parametrize("name", FAMILY_NAMES)
def test_jacobian_matches_finite_differences(families, name):
    model = families[name]
    g = {"gamma": (T1, T2), "gaussian": (T1, T2), "sine": (Basis("sin", 1),), "linear": model.basis if name == "linear" else ()}[name]
    h = 1e-6
    for theta in random_thetas(model, 5, seed=5, shrink=0.1):
        J = moment_jacobian(model, theta, g)
        for k, e in enumerate(np.eye(model.param_dim)):
            fd = (moment_map(model, theta + h * e, g) - moment_map(model, theta - h * e, g)) / (2 * h)
            np.testing.assert_allclose(J[:, k], fd, rtol=1e-6, atol=1e-8)


def test_g_matrix_symmetric_psd(gamma):
    for theta in random_thetas(gamma, 20, seed=6):
        G = g_matrix(gamma, theta, (T1, T2))
        assert np.array_equal(G, G.T)
        assert np.linalg.eigvalsh(G)[0] >= 0


def test_singular_jacobian(sine):
    with pytest.raises(SingularJacobian):
        # the cos-moment (A/2) sin(theta) is flat at theta = pi/2
        moment_jacobian(sine, [math.pi / 2], (Basis("cos", 1),))
