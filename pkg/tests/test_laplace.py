import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wittenlat.errors import InvalidInput, PhasePositivityViolated, RadiusTooSmall
from wittenlat.laplace import (
    GaussianSumSpec,
    PhaseSpec,
    gaussian_moment_integral,
    gaussian_sum_direct,
    gaussian_sum_poisson,
    laplace_sum_general,
    loglog_slope,
    odd_moment_bound,
)

Q_GRID = [np.eye(1), 2 * np.eye(1), np.eye(2), np.diag([1.0, 4.0]), np.array([[2.0, 0.5], [0.5, 1.0]])]


def test_unit_gaussian_m0():
    s = GaussianSumSpec(np.eye(1), [0.0], 0, 1.0)
    assert gaussian_sum_poisson(s).leading == pytest.approx(math.sqrt(2 * math.pi), rel=1e-15)
    direct = gaussian_sum_direct(s)
    assert direct == pytest.approx(2.5066283, abs=1e-6)


def test_first_moment_small_eps():
    s = GaussianSumSpec(np.eye(1), [0.0], 1, 0.1)
    assert gaussian_sum_direct(s) == pytest.approx(0.1 * math.sqrt(2 * math.pi), rel=1e-12)


def test_anisotropic_leading():
    s = GaussianSumSpec(np.diag([1.0, 4.0]), [0.0, 0.0], 0, 0.3)
    assert gaussian_sum_poisson(s).leading == pytest.approx(math.pi, rel=1e-14)


@pytest.mark.parametrize("Q", Q_GRID, ids=lambda q: str(q.tolist()))
@pytest.mark.parametrize("m", [0, 1, 2])
@pytest.mark.parametrize("eps", [1.0, 0.5, 0.1, 0.05])
def test_poisson_vs_direct(Q, m, eps):
    s = GaussianSumSpec(Q, np.zeros(Q.shape[0]), m, eps)
    P = gaussian_sum_poisson(s)
    D = gaussian_sum_direct(s)
    assert abs(D - P.leading) <= max(P.correction_bound, 1e-12 * P.leading)
    if m == 0:
        assert P.leading == pytest.approx(math.sqrt((2 * math.pi) ** Q.shape[0] / np.linalg.det(Q)),
                                          rel=1e-14)


def test_moment_integral_against_quadrature():
    from scipy import integrate

    Q = np.array([[2.0, 0.5], [0.5, 1.0]])
    for m in (0, 1, 2):
        val, _ = integrate.dblquad(
            lambda y, x: (x * x + y * y) ** m * math.exp(-0.5 * (2 * x * x + x * y + y * y)),
            -12, 12, -12, 12, epsabs=1e-12)
        assert gaussian_moment_integral(Q, m) == pytest.approx(val, rel=1e-9)


@settings(max_examples=20, deadline=None)
@given(st.integers(-20, 20), st.sampled_from([0.5, 0.25, 0.1]))
def test_translation_invariance_m0(k, eps):
    base = gaussian_sum_direct(GaussianSumSpec(np.eye(1), [0.0], 0, eps))
    shifted = gaussian_sum_direct(GaussianSumSpec(np.eye(1), [k * eps], 0, eps))
    assert shifted == pytest.approx(base, rel=1e-13)


def test_moment_scaling_slope():
    eps = [0.2, 0.1, 0.05]
    for m in (1, 2):
        vals = [gaussian_sum_direct(GaussianSumSpec(np.eye(2), [0, 0], m, e)) for e in eps]
        assert loglog_slope(eps, vals) == pytest.approx(m, abs=1e-8)


def test_radius_too_small():
    with pytest.raises(RadiusTooSmall):
        gaussian_sum_direct(GaussianSumSpec(np.eye(1), [0.0], 0, 1.0), radius=2.0)


def test_spec_validation():
    with pytest.raises(InvalidInput):
        GaussianSumSpec(np.array([[1.0, 2.0], [2.0, 1.0]]), [0, 0], 0, 0.1)
    with pytest.raises(InvalidInput):
        GaussianSumSpec(np.eye(1), [0.0], -1, 0.1)
    with pytest.raises(InvalidInput):
        GaussianSumSpec(np.eye(1), [0.0], 0, 0.0)


@pytest.mark.parametrize("x0", [[0.0], [0.037]])
def test_odd_moment_bound(x0):
    r = odd_moment_bound(np.eye(1), x0, 1, 0.1)
    assert 0 < r.value <= r.bound
    r3 = odd_moment_bound(np.eye(1), x0, 3, 0.1)
    assert r3.value <= r3.bound
    with pytest.raises(InvalidInput):
        odd_moment_bound(np.eye(1), x0, 2, 0.1)


def test_odd_moment_half_slope():
    a = odd_moment_bound(np.eye(1), [0.0], 1, 0.1).value
    b = odd_moment_bound(np.eye(1), [0.0], 1, 0.05).value
    # |x| has a kink at x0, so the lattice correction is polynomial, not exponentially small
    assert math.log(a / b) / math.log(2) == pytest.approx(0.5, abs=0.02)


def test_quadratic_phase_reduces_to_gaussian():
    ph = PhaseSpec(lambda x: 0.5 * x[..., 0] ** 2, [0.0], 3.0, 3, [[1.0]])
    assert abs(laplace_sum_general(ph, 0, 0.1).rel_error) <= 1e-8


def _slope(phi, k, d=1):
    ph = PhaseSpec(phi, np.zeros(d), 1.5, k, np.eye(d))
    eps = [0.1, 0.05, 0.025]
    return loglog_slope(eps, [laplace_sum_general(ph, 0, e).rel_error for e in eps])


def test_general_phase_slopes():
    assert _slope(lambda x: 0.5 * x[..., 0] ** 2 + 0.1 * x[..., 0] ** 3, 3) >= 0.45
    assert _slope(lambda x: 0.5 * x[..., 0] ** 2 + 0.1 * x[..., 0] ** 4, 4) >= 0.9
    cubic2 = lambda x: 0.5 * np.sum(x * x, axis=-1) + 0.1 * x[..., 0] ** 3
    assert _slope(cubic2, 3, d=2) >= 0.45


def test_phase_positivity():
    with pytest.raises(PhasePositivityViolated):
        ph = PhaseSpec(lambda x: 0.5 * x[..., 0] ** 2 - 0.5 * x[..., 0] ** 3, [0.0], 1.5, 3, [[1.0]])
        laplace_sum_general(ph, 0, 0.1)
    with pytest.raises(InvalidInput):
        PhaseSpec(lambda x: 0.5 * x[..., 0] ** 2 + 1, [0.0], 1.0, 3, [[1.0]])
    with pytest.raises(InvalidInput):
        PhaseSpec(lambda x: 0.5 * x[..., 0] ** 2, [0.0], 1.0, 5, [[1.0]])
