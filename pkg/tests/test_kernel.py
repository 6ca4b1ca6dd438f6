import math
import time

import numpy as np
import pytest
from scipy import integrate

from besselpoisson import (
    BesselParam,
    Interval,
    KernelQuery,
    QuadratureAccuracyError,
    check_kernel_upper_bound,
    eval_kernel,
    eval_kernel_batch,
    fit_upper_bound_constants,
    m_lambda,
)


def closed_form_lambda1(x, t, y):
    """Product form of the kernel at lambda = 1."""
    return 4.0 * t / (math.pi * ((x - y) ** 2 + t ** 2) * ((x + y) ** 2 + t ** 2))


def raw_theta_integral(lam, x, t, y):
    """Independent oracle: integrate the defining theta integrand directly."""
    def integrand(theta):
        den = x * x + y * y + t * t - 2.0 * x * y * math.cos(theta)
        return math.sin(theta) ** (2.0 * lam - 1.0) / den ** (lam + 1.0)

    val, err = integrate.quad(integrand, 0.0, math.pi, limit=400, epsabs=0.0,
                              epsrel=1e-12)
    return (2.0 * lam * t / math.pi) * val


def test_unit_point_values_lambda1():
    p = BesselParam(1.0)
    got = eval_kernel(p, KernelQuery(1.0, 1.0, 1.0))
    assert got == pytest.approx(4.0 / (5.0 * math.pi), rel=1e-12)
    got = eval_kernel(p, KernelQuery(2.0, 1.0, 1.0))
    assert got == pytest.approx(4.0 / (20.0 * math.pi), rel=1e-12)


def test_closed_form_log_grid_lambda1():
    p = BesselParam(1.0)
    pts = np.logspace(-3, 3, 1000)
    t0 = time.time()
    vals = eval_kernel_batch(p, [KernelQuery(1.0, float(y), 0.7) for y in pts])
    elapsed = time.time() - t0
    ref = np.array([closed_form_lambda1(1.0, 0.7, float(y)) for y in pts])
    rel = np.abs(vals - ref) / ref
    assert rel.max() <= 1e-8
    assert elapsed < 5.0


@pytest.mark.parametrize("lam", [0.3, 0.5, 1.0, 2.0])
def test_matches_direct_quadrature(lam):
    p = BesselParam(lam)
    cases = [
        (1.0, 0.5, 2.0),
        (3.7, 0.1, 3.69),     # sharp peak: y close to x, small t
        (1.7, 0.6, 1.8),
        (0.2, 1.5, 8.0),
        (5.0, 0.05, 5.0),     # on-diagonal spike
        (10.0, 2.0, 0.3),
    ]
    for x, t, y in cases:
        got = eval_kernel(p, KernelQuery(x, y, t))
        ref = raw_theta_integral(lam, x, t, y)
        assert got == pytest.approx(ref, rel=5e-9), (x, t, y)


def test_symmetry_in_x_and_y():
    for lam in (0.5, 1.0, 2.0):
        p = BesselParam(lam)
        a = eval_kernel(p, KernelQuery(2.3, 0.9, 0.4))
        b = eval_kernel(p, KernelQuery(0.9, 2.3, 0.4))
        assert a == pytest.approx(b, rel=1e-12)


def test_positive_and_decaying_in_distance():
    p = BesselParam(0.7)
    ys = [1.0, 2.0, 4.0, 8.0, 16.0]
    vals = [eval_kernel(p, KernelQuery(1.0, y, 0.5)) for y in ys]
    assert all(v > 0.0 for v in vals)
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_batch_matches_scalar():
    p = BesselParam(1.4)
    qs = [KernelQuery(1.0, 2.0, 0.5), KernelQuery(0.3, 0.31, 0.01),
          KernelQuery(6.0, 1.0, 3.0)]
    batch = eval_kernel_batch(p, qs)
    singles = np.array([eval_kernel(p, q) for q in qs])
    np.testing.assert_allclose(batch, singles, rtol=1e-13)


def test_parameter_validation():
    with pytest.raises(ValueError):
        BesselParam(0.0)
    with pytest.raises(ValueError):
        BesselParam(-1.0)
    with pytest.raises(ValueError):
        BesselParam(1.0, quad_rel_tol=0.0)
    p = BesselParam(1.0)
    with pytest.raises(ValueError):
        eval_kernel(p, KernelQuery(1.0, 1.0, 0.0))
    with pytest.raises(ValueError):
        eval_kernel(p, KernelQuery(-1.0, 1.0, 1.0))


def test_accuracy_error_when_depth_exhausted():
    p = BesselParam(0.3, quad_rel_tol=1e-14, quad_max_depth=1)
    with pytest.raises(QuadratureAccuracyError):
        eval_kernel(p, KernelQuery(3.7, 3.7001, 0.001))


def test_reference_measure_of_intervals():
    assert m_lambda(BesselParam(1.0), Interval(1.0, 2.0)) == pytest.approx(7.0 / 3.0)
    assert m_lambda(BesselParam(0.5), Interval(0.0, 1.0)) == pytest.approx(0.5)
    assert m_lambda(BesselParam(2.0), None) == 0.0


def test_upper_bound_fit_and_check():
    p = BesselParam(1.0)
    gamma, c = fit_upper_bound_constants(p)
    assert gamma > 0.0 and c > 0.0
    rng = np.random.default_rng(11)
    for _ in range(50):
        x = float(rng.uniform(0.05, 20.0))
        y = float(rng.uniform(0.05, 20.0))
        t = float(rng.uniform(0.01, 5.0))
        assert check_kernel_upper_bound(p, KernelQuery(x, y, t), gamma, c)
