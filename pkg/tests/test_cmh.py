import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import integrate

from multicmh.cmh import (UndefinedEffectError, chi2_sf_1df, cmh_statistic,
                          effect_estimate, mh_common_log_or, mh_variance,
                          stratum_log_or)


def chi2_tail_by_quadrature(x):
    """Upper tail of the 1-df chi-squared density by numerical integration."""
    dens = lambda t: math.exp(-t / 2) / math.sqrt(2 * math.pi * t)
    if x == 0:
        return 1.0
    val, _ = integrate.quad(dens, x, np.inf, epsabs=1e-13, epsrel=1e-12)
    return val


@pytest.mark.parametrize("x", [0.0, 0.1, 1.0, 3.841459, 10.0, 30.0])
def test_chi2_matches_quadrature(x):
    assert abs(chi2_sf_1df(x) - chi2_tail_by_quadrature(x)) <= 1e-6


def test_chi2_frozen_values():
    assert chi2_sf_1df(0.0) == 1.0
    assert abs(chi2_sf_1df(3.841459) - 0.05) <= 1e-6
    assert abs(chi2_sf_1df(10.0) - 1.5654e-3) <= 1e-6
    assert chi2_sf_1df(1e4) < 1e-300 or chi2_sf_1df(1e4) == 0.0


def test_chi2_monotone_and_rejects_bad_input():
    xs = np.linspace(0, 50, 501)
    assert np.all(np.diff(chi2_sf_1df(xs)) < 0)
    for bad in (-1.0, np.nan, np.inf):
        with pytest.raises(ValueError):
            chi2_sf_1df(bad)


def test_balanced_single_stratum():
    r = cmh_statistic([[1, 1, 1, 1]])
    assert r.statistic_m == 0.0
    assert r.p_value == 1.0


def test_two_concordant_strata():
    r = cmh_statistic([[3, 0, 0, 3], [3, 0, 0, 3]])
    assert r.statistic_m2 == 10.0
    assert r.statistic_m == pytest.approx(3 / math.sqrt(0.9), rel=1e-15)
    assert r.p_value == chi2_sf_1df(10.0)
    assert r.p_value == pytest.approx(1.565402258002548e-3, rel=1e-12)
    assert r.strata_used == 2
    assert r.reject_flag_at(0.01)


def test_zero_stratum_is_inert():
    base = [[3, 1, 2, 5], [0, 4, 2, 2]]
    assert cmh_statistic(base + [[0, 0, 0, 0]]) == cmh_statistic(base)


def test_degenerate_table():
    r = cmh_statistic([[2, 0, 0, 0], [0, 0, 0, 0]])
    assert r.degenerate and r.p_value == 1.0 and r.strata_used == 0


def test_common_log_or_examples():
    assert mh_common_log_or([[2, 1, 1, 2]]) == pytest.approx(math.log(4))
    assert mh_common_log_or([[2, 1, 1, 2]] * 5) == pytest.approx(math.log(4))
    assert mh_common_log_or([[1, 0, 1, 1]]) == math.inf
    assert mh_common_log_or([[0, 1, 1, 1]]) == -math.inf
    with pytest.raises(UndefinedEffectError):
        mh_common_log_or([[0, 1, 0, 1]])


def test_variance_examples():
    assert mh_variance([[2, 1, 1, 2]]) == pytest.approx(3.0, rel=1e-14)
    assert mh_variance([[2, 1, 1, 2]] * 2) == pytest.approx(1.5, rel=1e-14)
    with pytest.raises(UndefinedEffectError):
        mh_variance([[1, 0, 1, 1]])


def test_variance_single_stratum_is_woolf():
    rng = np.random.default_rng(5)
    for _ in range(100):
        cell = rng.integers(1, 40, size=4)
        assert_allclose(mh_variance([cell]), np.sum(1.0 / cell), rtol=1e-12)


def test_stratum_log_or_examples():
    assert stratum_log_or([2, 1, 1, 2]) == pytest.approx(math.log(25 / 9))
    assert stratum_log_or([0, 1, 1, 0]) == pytest.approx(math.log(1 / 9))
    for k in range(5):
        assert stratum_log_or([k, k, k, k]) == 0.0


def test_effect_estimate_interval():
    e = effect_estimate([[2, 1, 1, 2]])
    assert e.state == "ok"
    assert e.theta_hat == pytest.approx(math.log(4))
    assert e.sigma_hat == pytest.approx(math.sqrt(3.0))
    assert e.ci_low == pytest.approx(math.log(4) - 1.96 * math.sqrt(3.0))
    assert e.ci_high == pytest.approx(math.log(4) + 1.96 * math.sqrt(3.0))


def test_effect_estimate_sentinels():
    e = effect_estimate([[3, 0, 0, 3], [3, 0, 0, 3]])
    assert e.state == "+inf" and math.isnan(e.sigma_hat)
    assert len(e.stratum_thetas) == 2
    assert effect_estimate([[0, 1, 0, 1]]).state == "undefined"


def test_column_swap_flips_sign():
    cells = np.array([[5, 2, 1, 4], [3, 3, 2, 6], [1, 0, 2, 2]])
    swapped = cells[:, [1, 0, 3, 2]]
    r, s = cmh_statistic(cells), cmh_statistic(swapped)
    assert s.statistic_m == pytest.approx(-r.statistic_m, rel=1e-12)
    assert s.p_value == pytest.approx(r.p_value, rel=1e-12)
    assert mh_common_log_or(swapped) == pytest.approx(-mh_common_log_or(cells))
    assert_allclose(stratum_log_or(swapped), -stratum_log_or(cells))
