"""
Cochran-Mantel-Haenszel statistic and Mantel-Haenszel effect estimates
for stratified 2x2 tables.

Every function accepts a :class:`~multicmh.tabulate.WindowTable` or a
``(T, 4)`` array of cells ``(a, b, c, d)`` per stratum.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfc

from .tabulate import WindowTable

Z_975 = 1.96


class UndefinedEffectError(ValueError):
    """The Mantel-Haenszel odds ratio is 0/0 for this table."""


def _cells(table) -> np.ndarray:
    if isinstance(table, WindowTable):
        return table.cells
    cells = np.asarray(table, dtype=np.int64)
    if cells.ndim == 1:
        cells = cells.reshape(1, 4)
    if cells.ndim != 2 or cells.shape[1] != 4:
        raise ValueError("expected cells of shape (T, 4)")
    return cells


def chi2_sf_1df(x):
    """
    Survival function of the chi-squared distribution with one degree of
    freedom, ``erfc(sqrt(x / 2))``.
    """
    xa = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(xa)) or np.any(xa < 0):
        raise ValueError("chi2_sf_1df requires finite non-negative input")
    out = erfc(np.sqrt(xa / 2.0))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class CmhResult:
    """
    CMH test of a zero common log odds ratio.

    ``statistic_m`` is the signed statistic; its sign gives the direction of
    the association (positive: concordant cells a and d in excess).
    """

    statistic_m: float
    statistic_m2: float
    p_value: float
    strata_used: int
    degenerate: bool = False

    def reject_flag_at(self, alpha: float) -> bool:
        """Test decision at level ``alpha``."""
        return self.p_value <= alpha


def _moments(cells):
    a = cells[..., 0].astype(float)
    r = a + cells[..., 1]
    c = a + cells[..., 2]
    n = cells.sum(axis=-1).astype(float)
    ok = n > 1
    safe = np.where(ok, n, 2.0)
    mu = r * c / safe
    var = r * (safe - r) * c * (safe - c) / (safe * safe * (safe - 1.0))
    ok &= var > 0
    return a, mu, var, ok


def cmh_statistic(table) -> CmhResult:
    """
    CMH statistic ``M = sum(a_t - mu_t) / sqrt(sum var_t)`` referred to a
    chi-squared distribution with one degree of freedom.

    ``mu_t = r_t c_t / n_t`` and
    ``var_t = r_t (n_t - r_t) c_t (n_t - c_t) / (n_t^2 (n_t - 1))`` with
    ``r_t``, ``c_t`` the first row and column margins. Strata with at most
    one sample or a zero margin are skipped. A table in which every stratum
    is skipped gives ``M = 0`` and ``p = 1``.
    """
    m, m2, p, used = cmh_statistics(_cells(table)[None])
    if used[0] == 0:
        return CmhResult(0.0, 0.0, 1.0, 0, degenerate=True)
    return CmhResult(float(m[0]), float(m2[0]), float(p[0]), int(used[0]))


def cmh_statistics(cells: np.ndarray):
    """
    Vectorised :func:`cmh_statistic` over a batch of tables padded with
    empty strata to a common ``T``.

    Parameters
    ----------
    cells : ndarray, shape (W, T, 4)

    Returns
    -------
    m, m2, p, used : ndarrays of shape (W,)
    """
    a, mu, var, ok = _moments(cells)
    dev = np.where(ok, a - mu, 0.0).sum(axis=-1)
    v = np.where(ok, var, 0.0).sum(axis=-1)
    used = np.where(v > 0, ok.sum(axis=-1), 0)
    good = used > 0
    vs = np.where(good, v, 1.0)
    m = np.where(good, dev / np.sqrt(vs), 0.0)
    m2 = np.where(good, dev * dev / vs, 0.0)
    p = np.where(good, erfc(np.sqrt(m2 / 2.0)), 1.0)
    return m, m2, p, used


def _mh_sums(cells):
    n = cells.sum(axis=1).astype(float)
    keep = n > 0
    cells = cells[keep].astype(float)
    n = n[keep]
    a, b, c, d = cells.T
    return a, b, c, d, n


def mh_common_log_or(table) -> float:
    """
    Mantel-Haenszel common log odds ratio
    ``log(sum(a d / n) / sum(b c / n))``.

    Returns ``+inf`` when the denominator vanishes and ``-inf`` when the
    numerator vanishes; raises :class:`UndefinedEffectError` if both do.
    """
    a, b, c, d, n = _mh_sums(_cells(table))
    num = float(np.sum(a * d / n))
    den = float(np.sum(b * c / n))
    if num == 0 and den == 0:
        raise UndefinedEffectError("both Mantel-Haenszel sums are zero")
    if den == 0:
        return float("inf")
    if num == 0:
        return float("-inf")
    return float(np.log(num / den))


def mh_variance(table) -> float:
    """
    Variance estimate of the Mantel-Haenszel log odds ratio valid both for
    many sparse strata and for few large strata.

    With ``P = (a+d)/n``, ``Q = (b+c)/n``, ``R = ad/n``, ``S = bc/n``::

        sum(PR) / (2 R+^2) + sum(PS + QR) / (2 R+ S+) + sum(QS) / (2 S+^2)
    """
    a, b, c, d, n = _mh_sums(_cells(table))
    P = (a + d) / n
    Q = (b + c) / n
    R = a * d / n
    S = b * c / n
    Rs, Ss = R.sum(), S.sum()
    if Rs == 0 or Ss == 0:
        raise UndefinedEffectError(
            "variance undefined: a Mantel-Haenszel sum is zero")
    return float((P * R).sum() / (2 * Rs * Rs)
                 + (P * S + Q * R).sum() / (2 * Rs * Ss)
                 + (Q * S).sum() / (2 * Ss * Ss))


def stratum_log_or(cells) -> np.ndarray | float:
    """Per-stratum sample log odds ratio with 0.5 added to every cell."""
    c = np.asarray(cells, dtype=float) + 0.5
    out = np.log(c[..., 0] * c[..., 3] / (c[..., 1] * c[..., 2]))
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class EffectEstimate:
    """
    Common log odds ratio of a window with its standard error and a 95%
    Wald interval.

    ``state`` is ``"ok"``, ``"+inf"``, ``"-inf"`` or ``"undefined"``; outside
    ``"ok"`` the standard error and interval are NaN.
    """

    theta_hat: float
    sigma_hat: float
    ci_low: float
    ci_high: float
    stratum_thetas: np.ndarray = field(repr=False)
    state: str = "ok"


def effect_estimate(table) -> EffectEstimate:
    cells = _cells(table)
    thetas = np.atleast_1d(stratum_log_or(cells))
    try:
        theta = mh_common_log_or(cells)
    except UndefinedEffectError:
        nan = float("nan")
        return EffectEstimate(nan, nan, nan, nan, thetas, "undefined")
    if np.isinf(theta):
        nan = float("nan")
        return EffectEstimate(theta, nan, nan, nan, thetas,
                              "+inf" if theta > 0 else "-inf")
    sigma = float(np.sqrt(mh_variance(cells)))
    return EffectEstimate(theta, sigma, theta - Z_975 * sigma,
                          theta + Z_975 * sigma, thetas)
