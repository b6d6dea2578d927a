"""
Simulation harness: data generators, calibration and power metrics,
runtime scaling, and independent oracles (hypergeometric pmf and a
stratified permutation sampler) for checking the scan.

Random streams
--------------
Every replication draws from its own Philox (counter-based) generator keyed
by ``SeedSequence(seed, spawn_key=stream)``. Streams used by the runners:

* ``(0, r)``  -- null dataset of replication ``r``
* ``(1, r)``  -- alternative dataset of replication ``r``
* ``(2, n, r)`` -- scaling dataset of size ``n``, repeat ``r``

so results do not depend on the number of worker processes or on the order
in which replications finish.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import erfc, gammaln

from .cmh import cmh_statistics
from .multiscan import ScanConfig, _resolve_workers, choose_depths, scan
from .tabulate import Dataset, build_dyadic_tree

SCENARIOS = ("null_pnl", "alt_pnl", "pure_null_gaussian", "planted_window")

PNL_FUNCTIONS = (
    ("identity", lambda v: v),
    ("square", np.square),
    ("cube", lambda v: v ** 3),
    ("tanh", np.tanh),
    ("exp_neg_abs", lambda v: np.exp(-np.abs(v))),
)


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Philox generator for ``seed`` and the sub-stream key ``stream``."""
    ss = np.random.SeedSequence(seed, spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(ss))


# -- generators --------------------------------------------------------------

def gen_pnl(n: int, d: int, hypothesis: str, rng: np.random.Generator,
            functions=None) -> Dataset:
    """
    Post-nonlinear noise model.

    Null: ``x = f1(s + e1)``, ``y = f2(s + e2)`` with ``s`` the mean of the
    first ``floor(d/2)`` coordinates of ``z`` (the single coordinate when
    ``d = 1``). Alternative: ``x = f1(0.8 e3 + e1)``, ``y = f2(0.8 e3 + e2)``
    with ``z`` independent of both. ``f1, f2`` are drawn per dataset from
    identity, square, cube, tanh and ``exp(-|.|)`` unless ``functions`` (a
    pair of indices into :data:`PNL_FUNCTIONS`) is given.
    """
    if hypothesis not in ("null", "alt"):
        raise ValueError("hypothesis must be 'null' or 'alt'")
    if n < 1 or d < 1:
        raise ValueError("n and d must be positive")
    if functions is None:
        functions = rng.integers(len(PNL_FUNCTIONS), size=2)
    f1 = PNL_FUNCTIONS[int(functions[0])][1]
    f2 = PNL_FUNCTIONS[int(functions[1])][1]
    z = rng.standard_normal((n, d))
    e1 = rng.standard_normal(n)
    e2 = rng.standard_normal(n)
    if hypothesis == "null":
        h = max(1, d // 2)
        s = z[:, :h].mean(axis=1)
        x, y = f1(s + e1), f2(s + e2)
    else:
        e3 = rng.standard_normal(n)
        x, y = f1(0.8 * e3 + e1), f2(0.8 * e3 + e2)
    return Dataset(x, y, z)


def gen_pure_null(n: int, d: int, rng: np.random.Generator) -> Dataset:
    """All of ``x``, ``y`` and the ``d`` columns of ``z`` iid standard normal."""
    data = rng.standard_normal((n, d + 2))
    return Dataset(data[:, 0], data[:, 1], data[:, 2:])


def gen_planted_window(n: int, d: int, rng: np.random.Generator,
                       noise: float = 0.5) -> Dataset:
    """
    Conditionally independent data with dependence planted in one window.

    ``x = z1 + e1`` and ``y = z1 + e2``. Among the samples above both
    medians (the window at levels (1, 1), position (1, 1)) the observed x
    and y values are re-paired through a shared latent so that they become
    strongly concordant. Value sets, and hence both medians, are unchanged.
    """
    z = rng.standard_normal((n, d))
    x = z[:, 0] + rng.standard_normal(n)
    y = z[:, 0] + rng.standard_normal(n)
    region = np.flatnonzero((x > np.median(x)) & (y > np.median(y)))
    m = region.size
    if m:
        latent = rng.standard_normal(m)
        kx = np.argsort(np.argsort(latent + noise * rng.standard_normal(m)))
        ky = np.argsort(np.argsort(latent + noise * rng.standard_normal(m)))
        x[region] = np.sort(x[region])[kx]
        y[region] = np.sort(y[region])[ky]
    return Dataset(x, y, z)


def generate(scenario: str, n: int, d: int, rng) -> Dataset:
    if scenario == "null_pnl":
        return gen_pnl(n, d, "null", rng)
    if scenario == "alt_pnl":
        return gen_pnl(n, d, "alt", rng)
    if scenario == "pure_null_gaussian":
        return gen_pure_null(n, d, rng)
    if scenario == "planted_window":
        return gen_planted_window(n, d, rng)
    raise ValueError(f"unknown scenario {scenario!r}")


# -- metrics -----------------------------------------------------------------

def auroc(null_scores, alt_scores) -> float:
    """
    Area under the ROC curve for p-value scores (smaller means more
    evidence against the null): the fraction of (alt, null) pairs with
    ``p_alt < p_null``, ties counting one half.
    """
    null = np.sort(np.asarray(null_scores, dtype=float))
    alt = np.asarray(alt_scores, dtype=float)
    if null.size == 0 or alt.size == 0:
        raise ValueError("both score lists must be non-empty")
    below = np.searchsorted(null, alt, side="left")
    above = null.size - np.searchsorted(null, alt, side="right")
    ties = null.size - below - above
    return float((above + 0.5 * ties).sum() / (null.size * alt.size))


def roc_curve(null_scores, alt_scores):
    """
    ROC points ``(fpr, tpr)`` for the rule "reject when p <= t" over all
    observed thresholds, from (0, 0) to (1, 1).
    """
    null = np.sort(np.asarray(null_scores, dtype=float))
    alt = np.sort(np.asarray(alt_scores, dtype=float))
    thr = np.unique(np.concatenate([null, alt]))
    fpr = np.searchsorted(null, thr, side="right") / null.size
    tpr = np.searchsorted(alt, thr, side="right") / alt.size
    return np.concatenate([[0.0], fpr]), np.concatenate([[0.0], tpr])


def ecdf(values, grid) -> np.ndarray:
    v = np.sort(np.asarray(values, dtype=float))
    return np.searchsorted(v, np.asarray(grid, dtype=float), side="right") / v.size


# -- hypergeometric oracle ---------------------------------------------------

def hypergeom_pmf(a: int, row: int, col: int, total: int) -> float:
    """
    Probability that the first cell equals ``a`` in a 2x2 table with first
    row margin ``row``, first column margin ``col`` and ``total`` samples.
    """
    if min(row, col, total) < 0 or row > total or col > total:
        raise ValueError("infeasible margins")
    if a < max(0, row + col - total) or a > min(row, col):
        return 0.0
    return (math.comb(row, a) * math.comb(total - row, col - a)
            / math.comb(total, col))


def hypergeom_support(row: int, col: int, total: int):
    """Support and pmf of the first cell, computed in log space."""
    lo, hi = max(0, row + col - total), min(row, col)
    a = np.arange(lo, hi + 1)
    logp = (gammaln(row + 1) - gammaln(a + 1) - gammaln(row - a + 1)
            + gammaln(total - row + 1) - gammaln(col - a + 1)
            - gammaln(total - row - col + a + 1)
            - gammaln(total + 1) + gammaln(col + 1) + gammaln(total - col + 1))
    p = np.exp(logp)
    return a, p / p.sum()


def exact_cmh_distribution(cells):
    """
    Exact conditional null distribution of the CMH p-value of one table
    given all of its stratum margins.

    Returns
    -------
    pvalues, probs : ndarrays
        Atoms of the p-value distribution (one per attainable first-cell
        total) and their probabilities.
    """
    cells = np.asarray(cells, dtype=np.int64)
    r = cells[:, 0] + cells[:, 1]
    c = cells[:, 0] + cells[:, 2]
    n = cells.sum(axis=1)
    offset = 0
    dist = np.ones(1)
    mu = var = 0.0
    for rt, ct, nt in zip(r.tolist(), c.tolist(), n.tolist()):
        if nt == 0:
            continue
        support, pmf = hypergeom_support(rt, ct, nt)
        offset += int(support[0])
        dist = np.convolve(dist, pmf)
        # a stratum with no variance has a = r c / n and adds nothing to M
        mu += rt * ct / nt
        if nt > 1:
            var += rt * (nt - rt) * ct * (nt - ct) / (nt * nt * (nt - 1.0))
    totals = offset + np.arange(dist.size)
    if var <= 0:
        return np.ones(1), np.ones(1)
    m = (totals - mu) / math.sqrt(var)
    return erfc(np.sqrt(m * m / 2.0)), dist


# -- permutation oracle ------------------------------------------------------

@dataclass
class OracleDraws:
    """
    Draws from the conditional null given every stratum's x and y margins.

    ``cells[r, w]`` is the (T, 4) table of window ``w`` on resample ``r``
    under the common stratification; ``pvalues[r, w]`` its CMH p-value.
    """

    windows: list
    cells: np.ndarray = field(repr=False)
    pvalues: np.ndarray = field(repr=False)


def _stratum_shuffle(labels, rng):
    """Permutation that shuffles indices within each stratum."""
    n = labels.size
    base = np.lexsort((np.arange(n), labels))
    shuffled = np.lexsort((rng.random(n), labels))
    perm = np.empty(n, dtype=np.int64)
    perm[base] = shuffled
    return perm


def permutation_oracle(dataset: Dataset, windows, strat_labels, resamples: int,
                       rng: np.random.Generator, depths=None) -> OracleDraws:
    """
    Resample the data under conditional independence given a common
    stratification: within each stratum the y values are permuted among
    its samples (x and z fixed), every window is re-tabulated and its CMH
    p-value recomputed.

    Parameters
    ----------
    dataset : Dataset
    windows : list of (l1, l2, pos_i, pos_j)
    strat_labels : array_like, shape (n,)
        Stratum of each sample.
    resamples : int
    rng : numpy Generator
    depths : (int, int), optional
        Tree depths; default as in :func:`~multicmh.multiscan.scan`.
    """
    labels = np.asarray(strat_labels, dtype=np.int64)
    T = int(labels.max()) + 1
    if depths is None:
        depths = choose_depths(dataset.n, ScanConfig(),
                               dataset.x_arity, dataset.y_arity)
    xtree = build_dyadic_tree(dataset.x, depths[0], dataset.x_arity)
    ytree = build_dyadic_tree(dataset.y, depths[1], dataset.y_arity)
    windows = [tuple(int(v) for v in w) for w in windows]
    parts = sorted({(w[0], w[1]) for w in windows})
    out = np.empty((resamples, len(windows), T, 4), dtype=np.int64)
    where = {p: [(k, (w[2] << p[1]) | w[3]) for k, w in enumerate(windows)
                 if (w[0], w[1]) == p] for p in parts}
    for r in range(resamples):
        ylab = ytree.labels[:, _stratum_shuffle(labels, rng)]
        for l1, l2 in parts:
            wid = (xtree.labels[l1] << l2) | ylab[l2]
            quad = 2 * (xtree.labels[l1 + 1] & 1) + (ylab[l2 + 1] & 1)
            W = 1 << (l1 + l2)
            counts = np.bincount((wid * T + labels) * 4 + quad,
                                 minlength=W * T * 4).reshape(W, T, 4)
            for k, w in where[(l1, l2)]:
                out[r, k] = counts[w]
    _, _, p, _ = cmh_statistics(out)
    return OracleDraws(windows, out, p)


def window_permutation_pvalue(cells, resamples: int,
                              rng: np.random.Generator) -> float:
    """
    Monte-Carlo conditional p-value of a stratified 2x2 table: the y labels
    are permuted within each stratum and ``|M|`` compared to its observed
    value. Returns ``(1 + #{|M*| >= |M|}) / (resamples + 1)``.
    """
    cells = np.asarray(cells, dtype=np.int64)
    m_obs = cmh_statistics(cells[None])[0][0]
    T = cells.shape[0]
    xs, ys, ts = [], [], []
    for t in range(T):
        for q in range(4):
            k = int(cells[t, q])
            xs += [q >> 1] * k
            ys += [q & 1] * k
            ts += [t] * k
    xs, ys, ts = map(np.asarray, (xs, ys, ts))
    sims = np.empty((resamples, T, 4), dtype=np.int64)
    for r in range(resamples):
        yp = ys[_stratum_shuffle(ts, rng)]
        sims[r] = np.bincount(ts * 4 + 2 * xs + yp,
                              minlength=4 * T).reshape(T, 4)
    m = cmh_statistics(sims)[0]
    # relative slack so that ties are not lost to rounding
    hits = np.count_nonzero(np.abs(m) >= np.abs(m_obs) * (1 - 1e-12))
    return (1 + hits) / (resamples + 1)


# -- experiment runners --------------------------------------------------------

@dataclass(frozen=True)
class SimSpec:
    """
    One simulation experiment.

    ``scenario`` names the generator used for null replications (and for
    every replication of a type-I error run); ``alt_scenario`` the one used
    for the alternative half of ROC runs. ``ns`` lists the sample sizes of a
    scaling run and ``etas`` the stratum sizes of a sensitivity sweep.
    """

    scenario: str = "null_pnl"
    n: int = 400
    d: int = 10
    replications: int = 100
    seed: int = 0
    config: ScanConfig = field(default_factory=ScanConfig)
    alt_scenario: str = "alt_pnl"
    etas: tuple = (5, 10, 15, 20)
    ns: tuple = (1000, 2000, 4000, 8000)

    def __post_init__(self):
        if self.replications < 1 or self.n < 1 or self.d < 1:
            raise ValueError("replications, n and d must be positive")
        for s in (self.scenario, self.alt_scenario):
            if s not in SCENARIOS:
                raise ValueError(f"unknown scenario {s!r}")


@dataclass
class MetricsBundle:
    """Summary of a simulation run; unused fields stay empty."""

    seed: int
    alpha: float
    rejection_rate: float | None = None
    grid: np.ndarray | None = field(default=None, repr=False)
    ecdf: np.ndarray | None = field(default=None, repr=False)
    roc_fpr: np.ndarray | None = field(default=None, repr=False)
    roc_tpr: np.ndarray | None = field(default=None, repr=False)
    auroc: float | None = None
    null_pvalues: np.ndarray | None = field(default=None, repr=False)
    alt_pvalues: np.ndarray | None = field(default=None, repr=False)
    runtimes: dict = field(default_factory=dict, repr=False)
    label: dict = field(default_factory=dict)


ECDF_GRID = np.linspace(0.0, 1.0, 201)


def _one_replication(job):
    scenario, n, d, seed, stream, config = job
    data = generate(scenario, n, d, make_rng(seed, *stream))
    t0 = time.process_time()
    report = scan(data, config, workers=1)
    return report.overall_p, time.process_time() - t0


def _run_jobs(jobs, workers):
    workers = _resolve_workers(workers)
    if workers == 1 or len(jobs) == 1:
        return [_one_replication(j) for j in jobs]
    with ProcessPoolExecutor(workers) as ex:
        return list(ex.map(_one_replication, jobs, chunksize=4))


def _pvalues(spec, scenario, branch, workers):
    jobs = [(scenario, spec.n, spec.d, spec.seed, (branch, r), spec.config)
            for r in range(spec.replications)]
    out = _run_jobs(jobs, workers)
    return (np.array([o[0] for o in out]), np.array([o[1] for o in out]))


def run_t1e(spec: SimSpec, workers: int | None = None) -> MetricsBundle:
    """Rejection rate and p-value ECDF over null replications."""
    p, rt = _pvalues(spec, spec.scenario, 0, workers)
    alpha = spec.config.alpha
    return MetricsBundle(
        spec.seed, alpha, rejection_rate=float(np.mean(p <= alpha)),
        grid=ECDF_GRID, ecdf=ecdf(p, ECDF_GRID), null_pvalues=p,
        runtimes={spec.n: rt.tolist()},
        label={"experiment": "t1e", "scenario": spec.scenario, "n": spec.n,
               "d": spec.d, "eta": spec.config.eta})


def run_roc(spec: SimSpec, workers: int | None = None) -> MetricsBundle:
    """ROC curve and AUROC from null and alternative replications."""
    p0, rt0 = _pvalues(spec, spec.scenario, 0, workers)
    p1, rt1 = _pvalues(spec, spec.alt_scenario, 1, workers)
    fpr, tpr = roc_curve(p0, p1)
    alpha = spec.config.alpha
    return MetricsBundle(
        spec.seed, alpha, rejection_rate=float(np.mean(p0 <= alpha)),
        grid=ECDF_GRID, ecdf=ecdf(p0, ECDF_GRID), roc_fpr=fpr, roc_tpr=tpr,
        auroc=auroc(p0, p1), null_pvalues=p0, alt_pvalues=p1,
        runtimes={spec.n: np.concatenate([rt0, rt1]).tolist()},
        label={"experiment": "roc", "scenario": spec.scenario,
               "alt_scenario": spec.alt_scenario, "n": spec.n, "d": spec.d,
               "eta": spec.config.eta})


def run_eta_sweep(spec: SimSpec, workers: int | None = None
                  ) -> list[MetricsBundle]:
    """:func:`run_roc` for every stratum size in ``spec.etas`` on the same datasets."""
    return [run_roc(replace(spec, config=replace(spec.config, eta=int(eta))),
                    workers) for eta in spec.etas]


def run_scaling(spec: SimSpec, workers: int | None = None) -> MetricsBundle:
    """
    CPU time of :func:`~multicmh.multiscan.scan` on pure-null data for each
    ``n`` in ``spec.ns``, ``spec.replications`` repeats each. Timings run in
    this process, one after another.
    """
    runtimes = {}
    for n in spec.ns:
        times = []
        for r in range(spec.replications):
            data = gen_pure_null(int(n), spec.d, make_rng(spec.seed, 2, n, r))
            t0 = time.process_time()
            scan(data, spec.config, workers=1)
            times.append(time.process_time() - t0)
        runtimes[int(n)] = times
    return MetricsBundle(spec.seed, spec.config.alpha, runtimes=runtimes,
                         label={"experiment": "scale", "d": spec.d,
                                "ns": [int(n) for n in spec.ns]})


def median_runtimes(bundle: MetricsBundle) -> dict:
    return {n: float(np.median(t)) for n, t in bundle.runtimes.items()}
