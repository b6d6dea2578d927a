"""
Multiscale CMH scan.

Windows ``I x J`` of the two dyadic trees are visited from coarse to fine
resolution ``k = l1 + l2``. Each window that passes the screening rule gets
its own stratification of ``z`` (built from the window's samples only) and
a CMH p-value. Window p-values are combined with Sidak's correction within
each partition ``(l1, l2)``, then across the partitions of one resolution,
then across resolutions.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .cmh import EffectEstimate, cmh_statistic, effect_estimate
from .stratify import medtree_labels, target_strata_count
from .tabulate import Dataset, build_dyadic_tree, rank_columns


@dataclass(frozen=True)
class ScanConfig:
    """
    Tuning parameters of the scan.

    Attributes
    ----------
    eta : int
        Desired number of samples per stratum.
    k_max : int
        Cap on the depth of each dyadic tree.
    v_all, v_margin : int
        Screening thresholds on the window count and on each of its four
        margins (aggregated over strata).
    alpha : float
        Level used to flag significant windows.
    strata_floor : int, optional
        Minimum number of strata per window (off by default).
    depths : (int, int), optional
        Fixed tree depths, bypassing the automatic rule.
    """

    eta: int = 10
    k_max: int = 7
    v_all: int = 20
    v_margin: int = 10
    alpha: float = 0.05
    strata_floor: int | None = None
    depths: tuple[int, int] | None = None

    def __post_init__(self):
        if self.eta < 1:
            raise ValueError("eta must be >= 1")
        if self.k_max < 1:
            raise ValueError("k_max must be >= 1")
        if not (self.v_all >= self.v_margin >= 1):
            raise ValueError("need v_all >= v_margin >= 1")
        if not (0 < self.alpha < 1):
            raise ValueError("alpha must lie in (0, 1)")
        if self.strata_floor is not None and self.strata_floor < 1:
            raise ValueError("strata_floor must be >= 1")
        if self.depths is not None:
            if len(self.depths) != 2 or min(self.depths) < 0:
                raise ValueError("depths must be two non-negative integers")
            object.__setattr__(self, "depths", tuple(int(k) for k in self.depths))


@dataclass(frozen=True)
class WindowResult:
    """
    Outcome for one window. ``p_value``, ``T``, ``alpha_n`` and ``effect``
    are ``None`` for windows removed by screening.
    """

    l1: int
    l2: int
    pos_i: int
    pos_j: int
    n: int
    screened: bool
    T: int | None = None
    statistic_m: float | None = None
    p_value: float | None = None
    alpha_n: float | None = None
    significant: bool = False
    effect: EffectEstimate | None = None
    x_range: tuple[float, float] = (0.0, 1.0)
    y_range: tuple[float, float] = (0.0, 1.0)


@dataclass(frozen=True)
class ScanReport:
    """
    Result of :func:`scan`.

    Attributes
    ----------
    overall_p : float
    depths : (int, int)
    resolution_ps : list of (k, p_k or None, U(k))
    partition_ps : dict mapping (l1, l2) to (p or None, L(l1, l2))
    windows : list of WindowResult in canonical order
    no_valid_window : bool
    """

    overall_p: float
    depths: tuple[int, int]
    resolution_ps: list
    partition_ps: dict
    windows: list = field(repr=False)
    config: ScanConfig = field(default_factory=ScanConfig)
    n: int = 0
    no_valid_window: bool = False

    @property
    def significant_windows(self) -> list[WindowResult]:
        return [w for w in self.windows if w.significant]

    def rejects(self, alpha: float | None = None) -> bool:
        return self.overall_p <= (self.config.alpha if alpha is None else alpha)


def choose_depths(n: int, config: ScanConfig | None = None,
                  x_arity: str = "continuous",
                  y_arity: str = "continuous") -> tuple[int, int]:
    """
    Tree depths ``min(k_max, max(1, ceil(log2(n / v_margin))))``; binary
    axes always get depth 1.
    """
    cfg = config or ScanConfig()
    if n < 1:
        raise ValueError("n must be positive")
    if cfg.depths is not None:
        k1, k2 = cfg.depths
    else:
        k = min(cfg.k_max, max(1, math.ceil(math.log2(n / cfg.v_margin))))
        k1 = k2 = k
    if x_arity == "binary":
        k1 = 1
    if y_arity == "binary":
        k2 = 1
    return k1, k2


def screen(n_ij: int, margins, config: ScanConfig | None = None) -> bool:
    """
    Screening rule: keep a window only if it holds at least ``v_all``
    samples and each aggregated margin ``(row1, row2, col1, col2)`` is at
    least ``v_margin``.
    """
    cfg = config or ScanConfig()
    return bool(n_ij >= cfg.v_all and min(margins) >= cfg.v_margin)


def sidak_combine(min_p: float, m: int) -> float:
    """``1 - (1 - min_p) ** m`` evaluated without cancellation."""
    if m < 1:
        raise ValueError("m must be >= 1")
    if not 0.0 <= min_p <= 1.0:
        raise ValueError("min_p must lie in [0, 1]")
    if min_p == 1.0:
        return 1.0
    return -math.expm1(m * math.log1p(-min_p))


def adjusted_alpha(alpha: float, resolutions_total: int, U_k: int,
                   L: int) -> float:
    """Per-window level ``1 - (1 - alpha) ** (1 / (resolutions_total * U_k * L))``."""
    m = resolutions_total * U_k * L
    if m < 1:
        raise ValueError("counts must be >= 1")
    return -math.expm1(math.log1p(-alpha) / m)


def sidak_ladder(partition_pvalues: dict, k1: int, k2: int):
    """
    Three-stage combination.

    Parameters
    ----------
    partition_pvalues : dict
        Maps ``(l1, l2)`` to the list of p-values of its screened windows.
    k1, k2 : int
        Tree depths.

    Returns
    -------
    overall_p : float
    resolution_ps : list of (k, p_k or None, U(k))
    partition_ps : dict of (l1, l2) -> (p or None, L)
    """
    partition_ps = {}
    resolution_ps = []
    best = []
    for k in range(k1 + k2 - 1):
        part_best = []
        for l1 in range(max(0, k - (k2 - 1)), min(k1 - 1, k) + 1):
            l2 = k - l1
            ps = partition_pvalues.get((l1, l2), [])
            L = len(ps)
            if L:
                p = sidak_combine(min(ps), L)
                part_best.append(p)
                partition_ps[(l1, l2)] = (p, L)
            else:
                partition_ps[(l1, l2)] = (None, 0)
        U = len(part_best)
        if U:
            pk = sidak_combine(min(part_best), U)
            best.append(pk)
            resolution_ps.append((k, pk, U))
        else:
            resolution_ps.append((k, None, 0))
    if not best:
        return 1.0, resolution_ps, partition_ps
    return sidak_combine(min(best), k1 + k2 - 1), resolution_ps, partition_ps


def _resolve_workers(workers):
    if workers is None:
        workers = int(os.environ.get("MULTICMH_WORKERS", "1") or 1)
    return max(1, int(workers))


def _window_stats(zr, quad, members, cfg):
    """CMH p-value and effect estimate for one screened window."""
    m = members.size
    T = target_strata_count(m, cfg.eta, cfg.strata_floor)
    rounds = (T - 1).bit_length()
    cols = min(rounds, zr.shape[1]) or 1
    labels = medtree_labels(zr[members, :cols], T)
    T = int(labels.max()) + 1
    cells = np.bincount(labels * 4 + quad[members],
                        minlength=4 * T).reshape(T, 4)
    return T, cmh_statistic(cells), effect_estimate(cells)


def scan(dataset: Dataset, config: ScanConfig | None = None,
         workers: int | None = None) -> ScanReport:
    """
    Run the multiscale CMH test of ``x`` independent of ``y`` given ``z``.

    Parameters
    ----------
    dataset : Dataset
    config : ScanConfig, optional
    workers : int, optional
        Threads used for the windows of a partition; defaults to the
        ``MULTICMH_WORKERS`` environment variable or 1. The report does not
        depend on it.

    Returns
    -------
    ScanReport
    """
    cfg = config or ScanConfig()
    workers = _resolve_workers(workers)
    n = dataset.n
    k1, k2 = choose_depths(n, cfg, dataset.x_arity, dataset.y_arity)
    xtree = build_dyadic_tree(dataset.x, k1, dataset.x_arity)
    ytree = build_dyadic_tree(dataset.y, k2, dataset.y_arity)
    k1, k2 = xtree.depth, ytree.depth
    zr = rank_columns(dataset.z)

    raw = []   # per partition: (l1, l2, counts, screened, stats)
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        for k in range(k1 + k2 - 1):
            for l1 in range(max(0, k - (k2 - 1)), min(k1 - 1, k) + 1):
                l2 = k - l1
                wid = (xtree.labels[l1] << l2) | ytree.labels[l2]
                quad = 2 * (xtree.labels[l1 + 1] & 1) + (ytree.labels[l2 + 1] & 1)
                W = 1 << (l1 + l2)
                counts = np.bincount(wid * 4 + quad,
                                     minlength=4 * W).reshape(W, 4)
                n_ij = counts.sum(axis=1)
                margins = np.stack([counts[:, 0] + counts[:, 1],
                                    counts[:, 2] + counts[:, 3],
                                    counts[:, 0] + counts[:, 2],
                                    counts[:, 1] + counts[:, 3]], axis=1)
                keep = (n_ij >= cfg.v_all) & (margins.min(axis=1) >= cfg.v_margin)
                kept = np.flatnonzero(keep)
                order = np.argsort(wid, kind="stable")
                starts = np.cumsum(n_ij) - n_ij
                groups = [order[starts[w]:starts[w] + n_ij[w]] for w in kept]
                if pool is not None and len(groups) > 1:
                    stats = list(pool.map(
                        lambda g: _window_stats(zr, quad, g, cfg), groups))
                else:
                    stats = [_window_stats(zr, quad, g, cfg) for g in groups]
                raw.append((l1, l2, n_ij, kept, stats))
    finally:
        if pool is not None:
            pool.shutdown()

    pvals = {(l1, l2): [s[1].p_value for s in stats]
             for l1, l2, _, _, stats in raw}
    overall, resolution_ps, partition_ps = sidak_ladder(pvals, k1, k2)
    U = {k: u for k, _, u in resolution_ps}

    windows = []
    for l1, l2, n_ij, kept, stats in raw:
        L = partition_ps[(l1, l2)][1]
        a_n = adjusted_alpha(cfg.alpha, k1 + k2 - 1, U[l1 + l2], L) if L else None
        by_w = dict(zip(kept.tolist(), stats))
        xr = [(nd.lo / n, nd.hi / n) for nd in xtree.levels[l1]]
        yr = [(nd.lo / n, nd.hi / n) for nd in ytree.levels[l2]]
        ny = 1 << l2
        for w in range(1 << (l1 + l2)):
            i, j = w >> l2, w & (ny - 1)
            s = by_w.get(w)
            if s is None:
                windows.append(WindowResult(l1, l2, i, j, int(n_ij[w]), False,
                                            x_range=xr[i], y_range=yr[j]))
                continue
            T, res, eff = s
            windows.append(WindowResult(
                l1, l2, i, j, int(n_ij[w]), True, T, res.statistic_m,
                res.p_value, a_n, res.p_value <= a_n, eff, xr[i], yr[j]))

    return ScanReport(overall, (k1, k2), resolution_ps, partition_ps, windows,
                      cfg, n, no_valid_window=not any(
                          p is not None for _, p, _ in resolution_ps))


def config_dict(cfg: ScanConfig) -> dict:
    d = asdict(cfg)
    d["depths"] = list(cfg.depths) if cfg.depths is not None else None
    return d
