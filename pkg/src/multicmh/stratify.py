"""
Recursive median-split stratification of the conditioning variables.

Each round splits every current stratum at its sample median along one
coordinate, cycling through the coordinates. After ``L = ceil(log2 T)``
rounds the last ``2**L - T`` sibling pairs (in depth-first order) are
merged back so that exactly ``T`` strata remain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Stratification:
    """
    Partition of a set of sample indices into ``T`` rank rectangles.

    Attributes
    ----------
    T : int
    indices : ndarray, shape (m,)
        Member sample indices in ascending order.
    labels : ndarray, shape (m,)
        Stratum (0..T-1, depth-first order) of each member.
    bounds : ndarray, shape (T, d, 2)
        Half-open rank interval ``(lo, hi]`` per stratum and coordinate.
    max_diameter_diag : float or None
        Largest stratum diameter, if computed (diagnostic only).
    """

    T: int
    indices: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)
    bounds: np.ndarray = field(repr=False)
    max_diameter_diag: float | None = None

    @property
    def strata(self) -> list[np.ndarray]:
        """Sorted index set of each stratum."""
        order = np.argsort(self.labels, kind="stable")
        sizes = np.bincount(self.labels, minlength=self.T)
        return np.split(self.indices[order], np.cumsum(sizes)[:-1])

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.T)

    def assign(self, z_ranks) -> np.ndarray:
        """
        Stratum of arbitrary points by rectangle membership (-1 if none).
        """
        zr = np.asarray(z_ranks)
        inside = np.all((zr[:, None, :] > self.bounds[None, :, :, 0])
                        & (zr[:, None, :] <= self.bounds[None, :, :, 1]),
                        axis=2)
        out = np.full(zr.shape[0], -1, dtype=np.int64)
        hit = inside.any(axis=1)
        out[hit] = np.argmax(inside[hit], axis=1)
        return out


def target_strata_count(m: int, eta: int, floor_T: int | None = None) -> int:
    """
    Number of strata for ``m`` samples and a desired stratum size ``eta``.

    ``ceil(m / eta)``; with ``floor_T`` given, ``max(ceil(m / eta), floor_T)``
    clamped to ``max(1, m // 2)`` so no stratum is forced to be empty.
    """
    if m < 1 or eta < 1:
        raise ValueError("m and eta must be positive")
    T = -(-m // eta)
    if floor_T is not None:
        T = min(max(T, floor_T), max(1, m // 2))
    return T


def _split_rounds(zr: np.ndarray, T: int, track_bounds: bool):
    """
    Core of :func:`medtree` on a rank matrix ``zr`` (m x d).

    Returns labels in depth-first order and, optionally, the bounds.
    """
    m, d = zr.shape
    L = (T - 1).bit_length()  # ceil(log2 T)
    labels = np.zeros(m, dtype=np.int64)
    if track_bounds:
        bounds = np.empty((1, d, 2), dtype=np.int64)
        bounds[0, :, 0] = 0
        bounds[0, :, 1] = zr.max(axis=0) if m else 0
    ar = np.arange(m)
    for t in range(L):
        j = t % d
        col = zr[:, j]
        order = np.lexsort((col, labels))
        g = labels[order]
        counts = np.bincount(g, minlength=1 << t)
        starts = np.cumsum(counts) - counts
        pos = ar - starts[g]
        right = pos >= (counts[g] + 1) // 2
        labels[order] = 2 * g + right
        if track_bounds:
            nleft = (counts + 1) // 2
            # last rank sent left; empty groups keep their upper bound
            last_left = np.where(nleft > 0,
                                 col[order][np.minimum(starts + nleft - 1,
                                                       m - 1)],
                                 bounds[:, j, 1])
            nb = np.repeat(bounds, 2, axis=0)
            nb[0::2, j, 1] = last_left
            nb[1::2, j, 0] = last_left
            bounds = nb
    if L and (1 << L) > T:
        first_merged = T - (1 << (L - 1))
        pair = labels >> 1
        merged = pair >= first_merged
        labels = np.where(merged, first_merged + pair, labels)
        if track_bounds:
            keep = bounds[: 2 * first_merged]
            lo = bounds[2 * first_merged::2]
            hi = bounds[2 * first_merged + 1::2]
            joined = np.stack([np.minimum(lo[..., 0], hi[..., 0]),
                               np.maximum(lo[..., 1], hi[..., 1])], axis=-1)
            bounds = np.concatenate([keep, joined])
    return labels, (bounds if track_bounds else None)


def clamp_strata(T: int, m: int) -> int:
    return max(1, min(T, m // 2 if m >= 2 else 1))


def medtree(z_ranks, eta: int = 10, T: int | None = None, indices=None,
            floor_T: int | None = None) -> Stratification:
    """
    Stratify samples into ``T`` axis-aligned rank rectangles of near-equal
    counts by recursive median splits.

    Parameters
    ----------
    z_ranks : array_like, shape (m, d)
        Ranks (or any values without ties) of the conditioning variables of
        the samples to stratify.
    eta : int
        Desired stratum size; ``T = ceil(m / eta)`` unless ``T`` is given.
    T : int, optional
        Explicit stratum count.
    indices : array_like, shape (m,), optional
        Sample indices for the rows of ``z_ranks``; default ``0..m-1``.
    floor_T : int, optional
        Lower bound on ``T``, see :func:`target_strata_count`.

    Notes
    -----
    ``T`` is clamped to ``max(1, m // 2)`` so every stratum is non-empty.
    Round ``t`` (0-based) splits on coordinate ``t mod d``; the left half
    receives ``ceil(size / 2)`` samples.
    """
    zr = np.asarray(z_ranks)
    if zr.ndim == 1:
        zr = zr[:, None]
    m, d = zr.shape
    if m < 1 or d < 1:
        raise ValueError("need at least one sample and one coordinate")
    if indices is None:
        indices = np.arange(m)
    else:
        indices = np.asarray(indices, dtype=np.int64)
        if indices.shape != (m,):
            raise ValueError("indices must match the rows of z_ranks")
    if T is None:
        T = target_strata_count(m, eta, floor_T)
    T = clamp_strata(int(T), m)

    order = np.argsort(indices, kind="stable")
    zr, indices = zr[order], indices[order]
    labels, bounds = _split_rounds(zr, T, track_bounds=True)
    return Stratification(T, indices, labels, bounds)


def medtree_labels(zr: np.ndarray, T: int) -> np.ndarray:
    """Stratum labels only; the fast path used when scanning windows."""
    return _split_rounds(zr, clamp_strata(T, zr.shape[0]), False)[0]
