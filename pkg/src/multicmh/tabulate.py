"""
Data model: dataset ingestion, rank transformation, dyadic partition trees
over X and Y, scanning windows, and 2x2xT window tables.

All objects are immutable after construction (arrays are flagged read-only)
so they can be shared across worker threads.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

ARITIES = ("binary", "continuous")


class IngestError(ValueError):
    """Raised when input data fails validation."""


def _frozen(a):
    a = np.asarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """
    n rows of (x, y, z_1..z_d) together with the arity of x and y.

    Parameters
    ----------
    x, y : array_like, shape (n,)
    z : array_like, shape (n, d)
    x_arity, y_arity : {"binary", "continuous"}
    """

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    x_arity: str = "continuous"
    y_arity: str = "continuous"
    names: tuple = ()

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).ravel()
        y = np.asarray(self.y, dtype=float).ravel()
        z = np.asarray(self.z, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        if z.ndim != 2:
            raise IngestError("z must be a 2-d array")
        n = x.shape[0]
        if n < 1:
            raise IngestError("dataset has no rows")
        if y.shape[0] != n or z.shape[0] != n:
            raise IngestError(
                f"length mismatch: x={n}, y={y.shape[0]}, z={z.shape[0]}")
        if z.shape[1] < 1:
            raise IngestError("at least one z column is required")
        for name, col in (("x", x), ("y", y), ("z", z)):
            if not np.all(np.isfinite(col)):
                raise IngestError(f"non-finite value in {name}")
        for name, col, arity in (("x", x, self.x_arity),
                                 ("y", y, self.y_arity)):
            if arity not in ARITIES:
                raise IngestError(f"unknown arity {arity!r} for {name}")
            if arity == "binary" and np.unique(col).size > 2:
                raise IngestError(
                    f"{name} declared binary but has more than two values")
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "z", _frozen(z))

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.z.shape[1]


def detect_arity(values) -> str:
    return "binary" if np.unique(np.asarray(values)).size <= 2 else "continuous"


def ingest(rows, x: str, y: str, z: Sequence[str],
           x_arity: str | None = None, y_arity: str | None = None) -> Dataset:
    """
    Build a validated :class:`Dataset` from tabular data.

    Parameters
    ----------
    rows : mapping of column name to sequence, or sequence of row mappings
        Cells may be numbers or numeric strings.
    x, y : str
        Column names for X and Y.
    z : sequence of str
        One or more conditioning columns.
    x_arity, y_arity : {"binary", "continuous"}, optional
        Override automatic detection (at most two distinct values means
        binary).
    """
    z = list(z)
    if not z:
        raise IngestError("at least one z column is required")
    if isinstance(rows, Mapping) or hasattr(rows, "columns"):
        columns = {k: list(rows[k]) for k in rows.keys()} \
            if isinstance(rows, Mapping) else \
            {k: list(rows[k]) for k in rows.columns}
    else:
        rows = list(rows)
        keys = rows[0].keys() if rows else ()
        columns = {k: [r.get(k) for r in rows] for k in keys}
    wanted = [x, y] + z
    for name in wanted:
        if name not in columns:
            raise IngestError(f"missing column {name!r}")
    n = len(columns[x])
    if n == 0:
        raise IngestError("dataset has no rows")

    parsed = {}
    for name in dict.fromkeys(wanted):
        col = columns[name]
        out = np.empty(len(col))
        for i, cell in enumerate(col):
            try:
                v = float(cell)
            except (TypeError, ValueError):
                raise IngestError(
                    f"non-numeric value {cell!r} at row {i + 1}, "
                    f"column {name!r}") from None
            if not math.isfinite(v):
                raise IngestError(
                    f"non-finite value {cell!r} at row {i + 1}, "
                    f"column {name!r}")
            out[i] = v
        parsed[name] = out

    xv, yv = parsed[x], parsed[y]
    zv = np.column_stack([parsed[c] for c in z])
    return Dataset(xv, yv, zv,
                   x_arity=x_arity or detect_arity(xv),
                   y_arity=y_arity or detect_arity(yv),
                   names=(x, y, tuple(z)))


def read_csv(path, x: str, y: str, z: Sequence[str], **kwargs) -> Dataset:
    """Read a comma-separated UTF-8 file with a header row."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise IngestError("empty file: header row required")
        rows = list(reader)
    if not rows:
        raise IngestError("dataset has no rows")
    for name in [x, y, *z]:
        if name not in reader.fieldnames:
            raise IngestError(f"missing column {name!r}")
    return ingest(rows, x, y, z, **kwargs)


def rank_transform(values) -> np.ndarray:
    """
    Ranks 1..n with ties broken by original index order.

    >>> rank_transform([5, 5, 1])
    array([2, 3, 1])
    """
    v = np.asarray(values)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("expected a non-empty 1-d sequence")
    order = np.argsort(v, kind="stable")
    ranks = np.empty(v.size, dtype=np.int64)
    ranks[order] = np.arange(1, v.size + 1)
    return ranks


def rank_columns(z) -> np.ndarray:
    """Column-wise :func:`rank_transform` of a 2-d array."""
    z = np.asarray(z)
    order = np.argsort(z, axis=0, kind="stable")
    ranks = np.empty(z.shape, dtype=np.int64)
    np.put_along_axis(ranks, order,
                      np.arange(1, z.shape[0] + 1)[:, None], axis=0)
    return ranks


@dataclass(frozen=True)
class Node:
    """
    One node of a dyadic tree: samples with rank in ``(lo, hi]``.

    ``cut`` is the last rank sent to the left child (``None`` for leaves).
    """

    level: int
    pos: int
    lo: int
    hi: int
    cut: int | None
    indices: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return self.indices.size


@dataclass(frozen=True)
class DyadicTree:
    """
    Nested median-split partition of one variable.

    ``labels[l, i]`` is the position, among the ``2**l`` nodes of level
    ``l``, of the node containing sample ``i``.
    """

    depth: int
    levels: tuple
    labels: np.ndarray = field(repr=False)

    def node(self, level: int, pos: int) -> Node:
        return self.levels[level][pos]


def _split_sizes(m: int, binary_left: int | None) -> int:
    if binary_left is not None:
        return binary_left
    return (m + 1) // 2


def build_dyadic_tree(values, depth: int, arity: str = "continuous"
                      ) -> DyadicTree:
    """
    Recursive median splits of ``values`` down to ``depth`` levels.

    The depth is clamped to ``floor(log2 n)``. The left child of a node
    with ``m`` samples receives ``ceil(m / 2)`` of them in rank order.
    A binary variable always yields a depth-1 tree whose children are the
    two observed values (the right child may be empty).
    """
    v = np.asarray(values)
    n = v.size
    if n < 1:
        raise ValueError("values must be non-empty")
    if depth < 0:
        raise ValueError("depth must be non-negative")
    binary = arity == "binary"
    if binary:
        depth = 1
        n_low = int(np.count_nonzero(v == v.min()))
    else:
        depth = min(depth, int(math.floor(math.log2(n))))

    order = np.argsort(v, kind="stable")
    # rank-sorted position -> node position, refined level by level
    labels = np.zeros((depth + 1, n), dtype=np.int64)
    bounds = [(0, n)]
    levels = []
    for level in range(depth + 1):
        nodes = []
        child_bounds = []
        for pos, (lo, hi) in enumerate(bounds):
            members = np.sort(order[lo:hi])
            m = hi - lo
            if level < depth and m >= 2:
                cut = lo + _split_sizes(m, n_low if binary else None)
            elif level < depth:
                cut = hi
            else:
                cut = None
            nodes.append(Node(level, pos, lo, hi, cut, _frozen(members)))
            labels[level, order[lo:hi]] = pos
            if cut is not None:
                child_bounds.extend([(lo, cut), (cut, hi)])
        levels.append(tuple(nodes))
        bounds = child_bounds
    return DyadicTree(depth, tuple(levels), _frozen(labels))


@dataclass(frozen=True)
class Window:
    """Scanning window ``I x J`` with ``I`` in the X-tree and ``J`` in the Y-tree."""

    i_node: Node
    j_node: Node

    @property
    def levels(self) -> tuple[int, int]:
        return self.i_node.level, self.j_node.level

    @property
    def indices(self) -> np.ndarray:
        return np.intersect1d(self.i_node.indices, self.j_node.indices,
                              assume_unique=True)


def windows(xtree: DyadicTree, ytree: DyadicTree, l1: int, l2: int):
    """All windows of partition ``(l1, l2)`` in canonical (row-major) order."""
    return [Window(i, j) for i in xtree.levels[l1] for j in ytree.levels[l2]]


@dataclass(frozen=True)
class WindowTable:
    """
    Stratified 2x2 counts: ``cells[t] = (a, b, c, d)``.

    a = n(I_left, J_left), b = n(I_left, J_right),
    c = n(I_right, J_left), d = n(I_right, J_right).
    """

    cells: np.ndarray

    def __post_init__(self):
        cells = np.asarray(self.cells, dtype=np.int64)
        if cells.ndim == 1:
            cells = cells.reshape(1, 4)
        if cells.ndim != 2 or cells.shape[1] != 4 or cells.shape[0] < 1:
            raise ValueError("cells must have shape (T, 4) with T >= 1")
        if np.any(cells < 0):
            raise ValueError("cell counts must be non-negative")
        object.__setattr__(self, "cells", _frozen(cells))

    @property
    def strata_count(self) -> int:
        return self.cells.shape[0]

    @property
    def row1(self):
        return self.cells[:, 0] + self.cells[:, 1]

    @property
    def row2(self):
        return self.cells[:, 2] + self.cells[:, 3]

    @property
    def col1(self):
        return self.cells[:, 0] + self.cells[:, 2]

    @property
    def col2(self):
        return self.cells[:, 1] + self.cells[:, 3]

    @property
    def totals(self):
        return self.cells.sum(axis=1)

    @property
    def total(self) -> int:
        return int(self.cells.sum())


def quadrants(xtree: DyadicTree, ytree: DyadicTree, l1: int, l2: int
              ) -> np.ndarray:
    """Quadrant code 0..3 (a, b, c, d) of every sample within its level-(l1, l2) window."""
    xbit = xtree.labels[l1 + 1] & 1
    ybit = ytree.labels[l2 + 1] & 1
    return 2 * xbit + ybit


def tabulate_window(window: Window, strat, xtree: DyadicTree,
                    ytree: DyadicTree) -> WindowTable:
    """
    Count the window's samples by stratum and quadrant.

    ``strat`` must partition exactly the window's index set.
    """
    idx = window.indices
    if not np.array_equal(np.sort(strat.indices), idx):
        raise ValueError("stratification does not match the window's samples")
    l1, l2 = window.levels
    quad = quadrants(xtree, ytree, l1, l2)[strat.indices]
    cells = np.bincount(strat.labels * 4 + quad,
                        minlength=4 * strat.T).reshape(strat.T, 4)
    return WindowTable(cells)
