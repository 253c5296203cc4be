"""Finite-difference derivatives on arbitrary 1D grids.

The derivatives ``u_j = f^(j)(x_k)`` for ``j = 1..p`` are found from the small
system ``C X D u = Cbar f`` where ``Cbar`` holds regular unit-step stencils,
``C`` is ``Cbar`` without its center column, ``X`` is the Vandermonde matrix of
signed distances to the center and ``D = diag(1/j!)``.  On an equispaced grid
``C X D`` is diagonal and the classical stencils are recovered.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import factorial
from typing import Sequence

import numpy as np

from .errors import InvalidConfiguration, InvalidInput, NumericalFailure

# CXD is at most ~10x10; anything worse than this is not a usable stencil
_COND_LIMIT = 1e13


def fornberg_weights(x0, points: Sequence, m: int) -> list[list]:
    """Finite-difference weights for derivatives ``0..m`` at ``x0``.

    Fornberg's recursion.  With integer or :class:`~fractions.Fraction`
    inputs the arithmetic is exact.

    Returns
    -------
    list of list
        ``c[k][i]`` is the weight of ``points[i]`` for the ``k``-th
        derivative.  Each row is exact for polynomials of degree
        ``len(points) - 1``.
    """
    x = list(points)
    n = len(x) - 1
    one = Fraction(1) if not isinstance(x0, float) else 1.0
    c = [[0 * one] * (n + 1) for _ in range(m + 1)]
    c[0][0] = one
    c1 = one
    c4 = x[0] - x0
    for i in range(1, n + 1):
        mn = min(i, m)
        c2 = one
        c5 = c4
        c4 = x[i] - x0
        for j in range(i):
            c3 = x[i] - x[j]
            c2 = c2 * c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[k][i] = c1 * (k * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2
            for k in range(mn, 0, -1):
                c[k][j] = (c4 * c[k][j] - k * c[k - 1][j]) / c3
            c[0][j] = c4 * c[0][j] / c3
        c1 = c2
    return c


def accuracy_of(weights: Sequence, offsets: Sequence, q: int, max_check: int = 12) -> int:
    """Accuracy order of a unit-step weight row for the ``q``-th derivative.

    The row is exact for monomials ``x^m`` with ``m <= d``; the accuracy is
    ``d - q + 1``.  Returns 0 when the row is not even consistent.
    """
    d = -1
    for m in range(0, q + max_check + 1):
        got = sum(w * Fraction(o) ** m for w, o in zip(weights, offsets))
        want = factorial(q) if m == q else 0
        if got != want:
            break
        d = m
    return max(d - q + 1, 0)


def regular_weights(q: int, r: int, offsets: Sequence[int]) -> tuple[Fraction, ...]:
    """Unit-step weights for the ``q``-th derivative at offset 0.

    All offsets are used, so the row is exact for degree ``len(offsets)-1``
    and possibly higher when the offsets are symmetric.

    Raises
    ------
    InvalidConfiguration
        If the offsets repeat or cannot deliver accuracy ``r``.
    """
    offs = [Fraction(o) for o in offsets]
    if len(set(offs)) != len(offs):
        raise InvalidConfiguration(f"offsets must be distinct, got {list(offsets)}")
    if q < 0 or r < 1:
        raise InvalidConfiguration(f"need q >= 0 and r >= 1, got q={q}, r={r}")
    if len(offs) < q + 1:
        raise InvalidConfiguration(
            f"{len(offs)} offsets cannot approximate derivative {q}")
    row = fornberg_weights(Fraction(0), offs, q)[q]
    acc = accuracy_of(row, offs, q)
    if acc < r:
        raise InvalidConfiguration(
            f"offsets {list(offsets)} give accuracy {acc} for derivative {q}, "
            f"need {r}")
    return tuple(row)


@dataclass(frozen=True)
class RegularStencilTable:
    """Regular-grid rows for derivatives ``1..p`` on integer offsets.

    Attributes
    ----------
    full_rows : tuple of tuple of Fraction
        The ``p x n`` matrix ``Cbar``.
    offsets : tuple of int
        Integer offsets, one per column.
    center : int
        Column index of offset 0.
    orders : tuple of int
        Accuracy of each row.
    """

    q: int
    r: int
    offsets: tuple[int, ...]
    full_rows: tuple[tuple[Fraction, ...], ...]
    orders: tuple[int, ...]
    center: int

    @property
    def p(self) -> int:
        return len(self.full_rows)

    @property
    def cbar(self) -> np.ndarray:
        return np.array([[float(w) for w in row] for row in self.full_rows])

    @property
    def reduced_rows(self) -> tuple[tuple[Fraction, ...], ...]:
        c = self.center
        return tuple(row[:c] + row[c + 1:] for row in self.full_rows)

    @property
    def c(self) -> np.ndarray:
        return np.delete(self.cbar, self.center, axis=1)

    @property
    def factorial_diag(self) -> tuple[Fraction, ...]:
        return tuple(Fraction(1, factorial(j)) for j in range(1, self.p + 1))

    @property
    def d(self) -> np.ndarray:
        return np.diag([float(v) for v in self.factorial_diag])


def build_stencil_table(q: int, r: int, offsets: Sequence[int]) -> RegularStencilTable:
    """Rows of ``Cbar`` for ``p = r+q-1`` derivatives.

    The row for derivative ``j`` must be accurate to order ``r+q-j`` so that
    every term of the truncation error is ``O(h^r)`` in the ``q``-th
    derivative.
    """
    offsets = tuple(int(o) for o in offsets)
    if 0 not in offsets:
        raise InvalidConfiguration("offsets must contain the center 0")
    if list(offsets) != sorted(offsets):
        raise InvalidConfiguration("offsets must be increasing")
    p = r + q - 1
    rows, orders = [], []
    for j in range(1, p + 1):
        need = r + q - j
        try:
            row = regular_weights(j, need, offsets)
        except InvalidConfiguration as exc:
            raise InvalidConfiguration(f"row for derivative {j}: {exc}") from None
        rows.append(row)
        orders.append(accuracy_of(row, offsets, j))
    return RegularStencilTable(q, r, offsets, tuple(rows), tuple(orders),
                               offsets.index(0))


@dataclass(frozen=True)
class Grid1D:
    """Strictly increasing points with a marked evaluation index."""

    points: np.ndarray
    center_index: int

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or len(pts) < 2:
            raise InvalidInput("grid needs at least two points")
        if not np.all(np.diff(pts) > 0):
            raise InvalidInput("grid points must be strictly increasing")
        if not 0 <= self.center_index < len(pts):
            raise InvalidInput(f"center index {self.center_index} out of range")
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def offsets(self) -> tuple[int, ...]:
        k = self.center_index
        return tuple(range(-k, self.n - k))

    @property
    def distances(self) -> np.ndarray:
        """Signed distances of the non-center points to the center."""
        d = self.points - self.points[self.center_index]
        return np.delete(d, self.center_index)


@dataclass(frozen=True)
class DerivativeSet:
    """Derivative estimates ``u_j ~ f^(j)(x_k)`` for ``j = 1..p``."""

    values: np.ndarray
    orders: tuple[int, ...] = field(default=())

    def __len__(self):
        return len(self.values)

    def __getitem__(self, j):
        """1-based access: ``ds[j]`` is the ``j``-th derivative."""
        return self.values[j - 1]


def build_vandermonde(grid: Grid1D, p: int) -> np.ndarray:
    """``X[i, j-1] = (x_i - x_k)^j`` over the non-center points."""
    d = grid.distances
    return d[:, None] ** np.arange(1, p + 1)[None, :]


def jacobi_precondition(x: np.ndarray, scale: float | None = None):
    """Scale column ``j`` of ``X`` by ``1/s^j``.

    Parameters
    ----------
    x : ndarray
        Vandermonde matrix whose first column holds the signed distances.
    scale : float, optional
        The representative length ``s``; defaults to the largest distance.

    Returns
    -------
    xs : ndarray
        Scaled matrix ``X K^{-1}``.
    k : ndarray
        Diagonal of ``K`` (entries ``s^j``).
    """
    s = float(np.max(np.abs(x[:, 0]))) if scale is None else float(scale)
    if not s > 0 or not np.isfinite(s):
        raise InvalidInput("zero preconditioner scale (coincident grid points)")
    k = s ** np.arange(1, x.shape[1] + 1, dtype=float)
    return x / k[None, :], k


def solve_small(m: np.ndarray, rhs: np.ndarray, what: str = "local system"):
    """Solve a small dense system by QR, failing loudly when singular."""
    cond = np.linalg.cond(m)
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        raise NumericalFailure(f"{what} is singular (cond ~ {cond:.3g})", condition=cond)
    qm, rm = np.linalg.qr(m)
    return np.linalg.solve(rm, qm.T @ rhs)


def derivative_weights(grid: Grid1D, q: int, r: int, precondition: bool = True):
    """Weights of every derivative ``1..p`` as functionals of the samples.

    Returns
    -------
    weights : ndarray, shape (p, n)
        ``weights @ f`` gives the derivative estimates.
    table : RegularStencilTable
    """
    p = r + q - 1
    if grid.n < p + 1:
        raise InvalidConfiguration(f"{grid.n} points cannot resolve p={p} derivatives")
    table = build_stencil_table(q, r, grid.offsets)
    x = build_vandermonde(grid, p)
    if precondition:
        x, k = jacobi_precondition(x)
    else:
        k = np.ones(p)
    m = table.c @ x @ table.d
    w = solve_small(m, table.cbar)
    return w / k[:, None], table


def differentiate_1d(grid: Grid1D, values, q: int, r: int,
                     precondition: bool = True) -> DerivativeSet:
    """Estimate ``f^(j)(x_k)`` for ``j = 1..r+q-1`` from samples on ``grid``.

    Examples
    --------
    >>> g = Grid1D(np.array([-2., -1., 0., 1., 2.]) / 8, 2)
    >>> ds = differentiate_1d(g, 3 * g.points + 1, q=1, r=4)
    >>> round(ds[1], 12)
    3.0
    """
    f = np.asarray(values, dtype=float)
    if f.shape != (grid.n,):
        raise InvalidInput(f"expected {grid.n} samples, got shape {f.shape}")
    w, table = derivative_weights(grid, q, r, precondition)
    orders = tuple(r + q - j for j in range(1, table.p + 1))
    return DerivativeSet(w @ f, orders)
