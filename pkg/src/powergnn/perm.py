"""Permutations of cells and users, and executable PE/PI property checks.

Convention: a permutation is stored as a *target map*, ``mapping[i]`` is the
new position of element ``i``. Applying it to the rows of ``X`` (written
``Pi^T X``) gives ``Y`` with ``Y[mapping[i]] = X[i]``.

Permuting cells of a network moves whole row blocks of ``H`` (block sizes
travel with their cells) and the matching columns; permuting users inside
a cell only reorders rows within that block.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

DEFAULT_TOL = 1e-6


def _as_bijection(mapping, n: Optional[int] = None) -> np.ndarray:
    m = np.asarray(mapping, dtype=np.int64).ravel()
    if n is not None and m.size != n:
        raise ValueError(f"expected a permutation of {n} elements, got {m.size}")
    if not np.array_equal(np.sort(m), np.arange(m.size)):
        raise ValueError(f"not a bijection on 0..{m.size - 1}: {m.tolist()}")
    return m


def fisher_yates(n: int, rng: np.random.Generator) -> np.ndarray:
    a = np.arange(n)
    for i in range(n - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        a[i], a[j] = a[j], a[i]
    return a


def permute_rows(X, mapping) -> np.ndarray:
    """``Pi^T X`` for a target map; works on the leading axis."""
    X = np.asarray(X)
    out = np.empty_like(X)
    out[np.asarray(mapping)] = X
    return out


@dataclass(frozen=True, eq=False)
class CellPermutation:
    mapping: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mapping", _as_bijection(self.mapping))

    @property
    def size(self) -> int:
        return self.mapping.size

    @classmethod
    def identity(cls, n: int) -> "CellPermutation":
        return cls(np.arange(n))

    @classmethod
    def random(cls, n: int, rng: np.random.Generator) -> "CellPermutation":
        return cls(fisher_yates(n, rng))

    def inverse(self) -> "CellPermutation":
        inv = np.empty_like(self.mapping)
        inv[self.mapping] = np.arange(self.size)
        return CellPermutation(inv)

    def then(self, other: "CellPermutation") -> "CellPermutation":
        """Apply ``self`` first, then ``other``."""
        return CellPermutation(other.mapping[self.mapping])

    def apply(self, X, axis: int = 0) -> np.ndarray:
        X = np.moveaxis(np.asarray(X), axis, 0)
        if X.shape[0] != self.size:
            raise ValueError(f"axis has length {X.shape[0]}, permutation size {self.size}")
        return np.moveaxis(permute_rows(X, self.mapping), 0, axis)

    def is_identity(self) -> bool:
        return bool(np.array_equal(self.mapping, np.arange(self.size)))

    def __eq__(self, other):
        return isinstance(other, CellPermutation) and np.array_equal(self.mapping, other.mapping)


@dataclass(frozen=True, eq=False)
class WithinCellPermutations:
    per_cell: tuple

    def __post_init__(self):
        object.__setattr__(self, "per_cell", tuple(_as_bijection(p) for p in self.per_cell))

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(p.size for p in self.per_cell)

    @classmethod
    def identity(cls, sizes: Sequence[int]) -> "WithinCellPermutations":
        return cls(tuple(np.arange(n) for n in sizes))

    @classmethod
    def random(cls, sizes: Sequence[int], rng: np.random.Generator) -> "WithinCellPermutations":
        return cls(tuple(fisher_yates(n, rng) for n in sizes))

    def flat(self) -> np.ndarray:
        """Target map on the flattened users (cells stay in place)."""
        offs = np.concatenate([[0], np.cumsum(self.sizes)])
        return np.concatenate([offs[m] + p for m, p in enumerate(self.per_cell)]) if self.per_cell else np.arange(0)


@dataclass(frozen=True, eq=False)
class NestedPermutation:
    cells: CellPermutation
    within: WithinCellPermutations

    def __post_init__(self):
        if self.cells.size != len(self.within.per_cell):
            raise ValueError("cell permutation and within-cell list disagree on M")

    @property
    def sizes(self) -> tuple[int, ...]:
        return self.within.sizes

    @classmethod
    def identity(cls, sizes: Sequence[int]) -> "NestedPermutation":
        return cls(CellPermutation.identity(len(sizes)), WithinCellPermutations.identity(sizes))

    @classmethod
    def random(cls, sizes: Sequence[int], rng: np.random.Generator,
               within: bool = True) -> "NestedPermutation":
        cells = CellPermutation.random(len(sizes), rng)
        w = WithinCellPermutations.random(sizes, rng) if within else WithinCellPermutations.identity(sizes)
        return cls(cells, w)

    def permuted_sizes(self) -> tuple[int, ...]:
        return tuple(int(s) for s in self.cells.apply(np.asarray(self.sizes)))

    def then(self, other: "NestedPermutation") -> "NestedPermutation":
        """Apply ``self`` first, then ``other`` (defined on the permuted layout)."""
        if other.sizes != self.permuted_sizes():
            raise ValueError("second permutation does not act on the permuted layout")
        per = tuple(other.within.per_cell[q][self.within.per_cell[m]]
                    for m, q in enumerate(self.cells.mapping))
        return NestedPermutation(self.cells.then(other.cells), WithinCellPermutations(per))

    def apply(self, H) -> np.ndarray:
        """``Pi^T H Pi``: rows by the induced user map, columns by the cells."""
        H = np.asarray(H)
        rows = permute_rows(H, induced_row_perm(self, self.sizes))
        return self.cells.apply(rows, axis=1)


def induced_row_perm(p: NestedPermutation, cell_sizes: Sequence[int]) -> np.ndarray:
    """Target map on ``K = sum(cell_sizes)`` users: within-cell moves, then block moves."""
    sizes = tuple(int(s) for s in cell_sizes)
    if sizes != p.sizes:
        raise ValueError(f"cell sizes {sizes} do not match the within-cell permutations {p.sizes}")
    old = np.concatenate([[0], np.cumsum(sizes)])[:-1]
    new_sizes = p.permuted_sizes()
    new = np.concatenate([[0], np.cumsum(new_sizes)])[:-1]
    flat = np.empty(sum(sizes), dtype=np.int64)
    for m, q in enumerate(p.cells.mapping):
        flat[old[m]:old[m] + sizes[m]] = new[q] + p.within.per_cell[m]
    return flat


def max_abs_diff(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"output shapes differ: {a.shape} vs {b.shape}")
    return float(np.max(np.abs(a - b))) if a.size else 0.0


def check_1d_pe(f: Callable, X, p: CellPermutation, tol: float = DEFAULT_TOL) -> bool:
    """True iff ``Pi^T f(X) == f(Pi^T X)`` within ``tol`` (max abs)."""
    return max_abs_diff(p.apply(f(X)), f(p.apply(X))) <= tol


def check_1d_pi(f: Callable, X, p: CellPermutation, tol: float = DEFAULT_TOL) -> bool:
    """True iff ``f(X) == f(Pi^T X)`` within ``tol``."""
    return max_abs_diff(f(X), f(p.apply(X))) <= tol


def joint_pe_deviation(f: Callable, H, p: NestedPermutation, p_max=None) -> float:
    """Max abs deviation from ``Pi^T f(H) = f(Pi^T H Pi)``.

    ``f`` is called as ``f(H, cell_sizes)`` or, when ``p_max`` is given, as
    ``f(p_max, H, cell_sizes)`` with ``p_max`` permuted like the cells.
    """
    sizes, new_sizes = p.sizes, p.permuted_sizes()
    Hp = p.apply(H)
    if p_max is None:
        y, yp = f(H, sizes), f(Hp, new_sizes)
    else:
        y, yp = f(p_max, H, sizes), f(p.cells.apply(p_max), Hp, new_sizes)
    return max_abs_diff(p.cells.apply(y), yp)


def check_joint_pe(f: Callable, H, p: NestedPermutation, tol: float = DEFAULT_TOL, p_max=None) -> bool:
    return joint_pe_deviation(f, H, p, p_max) <= tol


def within_cell_deviation(f: Callable, H, w: WithinCellPermutations, p_max=None) -> float:
    sizes = w.sizes
    Hp = permute_rows(H, w.flat())
    if p_max is None:
        return max_abs_diff(f(H, sizes), f(Hp, sizes))
    return max_abs_diff(f(p_max, H, sizes), f(p_max, Hp, sizes))


def check_1d_pi_within_cell(f: Callable, H, w: WithinCellPermutations, tol: float = DEFAULT_TOL,
                            p_max=None) -> bool:
    """True iff ``f`` is unchanged when users are reordered inside their cells."""
    return within_cell_deviation(f, H, w, p_max) <= tol


def two_d_pe_deviation(f: Callable, H, rows, cols: CellPermutation, follows: str = "cols",
                       p_max=None, cell_sizes=None) -> float:
    """Deviation from ``Pi_o^T f(H) = f(Pi_1^T H Pi_2)`` with independent row/column moves.

    ``rows`` is a :class:`NestedPermutation` or a flat target map on the ``K``
    rows; ``cols`` permutes the ``M`` columns. ``follows`` picks which side's
    cell permutation ``Pi_o`` the output (and ``p_max``) must follow:
    ``"cols"`` (the base-station side) or ``"rows"`` (the cells of a nested
    row permutation).
    """
    H = np.asarray(H)
    if isinstance(rows, NestedPermutation):
        sizes = rows.sizes
        new_sizes = rows.permuted_sizes()
        flat = induced_row_perm(rows, sizes)
    else:
        sizes = tuple(cell_sizes) if cell_sizes is not None else None
        new_sizes = sizes
        flat = _as_bijection(rows, H.shape[0])
    if follows == "cols":
        out = cols
    elif follows == "rows":
        if not isinstance(rows, NestedPermutation):
            raise ValueError("follows='rows' needs a NestedPermutation on the rows")
        out = rows.cells
    else:
        raise ValueError("follows must be 'rows' or 'cols'")
    Hp = cols.apply(permute_rows(H, flat), axis=1)
    if p_max is None:
        y, yp = f(H, sizes), f(Hp, new_sizes)
    else:
        y, yp = f(p_max, H, sizes), f(out.apply(p_max), Hp, new_sizes)
    return max_abs_diff(out.apply(y), yp)


def check_2d_pe(f: Callable, H, rows, cols: CellPermutation, tol: float = DEFAULT_TOL,
                follows: str = "cols", p_max=None, cell_sizes=None) -> bool:
    return two_d_pe_deviation(f, H, rows, cols, follows, p_max, cell_sizes) <= tol
