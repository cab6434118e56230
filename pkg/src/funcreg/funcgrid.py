"""Functions on [0, 1] sampled on a uniform grid, trapezoid quadrature and the
cosine orthonormal basis.

All inner products on a grid use the trapezoid weights, so with ``P`` points the
cosines ``sqrt(2) cos(j pi t)`` for ``1 <= j < P - 1`` are orthonormal to
rounding error (this is the orthogonality of the type-I DCT).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SQRT2 = np.sqrt(2.0)


class GridMismatchError(ValueError):
    """Raised when functions living on different grids are combined."""


class CsvFormatError(ValueError):
    """Malformed numeric CSV; ``line`` is 1-based."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class Grid:
    """Uniform grid ``t_p = p / (P - 1)`` on [0, 1] with trapezoid weights."""

    point_count: int

    def __post_init__(self):
        if int(self.point_count) != self.point_count or self.point_count < 2:
            raise ValueError(f"a grid needs at least 2 points, got {self.point_count}")

    @cached_property
    def points(self) -> np.ndarray:
        pts = np.arange(self.point_count, dtype=float) / (self.point_count - 1)
        pts.flags.writeable = False
        return pts

    @cached_property
    def weights(self) -> np.ndarray:
        h = 1.0 / (self.point_count - 1)
        w = np.full(self.point_count, h)
        w[0] = w[-1] = 0.5 * h
        w.flags.writeable = False
        return w

    def __len__(self) -> int:
        return self.point_count


def make_uniform_grid(P: int) -> Grid:
    return Grid(P)


@dataclass(frozen=True, eq=False)
class GridFunction:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.grid.point_count,):
            raise ValueError(
                f"expected {self.grid.point_count} values, got shape {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("grid function values must be finite")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    def __add__(self, other: GridFunction) -> GridFunction:
        _check_same_grid(self.grid, other.grid)
        return GridFunction(self.grid, self.values + other.values)

    def __sub__(self, other: GridFunction) -> GridFunction:
        _check_same_grid(self.grid, other.grid)
        return GridFunction(self.grid, self.values - other.values)

    def __mul__(self, scalar: float) -> GridFunction:
        return GridFunction(self.grid, self.values * float(scalar))

    __rmul__ = __mul__

    def __neg__(self) -> GridFunction:
        return GridFunction(self.grid, -self.values)

    def norm(self) -> float:
        return float(np.sqrt(inner_product(self, self)))


@dataclass(frozen=True)
class CoefVector:
    """Coefficients on ``phi_1, ..., phi_J`` plus an optional constant term.

    ``coeffs[j - 1]`` multiplies ``sqrt(2) cos(j pi t)``; ``const`` multiplies
    the constant function 1.
    """

    coeffs: np.ndarray
    const: float = 0.0

    def __post_init__(self):
        coeffs = np.atleast_1d(np.array(self.coeffs, dtype=float))
        if coeffs.ndim != 1 or coeffs.size < 1:
            raise ValueError("need at least one coefficient")
        if not (np.all(np.isfinite(coeffs)) and np.isfinite(self.const)):
            raise ValueError("coefficients must be finite")
        coeffs.flags.writeable = False
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "const", float(self.const))

    @classmethod
    def from_law(cls, law, J: int, const: float = 0.0) -> CoefVector:
        """Tabulate ``law(j)`` for ``j = 1..J``."""
        j = np.arange(1, J + 1, dtype=float)
        return cls(np.asarray(law(j), dtype=float), const)

    def __len__(self) -> int:
        return self.coeffs.size


def _check_same_grid(a: Grid, b: Grid) -> None:
    if a != b:
        raise GridMismatchError(
            f"grid mismatch: {a.point_count} points vs {b.point_count} points"
        )


def inner_product(f: GridFunction, g: GridFunction) -> float:
    _check_same_grid(f.grid, g.grid)
    return float(np.dot(f.grid.weights, f.values * g.values))


def cosine_matrix(J: int, grid: Grid, include_constant: bool = False) -> np.ndarray:
    """Rows ``sqrt(2) cos(j pi t)`` for ``j = 1..J`` (row 0 is 1 when
    ``include_constant``)."""
    start = 0 if include_constant else 1
    j = np.arange(start, J + 1, dtype=float)
    basis = SQRT2 * np.cos(np.pi * np.outer(j, grid.points))
    if include_constant:
        basis[0] = 1.0
    return basis


def cosine_basis(j: int, grid: Grid) -> GridFunction:
    if j < 0:
        raise ValueError("basis index must be nonnegative")
    if j == 0:
        return GridFunction(grid, np.ones(grid.point_count))
    return GridFunction(grid, SQRT2 * np.cos(j * np.pi * grid.points))


def synthesize(c: CoefVector, grid: Grid) -> GridFunction:
    values = c.coeffs @ cosine_matrix(len(c), grid) + c.const
    return GridFunction(grid, values)


def project(f: GridFunction, basis: Sequence[GridFunction]) -> CoefVector:
    """Quadrature coefficients of ``f`` against each member of ``basis``.

    The result carries no constant term; include ``cosine_basis(0, grid)`` in
    ``basis`` to recover one explicitly.
    """
    for b in basis:
        _check_same_grid(f.grid, b.grid)
    if not basis:
        raise ValueError("empty basis")
    B = np.vstack([b.values for b in basis])
    return CoefVector(B @ (f.grid.weights * f.values))


def stack_values(functions: Sequence[GridFunction]) -> tuple[Grid, np.ndarray]:
    """Collect functions sharing one grid into an ``(n, P)`` array."""
    if len(functions) == 0:
        raise ValueError("no functions given")
    grid = functions[0].grid
    for f in functions[1:]:
        _check_same_grid(grid, f.grid)
    return grid, np.vstack([f.values for f in functions])


# -- CSV --------------------------------------------------------------------


def read_matrix_csv(path: str | Path, min_columns: int = 1) -> np.ndarray:
    """Read a headerless numeric CSV with equal-length rows.

    Blank lines and lines starting with ``#`` are skipped.  Any unparsable
    field or ragged row raises :class:`CsvFormatError` naming the line.
    """
    rows: list[list[float]] = []
    width = None
    with open(path, newline="") as fh:
        for lineno, record in enumerate(csv.reader(fh), start=1):
            if not record or all(not x.strip() for x in record):
                continue
            if record[0].lstrip().startswith("#"):
                continue
            try:
                row = [float(x) for x in record]
            except ValueError:
                raise CsvFormatError("non-numeric field", lineno) from None
            if not all(np.isfinite(row)):
                raise CsvFormatError("non-finite value", lineno)
            if width is None:
                width = len(row)
                if width < min_columns:
                    raise CsvFormatError(
                        f"expected at least {min_columns} columns, got {width}", lineno
                    )
            elif len(row) != width:
                raise CsvFormatError(f"expected {width} columns, got {len(row)}", lineno)
            rows.append(row)
    if not rows:
        raise CsvFormatError("no data rows")
    return np.array(rows, dtype=float)


def write_matrix_csv(path: str | Path, rows: Iterable[Iterable[float]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row in rows:
            writer.writerow([fmt_float(v) for v in row])


def fmt_float(v: float) -> str:
    return repr(float(v))


def read_grid_functions(path: str | Path) -> list[GridFunction]:
    """One function per CSV row; the grid size is the column count."""
    values = read_matrix_csv(path, min_columns=2)
    grid = make_uniform_grid(values.shape[1])
    return [GridFunction(grid, row) for row in values]


def write_grid_functions(path: str | Path, functions: Sequence[GridFunction]) -> None:
    write_matrix_csv(path, (f.values for f in functions))
