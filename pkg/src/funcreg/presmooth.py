"""Orthogonal-series reconstruction of curves observed with noise on a grid."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .funcgrid import (
    CoefVector,
    Grid,
    GridFunction,
    cosine_matrix,
    make_uniform_grid,
    read_matrix_csv,
    write_matrix_csv,
)


@dataclass(frozen=True, eq=False)
class NoisyCurve:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid.point_count,):
            raise ValueError("values do not match the observation grid")
        if not np.all(np.isfinite(values)):
            raise ValueError("observations must be finite")
        object.__setattr__(self, "values", values)


def default_smoothing_order(k: int) -> int:
    """``floor(k ** (1/3))``, computed exactly on integers."""
    if k < 8:
        raise ValueError("need at least 8 observation points")
    j = int(round(k ** (1 / 3)))
    while j**3 > k:
        j -= 1
    while (j + 1) ** 3 <= k:
        j += 1
    return j


def series_coefficients(values: np.ndarray, obs_grid: Grid, J_smooth: int) -> np.ndarray:
    """Quadrature coefficients on ``1, phi_1, ..., phi_J`` for each row of
    ``values``; column 0 is the constant term."""
    k = obs_grid.point_count
    if J_smooth < 0:
        raise ValueError("J_smooth must be nonnegative")
    if J_smooth >= k:
        raise ValueError(f"J_smooth={J_smooth} needs more than {k} observation points")
    basis = cosine_matrix(J_smooth, obs_grid, include_constant=True)
    return (np.atleast_2d(values) * obs_grid.weights) @ basis.T


def smooth_matrix(values: np.ndarray, obs_grid: Grid, J_smooth: int, target: Grid) -> np.ndarray:
    """Vectorized :func:`series_smooth` over the rows of ``values``."""
    coefs = series_coefficients(values, obs_grid, J_smooth)
    return coefs @ cosine_matrix(J_smooth, target, include_constant=True)


def series_smooth(curve: NoisyCurve, J_smooth: int, target: Grid) -> GridFunction:
    return GridFunction(target, smooth_matrix(curve.values, curve.grid, J_smooth, target)[0])


def series_fit(curve: NoisyCurve, J_smooth: int) -> CoefVector:
    coefs = series_coefficients(curve.values, curve.grid, J_smooth)[0]
    if J_smooth == 0:
        return CoefVector([0.0], const=coefs[0])
    return CoefVector(coefs[1:], const=coefs[0])


def read_noisy_curves(path: str | Path) -> list[NoisyCurve]:
    values = read_matrix_csv(path, min_columns=2)
    grid = make_uniform_grid(values.shape[1])
    return [NoisyCurve(grid, row) for row in values]


def write_noisy_curves(path: str | Path, curves: list[NoisyCurve]) -> None:
    write_matrix_csv(path, (c.values for c in curves))
