"""Empirical covariance operators and their quadrature-weighted eigensystems."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .funcgrid import (
    Grid,
    GridFunction,
    _check_same_grid,
    cosine_matrix,
    fmt_float,
    read_matrix_csv,
    stack_values,
    write_matrix_csv,
)

logger = logging.getLogger(__name__)

TIE_RTOL = 1e-10


class NumericFailure(RuntimeError):
    """Eigen solver failure; ``residual`` is the largest residual norm seen."""

    def __init__(self, message: str, residual: float = float("nan")):
        self.residual = residual
        super().__init__(f"{message} (residual norm {residual:.3g})")


class EigenvalueTieWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class CovOperator:
    """Kernel ``K(t_p, t_q)`` of a covariance operator tabulated on a grid."""

    grid: Grid
    kernel: np.ndarray

    def __post_init__(self):
        K = np.array(self.kernel, dtype=float)
        P = self.grid.point_count
        if K.shape != (P, P):
            raise ValueError(f"kernel must be {P}x{P}, got {K.shape}")
        if not np.all(np.isfinite(K)):
            raise ValueError("kernel entries must be finite")
        scale = max(np.max(np.abs(K)), 1.0)
        if np.max(np.abs(K - K.T)) > 1e-10 * scale:
            raise ValueError("kernel is not symmetric")
        K.flags.writeable = False
        object.__setattr__(self, "kernel", K)

    def hs_distance(self, other: CovOperator) -> float:
        """Hilbert-Schmidt norm of ``self - other`` under the quadrature."""
        _check_same_grid(self.grid, other.grid)
        w = self.grid.weights
        D = self.kernel - other.kernel
        return float(np.sqrt(np.einsum("p,q,pq->", w, w, D * D)))


@dataclass(frozen=True, eq=False)
class EigenSystem:
    """Eigenvalues in nonincreasing order and quadrature-orthonormal
    eigenfunctions, stored as rows of ``vectors``."""

    grid: Grid
    eigenvalues: np.ndarray
    vectors: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.eigenvalues, dtype=float)
        vecs = np.asarray(self.vectors, dtype=float).reshape(vals.size, -1)
        if vecs.shape[1] != self.grid.point_count:
            raise ValueError("eigenfunction length does not match the grid")
        if np.any(np.diff(vals) > 0):
            raise ValueError("eigenvalues must be nonincreasing")
        object.__setattr__(self, "eigenvalues", vals)
        object.__setattr__(self, "vectors", vecs)

    def __len__(self) -> int:
        return self.eigenvalues.size

    @property
    def eigenfunctions(self) -> list[GridFunction]:
        return [GridFunction(self.grid, v) for v in self.vectors]

    def scores(self, values: np.ndarray) -> np.ndarray:
        """Quadrature coefficients of each row of ``values`` on every
        eigenfunction; shape ``(rows, r)``."""
        return (np.atleast_2d(values) * self.grid.weights) @ self.vectors.T

    def gram(self) -> np.ndarray:
        return (self.vectors * self.grid.weights) @ self.vectors.T

    def reconstruct(self) -> np.ndarray:
        return (self.vectors.T * self.eigenvalues) @ self.vectors


@dataclass(frozen=True)
class PerturbationReport:
    delta_norm: float
    eigenvalue_gaps: float
    aligned_eigenfunction_errors: tuple[float, ...]
    spacings: tuple[float, ...] = ()

    @property
    def eigenvalue_bound_holds(self) -> bool:
        return self.eigenvalue_gaps <= self.delta_norm + 1e-6

    @property
    def eigenfunction_bound_holds(self) -> bool:
        worst = max(self.aligned_eigenfunction_errors, default=0.0)
        return worst <= np.sqrt(8.0) * self.delta_norm + 1e-6


def _as_matrix(samples) -> tuple[Grid, np.ndarray]:
    if isinstance(samples, tuple) and len(samples) == 2 and isinstance(samples[0], Grid):
        grid, values = samples
        values = np.atleast_2d(np.asarray(values, dtype=float))
        if values.shape[1] != grid.point_count:
            raise ValueError("sample matrix width does not match the grid")
        return grid, values
    return stack_values(list(samples))


def empirical_covariance(samples: Sequence[GridFunction] | tuple[Grid, np.ndarray]) -> CovOperator:
    """Sample covariance kernel with divisor ``n``.

    ``samples`` is a list of grid functions, or a ``(grid, array)`` pair with
    one sample per row.
    """
    if not isinstance(samples, tuple) and len(samples) == 0:
        raise ValueError("need at least one sample")
    grid, X = _as_matrix(samples)
    Xc = X - X.mean(axis=0)
    K = Xc.T @ Xc / X.shape[0]
    return CovOperator(grid, 0.5 * (K + K.T))


def population_covariance(theta, grid: Grid, J: int | None = None) -> CovOperator:
    """``sum_{j <= J} theta_j phi_j(u) phi_j(v)`` for the cosine basis."""
    theta = np.asarray(getattr(theta, "coeffs", theta), dtype=float)
    if J is not None:
        theta = theta[:J]
    if np.any(theta < 0):
        raise ValueError("eigenvalues must be nonnegative")
    Phi = cosine_matrix(theta.size, grid)
    K = (Phi.T * theta) @ Phi
    return CovOperator(grid, 0.5 * (K + K.T))


def eigendecompose(op: CovOperator, max_components: int | None = None) -> EigenSystem:
    """Eigenpairs of the integral operator with kernel ``op.kernel``.

    Solves the symmetric problem for ``W^1/2 K W^1/2`` and maps eigenvectors
    back through ``W^-1/2`` so they are orthonormal under the quadrature.
    Negative eigenvalues from rounding are clipped to zero.
    """
    grid = op.grid
    P = grid.point_count
    r = P if max_components is None else max(0, min(int(max_components), P))
    s = np.sqrt(grid.weights)
    A = op.kernel * s[:, None] * s[None, :]
    try:
        vals, vecs = np.linalg.eigh(A)
    except np.linalg.LinAlgError as exc:
        raise NumericFailure(f"symmetric eigensolver failed: {exc}") from exc
    if not (np.all(np.isfinite(vals)) and np.all(np.isfinite(vecs))):
        resid = float("inf")
        raise NumericFailure("symmetric eigensolver returned non-finite output", resid)
    order = np.argsort(vals)[::-1][:r]
    vals = vals[order]
    vecs = vecs[:, order]
    scale = max(float(np.max(np.abs(A))), np.finfo(float).tiny)
    resid = float(np.max(np.linalg.norm(A @ vecs - vecs * vals, axis=0), initial=0.0))
    if resid > 1e-8 * scale * P:
        raise NumericFailure("eigenpairs failed the residual check", resid)
    vals = np.clip(vals, 0.0, None)
    _warn_on_ties(vals)
    return EigenSystem(grid, vals, (vecs / s[:, None]).T)


def _warn_on_ties(vals: np.ndarray) -> None:
    if vals.size < 2 or vals[0] <= 0:
        return
    gaps = -np.diff(vals)
    positive = vals[1:] > TIE_RTOL * vals[0]
    tied = np.flatnonzero((gaps < TIE_RTOL * vals[0]) & positive)
    if tied.size:
        j = int(tied[0]) + 1
        msg = f"eigenvalues {j} and {j + 1} are tied to within {TIE_RTOL:g} of the largest"
        logger.warning(msg)
        warnings.warn(msg, EigenvalueTieWarning, stacklevel=3)


def sign_align(sys: EigenSystem, reference: Sequence[GridFunction] | np.ndarray) -> EigenSystem:
    """Flip each eigenfunction whose inner product with its reference is negative.

    Only the first ``len(reference)`` eigenfunctions are considered; a zero
    inner product leaves the sign alone.
    """
    if isinstance(reference, np.ndarray):
        ref = np.atleast_2d(reference)
    else:
        if reference:
            _, ref = stack_values(list(reference))
            _check_same_grid(sys.grid, reference[0].grid)
        else:
            ref = np.empty((0, sys.grid.point_count))
    k = min(len(sys), ref.shape[0])
    w = sys.grid.weights
    dots = np.einsum("jp,p,jp->j", sys.vectors[:k], w, ref[:k])
    scale = np.sqrt(np.einsum("jp,p,jp->j", sys.vectors[:k], w, sys.vectors[:k]))
    scale *= np.sqrt(np.einsum("jp,p,jp->j", ref[:k], w, ref[:k]))
    # inner products at rounding level count as zero
    signs = np.ones(len(sys))
    signs[:k] = np.where(dots < -1e-12 * scale, -1.0, 1.0)
    return EigenSystem(sys.grid, sys.eigenvalues, sys.vectors * signs[:, None])


def perturbation_report(
    Khat: CovOperator,
    Ktrue: CovOperator,
    sys_hat: EigenSystem,
    true_eigs: tuple[np.ndarray, np.ndarray | Sequence[GridFunction]],
    J_check: int,
) -> PerturbationReport:
    """Compare an estimated eigensystem with the true one.

    ``true_eigs`` is ``(theta, phi)``; ``phi`` is either a list of grid
    functions or an ``(r, P)`` array.  ``theta`` must reach ``J_check + 1`` so
    that the spacing ``theta_j - theta_{j+1}`` is defined for every checked j.
    """
    theta, phi = true_eigs
    theta = np.asarray(theta, dtype=float)
    if not isinstance(phi, np.ndarray):
        _, phi = stack_values(list(phi))
    if J_check < 1 or J_check > len(sys_hat) or J_check > phi.shape[0]:
        raise ValueError(f"J_check={J_check} exceeds the available components")
    if theta.size < J_check + 1:
        raise ValueError("need J_check + 1 true eigenvalues to form spacings")
    _check_same_grid(Khat.grid, Ktrue.grid)
    _check_same_grid(Khat.grid, sys_hat.grid)

    delta = Khat.hs_distance(Ktrue)
    gaps = np.abs(sys_hat.eigenvalues[:J_check] - theta[:J_check])
    aligned = sign_align(sys_hat, phi[:J_check])
    diff = aligned.vectors[:J_check] - phi[:J_check]
    errs = np.sqrt(np.einsum("jp,p,jp->j", diff, Khat.grid.weights, diff))
    spacing = np.minimum.accumulate(theta[:J_check] - theta[1 : J_check + 1])
    return PerturbationReport(
        delta_norm=delta,
        eigenvalue_gaps=float(gaps.max()),
        aligned_eigenfunction_errors=tuple(float(v) for v in spacing * errs),
        spacings=tuple(float(v) for v in spacing),
    )


# -- CSV --------------------------------------------------------------------


def write_kernel_csv(path: str | Path, op: CovOperator) -> None:
    write_matrix_csv(path, op.kernel)


def read_kernel_csv(path: str | Path) -> CovOperator:
    K = read_matrix_csv(path, min_columns=2)
    if K.shape[0] != K.shape[1]:
        raise ValueError(f"kernel CSV must be square, got {K.shape}")
    return CovOperator(Grid(K.shape[0]), K)


def write_eigen_csv(values_path: str | Path, functions_path: str | Path, sys: EigenSystem) -> None:
    with open(values_path, "w") as fh:
        fh.write("j,eigenvalue\n")
        for j, v in enumerate(sys.eigenvalues, start=1):
            fh.write(f"{j},{fmt_float(v)}\n")
    write_matrix_csv(functions_path, sys.vectors)


def read_eigen_csv(values_path: str | Path, functions_path: str | Path) -> EigenSystem:
    table = read_matrix_csv_with_header(values_path)
    vecs = read_matrix_csv(functions_path, min_columns=2)
    return EigenSystem(Grid(vecs.shape[1]), table[:, 1], vecs)


def read_matrix_csv_with_header(path: str | Path) -> np.ndarray:
    """Numeric CSV whose first line is a header row."""
    with open(path) as fh:
        header = fh.readline()
        if not header.strip():
            raise ValueError(f"{path}: missing header")
        rows = [line for line in fh if line.strip()]
    if not rows:
        return np.empty((0, header.count(",") + 1))
    return np.array([[float(x) for x in line.split(",")] for line in rows])
