"""Functional linear regression by spectral truncation.

The model is ``Y = a + <b, X> + eps``.  The slope is estimated on the leading
``m`` empirical eigenfunctions ``phi_j`` of the predictor covariance as
``b_j = g_j / theta_j``, where ``g`` is the pointwise covariance between
``X(t)`` and ``Y``.  Predictions are ``a_hat + <b_tilde, x>``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .fpca import EigenSystem, _as_matrix, eigendecompose, empirical_covariance
from .funcgrid import Grid, GridFunction, _check_same_grid, fmt_float

ILL_CONDITIONED_RTOL = 1e-12

BRANCH_PARAMETRIC = "alpha+1 < 2*gamma"
BRANCH_BOUNDARY = "alpha+1 = 2*gamma"
BRANCH_POLYNOMIAL = "alpha+1 > 2*gamma"


class IllConditionedComponent(ArithmeticError):
    """A retained eigenvalue is numerically zero, so ``g_j / theta_j`` is
    meaningless.  ``j`` is the 1-based index of the offending component."""

    def __init__(self, j: int, theta_j: float, theta_1: float):
        self.j = j
        super().__init__(
            f"component {j} has eigenvalue {theta_j:.3g} < {ILL_CONDITIONED_RTOL:g} * "
            f"{theta_1:.3g}; lower the cut-off below {j}"
        )


class RegimeWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    grid: Grid
    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        Y = np.asarray(self.Y, dtype=float).ravel()
        if X.shape[1] != self.grid.point_count:
            raise ValueError("X rows do not match the grid")
        if X.shape[0] != Y.size:
            raise ValueError(f"{X.shape[0]} curves but {Y.size} responses")
        if Y.size < 2:
            raise ValueError("need at least 2 observations")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise ValueError("data must be finite")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @classmethod
    def from_functions(cls, X: Sequence[GridFunction], Y) -> Dataset:
        grid, values = _as_matrix(X)
        return cls(grid, values, Y)

    @property
    def n(self) -> int:
        return self.Y.size

    @property
    def curves(self) -> list[GridFunction]:
        return [GridFunction(self.grid, row) for row in self.X]


# -- regime ---------------------------------------------------------------


@dataclass(frozen=True)
class RegimeParams:
    """Smoothness exponents of the covariance (alpha), slope (beta) and
    prediction point (gamma), plus the constants of the theory.

    ``C3`` is the constant that replaces the slope when its norm exceeds
    ``C4 * n**C5``.
    """

    alpha: float
    beta: float
    gamma: float
    C: float = 1.0
    C1: float = 1.0
    C2: float = 1.0
    C3: float = 0.0
    C4: float = 1.0
    C5: float = 2.0
    strict: bool = False

    def __post_init__(self):
        problems = []
        if not self.alpha > 1:
            problems.append(f"alpha={self.alpha} must exceed 1")
        if not self.beta > 1:
            problems.append(f"beta={self.beta} must exceed 1")
        if not self.gamma > 0.5:
            problems.append(f"gamma={self.gamma} must exceed 1/2")
        for name in ("C", "C1", "C2", "C4", "C5"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be positive")
        if not math.isfinite(self.C3):
            problems.append("C3 must be finite")
        if problems:
            msg = "; ".join(problems)
            if self.strict:
                raise ValueError(msg)
            warnings.warn(f"outside the theory's range: {msg}", RegimeWarning, stacklevel=3)
        elif self.beta < self.alpha + 2:
            warnings.warn(
                f"beta={self.beta} < alpha+2: the upper-bound rate is not guaranteed",
                RegimeWarning,
                stacklevel=3,
            )

    @property
    def branch(self) -> str:
        lhs, rhs = self.alpha + 1, 2 * self.gamma
        if math.isclose(lhs, rhs, rel_tol=1e-12, abs_tol=1e-12):
            return BRANCH_BOUNDARY
        return BRANCH_PARAMETRIC if lhs < rhs else BRANCH_POLYNOMIAL

    @property
    def rate_exponent(self) -> float:
        """Power of ``n`` in the rate, ignoring the log factor on the boundary."""
        if self.branch == BRANCH_POLYNOMIAL:
            return -2 * (self.beta + self.gamma - 1) / (self.alpha + 2 * self.beta - 1)
        return -1.0


def rate_tau(regime: RegimeParams, n: float) -> float:
    if n < 2:
        raise ValueError("n must be at least 2")
    branch = regime.branch
    if branch == BRANCH_PARAMETRIC:
        return 1.0 / n
    if branch == BRANCH_BOUNDARY:
        return math.log(n) / n
    a, b, g = regime.alpha, regime.beta, regime.gamma
    return n ** (-2 * (b + g - 1) / (a + 2 * b - 1))


def deterministic_cutoff_raw(alpha: float, beta: float, gamma: float, n: float) -> float:
    lhs, rhs = alpha + 1, 2 * gamma
    if math.isclose(lhs, rhs, rel_tol=1e-12, abs_tol=1e-12):
        return (n / math.log(n)) ** (1 / (alpha + 2 * beta - 1))
    if lhs < rhs:
        return n ** (1 / (2 * (beta + gamma - 1)))
    return n ** (1 / (alpha + 2 * beta - 1))


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


# -- cut-off rules --------------------------------------------------------


@dataclass(frozen=True)
class Threshold:
    """Keep component j while ``theta_j >= t``."""

    t: float

    def __post_init__(self):
        if not self.t > 0:
            raise ValueError("threshold must be positive")

    def threshold(self, n: int) -> float:
        return self.t

    def select(self, eigenvalues: np.ndarray, n: int) -> int:
        return int(np.count_nonzero(np.asarray(eigenvalues) >= self.threshold(n)))


@dataclass(frozen=True)
class ScaledThreshold:
    """Threshold ``C * n**-c`` with ``0 < c <= 1/2``."""

    C: float = 1.0
    c: float = 0.5

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError("C must be positive")
        if not 0 < self.c <= 0.5:
            raise ValueError("c must lie in (0, 1/2]")

    def threshold(self, n: int) -> float:
        return self.C * n ** (-self.c)

    def select(self, eigenvalues: np.ndarray, n: int) -> int:
        return Threshold(self.threshold(n)).select(eigenvalues, n)


@dataclass(frozen=True)
class Deterministic:
    """Cut-off ``m0(n)`` set by the smoothness exponents, rounded half-up and
    floored at 1."""

    alpha: float
    beta: float
    gamma: float

    @classmethod
    def from_regime(cls, regime: RegimeParams) -> Deterministic:
        return cls(regime.alpha, regime.beta, regime.gamma)

    def m0(self, n: int) -> int:
        return max(1, _round_half_up(deterministic_cutoff_raw(self.alpha, self.beta, self.gamma, n)))

    def select(self, eigenvalues: np.ndarray, n: int) -> int:
        return self.m0(n)


@dataclass(frozen=True)
class Fixed:
    m: int

    def __post_init__(self):
        if self.m < 0:
            raise ValueError("m must be nonnegative")

    def select(self, eigenvalues: np.ndarray, n: int) -> int:
        return min(self.m, len(eigenvalues))


CutoffRule = Threshold | ScaledThreshold | Deterministic | Fixed


def cutoff(sys: EigenSystem | np.ndarray, rule: CutoffRule, n: int) -> int:
    vals = sys.eigenvalues if isinstance(sys, EigenSystem) else np.asarray(sys)
    return rule.select(vals, n)


# -- estimation -------------------------------------------------------------


def estimate_g(data: Dataset) -> GridFunction:
    if data.n < 2:
        raise ValueError("need at least 2 observations")
    Xc = data.X - data.X.mean(axis=0)
    Yc = data.Y - data.Y.mean()
    return GridFunction(data.grid, Yc @ Xc / data.n)


@dataclass(frozen=True, eq=False)
class SlopeFit:
    eigensystem: EigenSystem
    m: int
    b_coeffs: np.ndarray
    intercept: float
    b_hat: GridFunction
    b_tilde: GridFunction
    slope_norm: float
    truncated_flag: bool
    n: int = 0
    x_mean: GridFunction | None = None
    y_mean: float = 0.0

    @property
    def grid(self) -> Grid:
        return self.eigensystem.grid

    @property
    def phi(self) -> np.ndarray:
        """Retained eigenfunctions as rows."""
        return self.eigensystem.vectors[: self.m]

    def summary(self) -> dict[str, str]:
        return {
            "n": str(self.n),
            "grid_points": str(self.grid.point_count),
            "m": str(self.m),
            "intercept": fmt_float(self.intercept),
            "slope_norm": fmt_float(self.slope_norm),
            "truncated": "true" if self.truncated_flag else "false",
            "b_tilde_constant": fmt_float(self.b_tilde.values[0]) if self.truncated_flag else "",
            "y_mean": fmt_float(self.y_mean),
        }


class SpectralPath:
    """Eigensystem and score summaries of one dataset, shared by every cut-off.

    Building this once and calling :meth:`fit` for several cut-offs avoids
    repeating the eigendecomposition during threshold sweeps.
    """

    def __init__(self, data: Dataset, max_components: int | None = None):
        self.data = data
        r = min(data.n, data.grid.point_count)
        if max_components is not None:
            r = min(r, max_components)
        self.eigensystem = eigendecompose(empirical_covariance((data.grid, data.X)), r)
        self.g = estimate_g(data)
        self.g_coeffs = self.eigensystem.scores(self.g.values)[0]
        self.x_mean = data.X.mean(axis=0)
        self.y_mean = float(data.Y.mean())

    def cutoff(self, rule: CutoffRule) -> int:
        return cutoff(self.eigensystem, rule, self.data.n)

    def fit(self, rule: CutoffRule | int, regime: RegimeParams | None = None) -> SlopeFit:
        regime = regime or _DEFAULT_REGIME
        n = self.data.n
        m = rule if isinstance(rule, int) else self.cutoff(rule)
        sys = self.eigensystem
        m = min(m, len(sys))
        theta = sys.eigenvalues
        grid = self.data.grid
        if m > 0:
            floor = ILL_CONDITIONED_RTOL * theta[0]
            if not theta[m - 1] > floor:
                bad = int(np.flatnonzero(theta[:m] <= floor)[0]) + 1
                raise IllConditionedComponent(bad, float(theta[bad - 1]), float(theta[0]))
        b_coeffs = self.g_coeffs[:m] / theta[:m]
        b_hat = GridFunction(grid, b_coeffs @ sys.vectors[:m])
        slope_norm = b_hat.norm()
        truncated = not slope_norm <= regime.C4 * n**regime.C5
        b_tilde = GridFunction(grid, np.full(grid.point_count, regime.C3)) if truncated else b_hat
        intercept = self.y_mean - float(np.dot(grid.weights * b_hat.values, self.x_mean))
        return SlopeFit(
            eigensystem=sys,
            m=m,
            b_coeffs=b_coeffs,
            intercept=intercept,
            b_hat=b_hat,
            b_tilde=b_tilde,
            slope_norm=slope_norm,
            truncated_flag=truncated,
            n=n,
            x_mean=GridFunction(grid, self.x_mean),
            y_mean=self.y_mean,
        )


_DEFAULT_REGIME = RegimeParams(alpha=2.0, beta=4.0, gamma=2.0)


def fit(data: Dataset, rule: CutoffRule, regime: RegimeParams | None = None) -> SlopeFit:
    return SpectralPath(data).fit(rule, regime)


def slope_functional(fit: SlopeFit, x: GridFunction) -> float:
    """``<b_tilde, x>``, evaluated in coefficient form unless truncation fired."""
    _check_same_grid(fit.grid, x.grid)
    if fit.truncated_flag:
        return float(np.dot(fit.grid.weights * fit.b_tilde.values, x.values))
    xbar = fit.eigensystem.scores(x.values)[0, : fit.m]
    return float(np.dot(fit.b_coeffs, xbar))


def predict(fit: SlopeFit, x: GridFunction) -> float:
    return fit.intercept + slope_functional(fit, x)


# -- serialization --------------------------------------------------------


def write_fit(out_dir: str | Path, fit: SlopeFit, extra: dict[str, str] | None = None) -> None:
    """Write ``fit_summary.txt``, ``fit_components.csv`` (j, theta_j, b_j) and
    ``eigenfunctions.csv`` (one retained eigenfunction per row)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = fit.summary()
    summary.update(extra or {})
    with open(out / "fit_summary.txt", "w") as fh:
        for key, value in summary.items():
            fh.write(f"{key}={value}\n")
    with open(out / "fit_components.csv", "w") as fh:
        fh.write("j,theta,b_coef\n")
        for j in range(fit.m):
            theta = fit.eigensystem.eigenvalues[j]
            fh.write(f"{j + 1},{fmt_float(theta)},{fmt_float(fit.b_coeffs[j])}\n")
    with open(out / "eigenfunctions.csv", "w") as fh:
        for row in fit.phi:
            fh.write(",".join(fmt_float(v) for v in row) + "\n")


def read_summary(path: str | Path) -> dict[str, str]:
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"{path}: expected key=value, got {line!r}")
            out[key.strip()] = value.strip()
    return out


@dataclass(frozen=True)
class LoadedFit:
    """The parts of a written fit needed for prediction."""

    grid: Grid
    intercept: float
    b_coeffs: np.ndarray
    phi: np.ndarray
    truncated: bool
    b_tilde_constant: float
    summary: dict

    def predict(self, x: GridFunction) -> float:
        _check_same_grid(self.grid, x.grid)
        if self.truncated:
            return self.intercept + self.b_tilde_constant * float(np.sum(self.grid.weights * x.values))
        xbar = self.phi @ (self.grid.weights * x.values) if self.b_coeffs.size else np.empty(0)
        return self.intercept + float(np.dot(self.b_coeffs, xbar))


def read_fit(fit_dir: str | Path) -> LoadedFit:
    from .fpca import read_matrix_csv_with_header
    from .funcgrid import read_matrix_csv

    d = Path(fit_dir)
    summary = read_summary(d / "fit_summary.txt")
    grid = Grid(int(summary["grid_points"]))
    m = int(summary["m"])
    comps = read_matrix_csv_with_header(d / "fit_components.csv")
    if m:
        phi = read_matrix_csv(d / "eigenfunctions.csv")
    else:
        phi = np.empty((0, grid.point_count))
    if comps.shape[0] != m or phi.shape != (m, grid.point_count):
        raise ValueError(f"{d}: fit files are inconsistent with m={m}")
    truncated = summary.get("truncated") == "true"
    return LoadedFit(
        grid=grid,
        intercept=float(summary["intercept"]),
        b_coeffs=comps[:, 2] if m else np.empty(0),
        phi=phi,
        truncated=truncated,
        b_tilde_constant=float(summary["b_tilde_constant"]) if truncated else 0.0,
        summary=summary,
    )
