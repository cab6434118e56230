"""Simulation lab: Karhunen-Loeve populations, the two threshold studies,
convergence-rate experiments and the two-point lower-bound numerics.

Every replicate draws from its own random stream keyed by
``(master seed, replicate index, role)``; results are aggregated in
replicate order, so tables do not depend on how many threads ran them.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .flr import (
    Dataset,
    Deterministic,
    RegimeParams,
    SpectralPath,
    Threshold,
    predict,
    slope_functional,
)
from .fpca import CovOperator, EigenSystem, perturbation_report, population_covariance
from .funcgrid import Grid, GridFunction, cosine_matrix, fmt_float, make_uniform_grid
from .presmooth import default_smoothing_order, smooth_matrix

logger = logging.getLogger(__name__)

DEFAULT_J = 50
DEFAULT_P = 201
STUDY_THRESHOLDS = (0.001, 0.01, 0.05, 0.1, 0.15, 0.2)

_ROLES = {"X": 0, "eps": 1, "obs": 2, "X_noisy": 3, "eps_noisy": 4}


def stream(seed: int, *key: int | str) -> np.random.Generator:
    """Independent generator for ``(seed, *key)``; string keys name a role."""
    spawn_key = tuple(_ROLES[k] if isinstance(k, str) else int(k) for k in key)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=spawn_key))


# -- populations ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PopulationSpec:
    """Gaussian predictor ``X = sum_j Z_j phi_j`` with ``Z_j ~ N(0, theta_j)``,
    slope ``b = sum_j b_j phi_j`` and prediction point ``x = sum_j x_j phi_j``,
    all truncated at ``J = len(theta)`` terms of the cosine basis."""

    theta: np.ndarray
    b_coeffs: np.ndarray
    x_coeffs: np.ndarray
    a: float = 0.0
    sigma: float = 0.0
    grid: Grid = field(default_factory=lambda: make_uniform_grid(DEFAULT_P))

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        b = np.asarray(self.b_coeffs, dtype=float)
        x = np.asarray(self.x_coeffs, dtype=float)
        if not (theta.shape == b.shape == x.shape) or theta.ndim != 1:
            raise ValueError("theta, b_coeffs and x_coeffs must have equal length")
        if np.any(theta < 0) or np.any(np.diff(theta) > 0):
            raise ValueError("theta must be nonnegative and nonincreasing")
        if not (math.isfinite(self.sigma) and self.sigma >= 0):
            raise ValueError("sigma must be finite and nonnegative")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "b_coeffs", b)
        object.__setattr__(self, "x_coeffs", x)

    @classmethod
    def from_laws(
        cls,
        theta: Callable[[np.ndarray], np.ndarray],
        b: Callable[[np.ndarray], np.ndarray],
        x: Callable[[np.ndarray], np.ndarray],
        *,
        a: float = 0.0,
        sigma: float = 0.0,
        J: int = DEFAULT_J,
        P: int = DEFAULT_P,
    ) -> PopulationSpec:
        j = np.arange(1, J + 1, dtype=float)
        return cls(theta(j), b(j), x(j), a=a, sigma=sigma, grid=make_uniform_grid(P))

    @property
    def J(self) -> int:
        return self.theta.size

    @cached_property
    def basis(self) -> np.ndarray:
        return cosine_matrix(self.J, self.grid)

    @cached_property
    def b(self) -> GridFunction:
        return GridFunction(self.grid, self.b_coeffs @ self.basis)

    @cached_property
    def x(self) -> GridFunction:
        return GridFunction(self.grid, self.x_coeffs @ self.basis)

    @cached_property
    def covariance(self) -> CovOperator:
        return population_covariance(self.theta, self.grid)

    def slope_oracle(self) -> float:
        """``<b, x>`` by quadrature on the analysis grid."""
        return float(np.dot(self.grid.weights * self.b.values, self.x.values))

    def oracle(self) -> float:
        return self.a + self.slope_oracle()

    def oracle_coefficients(self) -> float:
        return self.a + math.fsum(self.b_coeffs * self.x_coeffs)


def study1_spec(J: int = DEFAULT_J, P: int = DEFAULT_P) -> PopulationSpec:
    return PopulationSpec.from_laws(
        lambda j: 4.0 * j**-2, lambda j: j**-4, lambda j: j**-2, a=0.0, sigma=2.0, J=J, P=P
    )


def study2_spec(J: int = DEFAULT_J, P: int = DEFAULT_P, sigma: float = 1.0) -> PopulationSpec:
    """Rougher slope and prediction point; unit error variance."""
    return PopulationSpec.from_laws(
        lambda j: 4.0 * j**-2, lambda j: 10.0 * j**-2, lambda j: j**-1.6, a=0.0, sigma=sigma, J=J, P=P
    )


def regime_spec(regime: RegimeParams, sigma: float = 1.0, J: int = DEFAULT_J, P: int = DEFAULT_P) -> PopulationSpec:
    """Power-law population ``theta_j = C j^-alpha``, ``b_j = C1 j^-beta``,
    ``x_j = C2 j^-gamma``."""
    return PopulationSpec.from_laws(
        lambda j: regime.C * j**-regime.alpha,
        lambda j: regime.C1 * j**-regime.beta,
        lambda j: regime.C2 * j**-regime.gamma,
        sigma=sigma,
        J=J,
        P=P,
    )


def sample_scores(spec: PopulationSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """``(n, J)`` Karhunen-Loeve scores."""
    return rng.standard_normal((n, spec.J)) * np.sqrt(spec.theta)


def sample_X(spec: PopulationSpec, rng: np.random.Generator) -> GridFunction:
    return GridFunction(spec.grid, sample_scores(spec, 1, rng)[0] @ spec.basis)


def responses(spec: PopulationSpec, X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    signal = X @ (spec.grid.weights * spec.b.values)
    return spec.a + signal + spec.sigma * rng.standard_normal(X.shape[0])


def sample_dataset(spec: PopulationSpec, n: int, rng: np.random.Generator) -> Dataset:
    if n < 2:
        raise ValueError("need n >= 2")
    X = sample_scores(spec, n, rng) @ spec.basis
    return Dataset(spec.grid, X, responses(spec, X, rng))


# -- Monte Carlo tables ---------------------------------------------------


@dataclass(frozen=True)
class McConfig:
    """Monte Carlo settings.

    ``target`` picks the error measured at the prediction point: ``"slope"``
    compares ``<b_tilde, x>`` with ``<b, x>``; ``"conditional_mean"`` compares
    the full prediction ``a_hat + <b_tilde, x>`` with ``a + <b, x>``.

    ``J_smooth`` sets the presmoothing order of the noisy arm: ``"band"``
    keeps every frequency of the generating series (no smoothing bias),
    ``"cuberoot"`` uses ``floor(k ** (1/3))``, an integer fixes it.
    """

    n: int = 100
    reps: int = 500
    seed: int = 0
    thresholds: tuple[float, ...] = STUDY_THRESHOLDS
    noisy: bool = False
    k: int | None = None
    obs_noise_sd: float = 1.0
    J_smooth: int | str = "band"
    share_paths: bool = True
    target: str = "slope"
    check_perturbation: bool = False
    J_check: int = 5
    threads: int = 1

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if not self.thresholds or any(not t > 0 for t in self.thresholds):
            raise ValueError("thresholds must be positive")
        if self.target not in ("slope", "conditional_mean"):
            raise ValueError(f"unknown target {self.target!r}")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")
        if isinstance(self.J_smooth, str):
            if self.J_smooth not in ("band", "cuberoot"):
                raise ValueError(f"unknown smoothing order {self.J_smooth!r}")
        elif self.J_smooth < 0:
            raise ValueError("J_smooth must be nonnegative")
        object.__setattr__(self, "thresholds", tuple(float(t) for t in self.thresholds))

    @property
    def arm(self) -> str:
        return "noisy" if self.noisy else "continuous"


@dataclass(frozen=True)
class McRow:
    threshold: float
    ase: float
    mc_se: float
    mise: float
    mise_se: float
    mean_m: float


@dataclass(frozen=True)
class McTable:
    rows: tuple[McRow, ...]
    arm: str = "continuous"
    reps: int = 0
    perturbation_checked: int = 0
    perturbation_failures: int = 0

    def __getitem__(self, threshold: float) -> McRow:
        for row in self.rows:
            if math.isclose(row.threshold, threshold):
                return row
        raise KeyError(threshold)

    @property
    def thresholds(self) -> list[float]:
        return [r.threshold for r in self.rows]

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    def to_csv(self) -> str:
        lines = ["threshold,ase,mc_se,mise"]
        for r in self.rows:
            lines.append(",".join(fmt_float(v) for v in (r.threshold, r.ase, r.mc_se, r.mise)))
        return "\n".join(lines) + "\n"

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())


def read_mc_table(path: str | Path, arm: str = "continuous") -> McTable:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "threshold,ase,mc_se,mise":
        raise ValueError(f"{path}: unexpected header")
    rows = []
    for line in lines[1:]:
        if line.strip():
            t, ase, se, mise = (float(v) for v in line.split(","))
            rows.append(McRow(t, ase, se, mise, float("nan"), float("nan")))
    return McTable(tuple(rows), arm=arm)


@dataclass
class _RepResult:
    sq_err: np.ndarray
    ise: np.ndarray
    m: np.ndarray
    perturbation_ok: bool | None = None


def smoothing_order(choice: int | str, k: int, J: int) -> int:
    if choice == "band":
        return min(J, k - 1)
    if choice == "cuberoot":
        return default_smoothing_order(k)
    return int(choice)


def _noisy_curves(spec: PopulationSpec, Z: np.ndarray, cfg: McConfig, k: int, rng) -> np.ndarray:
    obs_grid = make_uniform_grid(k)
    J_smooth = smoothing_order(cfg.J_smooth, k, spec.J)
    observed = Z @ cosine_matrix(spec.J, obs_grid)
    observed = observed + cfg.obs_noise_sd * rng.standard_normal(observed.shape)
    return smooth_matrix(observed, obs_grid, J_smooth, spec.grid)


def check_perturbation(spec: PopulationSpec, X: np.ndarray, sys: EigenSystem, J_check: int) -> bool:
    """Whether both eigen-perturbation bounds hold for one sample matrix."""
    from .fpca import empirical_covariance

    Khat = empirical_covariance((spec.grid, X))
    report = perturbation_report(Khat, spec.covariance, sys, (spec.theta, spec.basis), J_check)
    return report.eigenvalue_bound_holds and report.eigenfunction_bound_holds


def _run_replicate(spec: PopulationSpec, cfg: McConfig, k: int, rep: int) -> _RepResult:
    rng_x = stream(cfg.seed, rep, "X")
    Z = sample_scores(spec, cfg.n, rng_x)
    X_true = Z @ spec.basis
    Y = responses(spec, X_true, stream(cfg.seed, rep, "eps"))
    if cfg.noisy:
        if not cfg.share_paths:
            Z = sample_scores(spec, cfg.n, stream(cfg.seed, rep, "X_noisy"))
            X_true = Z @ spec.basis
            Y = responses(spec, X_true, stream(cfg.seed, rep, "eps_noisy"))
        X = _noisy_curves(spec, Z, cfg, k, stream(cfg.seed, rep, "obs"))
    else:
        X = X_true

    path = SpectralPath(Dataset(spec.grid, X, Y))
    w = spec.grid.weights
    x = spec.x
    oracle = spec.oracle() if cfg.target == "conditional_mean" else spec.slope_oracle()
    sq_err, ise, ms = [], [], []
    for t in cfg.thresholds:
        fit = path.fit(Threshold(t))
        est = predict(fit, x) if cfg.target == "conditional_mean" else slope_functional(fit, x)
        sq_err.append((est - oracle) ** 2)
        d = fit.b_tilde.values - spec.b.values
        ise.append(float(np.dot(w * d, d)))
        ms.append(fit.m)
    ok = None
    if cfg.check_perturbation:
        ok = check_perturbation(spec, X, path.eigensystem, cfg.J_check)
    return _RepResult(np.array(sq_err), np.array(ise), np.array(ms, dtype=float), ok)


def _map_replicates(fn, reps: int, threads: int) -> list:
    if threads <= 1:
        return [fn(r) for r in range(reps)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(reps)))


def run_study(spec: PopulationSpec, cfg: McConfig, default_k: int) -> McTable:
    """Threshold sweep for one arm of a study."""
    k = cfg.k or default_k
    results = _map_replicates(lambda r: _run_replicate(spec, cfg, k, r), cfg.reps, cfg.threads)
    sq = np.vstack([r.sq_err for r in results])
    ise = np.vstack([r.ise for r in results])
    ms = np.vstack([r.m for r in results])
    root = math.sqrt(cfg.reps)
    ddof = 1 if cfg.reps > 1 else 0
    rows = tuple(
        McRow(
            threshold=t,
            ase=float(sq[:, i].mean()),
            mc_se=float(sq[:, i].std(ddof=ddof) / root),
            mise=float(ise[:, i].mean()),
            mise_se=float(ise[:, i].std(ddof=ddof) / root),
            mean_m=float(ms[:, i].mean()),
        )
        for i, t in enumerate(cfg.thresholds)
    )
    checked = [r.perturbation_ok for r in results if r.perturbation_ok is not None]
    return McTable(
        rows,
        arm=cfg.arm,
        reps=cfg.reps,
        perturbation_checked=len(checked),
        perturbation_failures=sum(not ok for ok in checked),
    )


def run_study1(cfg: McConfig) -> McTable:
    return run_study(study1_spec(), cfg, default_k=200)


def run_study2(cfg: McConfig) -> McTable:
    return run_study(study2_spec(), cfg, default_k=500)


# -- convergence rates ----------------------------------------------------


@dataclass(frozen=True)
class RateResult:
    regime: RegimeParams
    n_list: tuple[int, ...]
    m_list: tuple[int, ...]
    mse: np.ndarray
    mc_se: np.ndarray
    fitted_exponent: float
    theoretical_exponent: float
    branch: str

    def to_csv(self) -> str:
        from .flr import rate_tau

        lines = ["n,m,mse,mc_se,tau"]
        for n, m, mse, se in zip(self.n_list, self.m_list, self.mse, self.mc_se):
            tau = rate_tau(self.regime, n)
            lines.append(f"{n},{m},{fmt_float(mse)},{fmt_float(se)},{fmt_float(tau)}")
        return "\n".join(lines) + "\n"


def loglog_slope(n: Sequence[float], y: Sequence[float]) -> float:
    slope, _ = np.polyfit(np.log(np.asarray(n, dtype=float)), np.log(np.asarray(y, dtype=float)), 1)
    return float(slope)


def rate_point(
    spec: PopulationSpec,
    regime: RegimeParams,
    n: int,
    reps: int,
    rule=None,
    seed: int = 0,
    threads: int = 1,
) -> tuple[float, float, int]:
    """``(mse, mc_se, typical m)`` of ``<b_tilde, x>`` at one sample size."""
    rule = rule or Deterministic.from_regime(regime)
    oracle = spec.slope_oracle()

    def one(rep: int) -> tuple[float, int]:
        data = sample_dataset(spec, n, stream(seed, rep, "X", n))
        fit = SpectralPath(data, max_components=min(n, spec.grid.point_count)).fit(rule, regime)
        return (slope_functional(fit, spec.x) - oracle) ** 2, fit.m

    out = _map_replicates(one, reps, threads)
    errs = np.array([e for e, _ in out])
    se = errs.std(ddof=1 if reps > 1 else 0) / math.sqrt(reps)
    return float(errs.mean()), float(se), int(np.round(np.mean([m for _, m in out])))


def run_rate_experiment(
    regime: RegimeParams,
    n_list: Sequence[int],
    reps: int,
    rule=None,
    seed: int = 0,
    *,
    sigma: float = 1.0,
    J: int = DEFAULT_J,
    P: int = DEFAULT_P,
    threads: int = 1,
) -> RateResult:
    """Mean squared error of ``<b_tilde, x>`` for each ``n``, with the fitted
    log-log slope.  The default cut-off is the deterministic ``m0(n)``."""
    n_list = tuple(int(n) for n in n_list)
    if len(n_list) < 3:
        raise ValueError("need at least 3 sample sizes to fit an exponent")
    if reps < 1:
        raise ValueError("reps must be at least 1")
    spec = regime_spec(regime, sigma=sigma, J=J, P=P)
    points = [rate_point(spec, regime, n, reps, rule, seed, threads) for n in n_list]
    mse = np.array([p[0] for p in points])
    return RateResult(
        regime=regime,
        n_list=n_list,
        m_list=tuple(p[2] for p in points),
        mse=mse,
        mc_se=np.array([p[1] for p in points]),
        fitted_exponent=loglog_slope(n_list, mse),
        theoretical_exponent=regime.rate_exponent,
        branch=regime.branch,
    )


# -- lower bound ----------------------------------------------------------


class DivergentDistance(ArithmeticError):
    """``2 V_n >= sigma^2``: the chi-squared distance has infinite mean."""


@dataclass(frozen=True)
class LowerBoundReport:
    n: int
    nu: int
    T_B0: float
    T_B1: float
    V_n: float
    nV_n: float
    chi_sq_mean: float
    scaling_check: float

    @property
    def divergent(self) -> bool:
        return math.isinf(self.chi_sq_mean)

    def to_text(self) -> str:
        return "".join(f"{k}={fmt_float(v) if isinstance(v, float) else v}\n" for k, v in self.__dict__.items())


def integer_root(n: float, p: float) -> int:
    """Integer part of ``n ** (1/p)``, exact when ``n`` is a perfect power."""
    nu = int(math.floor(n ** (1.0 / p)))
    while (nu + 1) ** p <= n * (1 + 1e-12):
        nu += 1
    while nu > 0 and nu**p > n * (1 + 1e-12):
        nu -= 1
    return nu


def lower_bound_construct(
    regime: RegimeParams, n: int, sigma: float, allow_divergent: bool = False
) -> LowerBoundReport:
    """Two-point construction with ``theta_j = j^-alpha``, ``x_j = j^-gamma``,
    ``B0 = 0`` and ``B1 = sum_{nu < j <= 2 nu} j^-beta phi_j``.

    ``chi_sq_mean`` is the closed form ``(1 - 2 V_n / sigma^2)^(-n/2)`` of the
    expected chi-squared distance.  When ``2 V_n >= sigma^2`` that mean is
    infinite: :class:`DivergentDistance` is raised unless ``allow_divergent``,
    in which case it is reported as ``inf``.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if n < 1:
        raise ValueError("n must be positive")
    a, b, g = regime.alpha, regime.beta, regime.gamma
    nu = integer_root(n, a + 2 * b - 1)
    if nu < 1:
        raise ValueError(f"n={n} gives nu=0")
    j = np.arange(nu + 1, 2 * nu + 1, dtype=float)
    T_B1 = math.fsum(j ** -(b + g))
    V = math.fsum(j ** (-a - 2 * b))
    ratio = 2 * V / sigma**2
    if ratio >= 1:
        if not allow_divergent:
            raise DivergentDistance(f"2 V_n / sigma^2 = {ratio:.3g} >= 1 at n={n}")
        chi = math.inf
    else:
        chi = math.exp(-0.5 * n * math.log1p(-ratio))
    return LowerBoundReport(
        n=int(n),
        nu=nu,
        T_B0=0.0,
        T_B1=T_B1,
        V_n=V,
        nV_n=n * V,
        chi_sq_mean=chi,
        scaling_check=T_B1 * n ** ((b + g - 1) / (a + 2 * b - 1)),
    )


def lower_bound_functions(regime: RegimeParams, n: int, grid: Grid) -> tuple[GridFunction, GridFunction, GridFunction]:
    """``B0``, ``B1`` and ``x`` tabulated on ``grid``, for quadrature checks."""
    a, b, g = regime.alpha, regime.beta, regime.gamma
    nu = integer_root(n, a + 2 * b - 1)
    J = 2 * nu
    j = np.arange(1, J + 1, dtype=float)
    Phi = cosine_matrix(J, grid)
    b1 = np.where(j > nu, j**-b, 0.0)
    return (
        GridFunction(grid, np.zeros(grid.point_count)),
        GridFunction(grid, b1 @ Phi),
        GridFunction(grid, (j**-g) @ Phi),
    )
