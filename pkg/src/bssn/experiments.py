"""Data synthesis, parameter choice, baselines and metrics for the studies.

Random streams: every artifact draws from its own child of
``np.random.SeedSequence(seed)``, so changing one artifact's size never
shifts another's draws.  Deblurring uses child 0 for the noise.  Regression
uses child 0 for the design matrix, 1 for the support positions, 2 for the
regular noise, 3 for the outlier mask and 4 for the outlier noise.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import WeightedL1Problem, residual_map, soft_threshold
from .errors import ConfigError, ConvergenceError, LineSearchError, NumericalError
from .newton import SolveResult, SolverConfig, solve
from .objectives import (
    DeblurProblem,
    RegressionProblem,
    build_blur_operator,
    forward_blur_simpson,
    quadratic_objective,
    robust_objective,
    sparse_test_image,
)

log = logging.getLogger(__name__)

SUPPORT_WEIGHTS = (-33.0, -7.0, -0.1, 1.0, 2.0, 13.0, 20.0, 50.0)
DEFAULT_RIDGE = 1e-6

__all__ = [
    "SUPPORT_WEIGHTS",
    "DEFAULT_RIDGE",
    "DiscrepancyConfig",
    "DiscrepancyResult",
    "RegressionMetrics",
    "PathPoint",
    "streams",
    "add_relative_noise",
    "make_deblur_instance",
    "deblur_problem",
    "discrepancy_principle",
    "make_regression_instance",
    "regression_problem",
    "regression_metrics",
    "regularization_path",
    "solve_or_record",
    "select_weight",
    "ista_oracle",
    "power_iteration",
]


def streams(seed: int, count: int) -> list:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


@dataclass
class DiscrepancyConfig:
    w_init: float = 0.9**10
    q: float = 0.9
    tau: float = 2.0
    max_reductions: int = 200

    def __post_init__(self):
        if not 0 < self.q < 1:
            raise ConfigError(f"q must lie in (0, 1), got {self.q}")
        if self.tau < 1:
            raise ConfigError(f"tau must be >= 1, got {self.tau}")
        if not self.w_init > 0:
            raise ConfigError(f"w_init must be positive, got {self.w_init}")


@dataclass
class DiscrepancyResult:
    w: float
    u: np.ndarray
    result: SolveResult
    reductions: int
    path: list = field(default_factory=list)


@dataclass
class RegressionMetrics:
    std_error: float
    r_squared: float
    support_size: int


@dataclass
class PathPoint:
    w: float
    u: np.ndarray
    metrics: RegressionMetrics | None
    converged: bool
    n_steps: int


def add_relative_noise(f, level: float, seed=0) -> np.ndarray:
    """Add Gaussian noise rescaled so that ``||e|| = level * ||f||`` exactly."""
    f = np.asarray(f, dtype=float)
    if level < 0:
        raise ValueError("noise level must be nonnegative")
    if level == 0:
        return f.copy()
    norm_f = np.linalg.norm(f)
    if norm_f == 0:
        raise ValueError("cannot add relative noise to a zero signal")
    rng = seed if isinstance(seed, np.random.Generator) else streams(seed, 1)[0]
    e = rng.standard_normal(f.shape)
    return f + e * (level * norm_f / np.linalg.norm(e))


def make_deblur_instance(
    side: int, blur_length: float = 0.1, noise_level: float = 0.05, seed: int = 0, dense: bool = False
) -> DeblurProblem:
    """Sparse test image, Simpson-blurred data and relative Gaussian noise."""
    u_true = sparse_test_image(side)
    f = forward_blur_simpson(side, blur_length, u_true)
    f_delta = add_relative_noise(f, noise_level, streams(seed, 1)[0])
    k = build_blur_operator(side, blur_length, dense=dense)
    return DeblurProblem(side, blur_length, k, f_delta, noise_level, f, u_true)


def deblur_problem(dp: DeblurProblem, w: float, gamma: float, ridge: float = DEFAULT_RIDGE) -> WeightedL1Problem:
    obj = quadratic_objective(dp.k_matrix, dp.f_delta, ridge)
    return WeightedL1Problem(obj, w, gamma=gamma, n=dp.side**2)


def discrepancy_principle(
    problem_factory: Callable[[float], WeightedL1Problem],
    data_mismatch: Callable[[np.ndarray], float],
    dconf: DiscrepancyConfig,
    target: float,
    config: SolverConfig | None = None,
    u0=None,
) -> DiscrepancyResult:
    """Shrink ``w`` geometrically until ``data_mismatch(u_w) <= target``.

    Each solve starts from the previous minimizer.
    """
    w = dconf.w_init
    u = u0
    path = []
    for i in range(dconf.max_reductions + 1):
        problem = problem_factory(w)
        res = solve(problem, u, config)
        if not res.converged:
            raise ConvergenceError(f"solver did not converge at w = {w:.6g} ({res.reason})")
        u = res.u_star
        mismatch = data_mismatch(u)
        path.append((w, mismatch, res.n_steps))
        log.info("discrepancy: w=%.6g mismatch=%.6g target=%.6g steps=%d", w, mismatch, target, res.n_steps)
        if mismatch <= target:
            return DiscrepancyResult(w, u, res, i, path)
        w *= dconf.q
    raise ConvergenceError(f"discrepancy principle not met after {dconf.max_reductions} reductions")


def make_regression_instance(
    m: int,
    n: int,
    support_weights: Sequence[float] = SUPPORT_WEIGHTS,
    outlier_fraction: float = 0.1,
    seed: int = 0,
    outlier_std: float = math.sqrt(50.0),
    rho: float = 1.0,
) -> RegressionProblem:
    """Gaussian design, sparse ground truth, unit noise plus outliers."""
    if len(support_weights) > n:
        raise ValueError("more support weights than coefficients")
    g_design, g_support, g_noise, g_mask, g_out = streams(seed, 5)
    A = g_design.standard_normal((m, n))
    u_true = np.zeros(n)
    u_true[np.sort(g_support.choice(n, len(support_weights), replace=False))] = support_weights
    e = g_noise.standard_normal(m)
    n_out = int(math.floor(outlier_fraction * m))
    outliers = np.sort(g_mask.permutation(m)[:n_out])
    e[outliers] = outlier_std * g_out.standard_normal(n_out)
    return RegressionProblem(A, A @ u_true + e, rho, outlier_fraction, u_true, outliers)


def regression_problem(reg: RegressionProblem, w: float, gamma: float = 10.0) -> WeightedL1Problem:
    return WeightedL1Problem(robust_objective(reg), w, gamma=gamma, n=reg.a_rows.shape[1])


def regression_metrics(reg: RegressionProblem, u_w) -> RegressionMetrics:
    """Standard error and adjusted-style R^2 of a fitted coefficient vector."""
    A, y = reg.a_rows, reg.y
    m, n = A.shape
    if m <= n + 1:
        raise ValueError("need m > n + 1 for the standard error")
    rss = float(np.sum((A @ u_w - y) ** 2))
    tss = float(np.sum((y.mean() - y) ** 2))
    sigma = math.sqrt(rss / (m - n - 1))
    r2 = 1.0 - (rss / (m - n - 1)) / (tss / (m - 1))
    return RegressionMetrics(sigma, r2, int(np.count_nonzero(u_w)))


def solve_or_record(problem: WeightedL1Problem, u0=None, config: SolverConfig | None = None) -> SolveResult:
    """Like :func:`solve`, but a numerical breakdown yields a failed result.

    Used by sweeps, where one bad parameter value should not end the sweep.
    The failed result has a NaN solution and no records.
    """
    try:
        return solve(problem, u0, config)
    except (NumericalError, LineSearchError) as exc:
        log.warning("solve failed: %s", exc)
        return SolveResult(np.full(problem.n, np.nan), [], False, f"failed: {exc}")


def regularization_path(
    problem_factory: Callable[[float], WeightedL1Problem],
    weights: Sequence[float],
    reg: RegressionProblem | None = None,
    config: SolverConfig | None = None,
    u0=None,
    warm_start: bool = True,
) -> list:
    """Solve for each ``w`` in increasing order, warm-starting by default."""
    if any(b < a for a, b in zip(weights, weights[1:])):
        raise ValueError("weights must be increasing")
    points = []
    u = u0
    for w in weights:
        problem = problem_factory(w)
        res = solve_or_record(problem, u if warm_start else u0, config)
        if not res.converged:
            log.warning("path: no convergence at w=%.6g (%s)", w, res.reason)
        metrics = regression_metrics(reg, res.u_star) if reg is not None and res.converged else None
        points.append(PathPoint(w, res.u_star, metrics, res.converged, res.n_steps))
        if res.converged:
            u = res.u_star
    return points


def select_weight(points: Sequence[PathPoint], support_size: int) -> PathPoint:
    """Path point with the wanted support size and minimal standard error.

    If no converged point has exactly ``support_size`` nonzeros, the closest
    size is used instead.
    """
    pool = [p for p in points if p.converged and p.metrics is not None]
    if not pool:
        raise ValueError("no converged path points with metrics")
    gap = min(abs(p.metrics.support_size - support_size) for p in pool)
    pool = [p for p in pool if abs(p.metrics.support_size - support_size) == gap]
    return min(pool, key=lambda p: p.metrics.std_error)


def power_iteration(op, n: int, iters: int = 200, seed: int = 0) -> float:
    """Largest eigenvalue of a symmetric PSD operator (matrix or sparse)."""
    v = np.random.default_rng(seed).standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        wv = op @ v
        lam_new = float(np.linalg.norm(wv))
        if lam_new == 0:
            return 0.0
        v = wv / lam_new
        if abs(lam_new - lam) <= 1e-12 * lam_new:
            lam = lam_new
            break
        lam = lam_new
    return lam


def ista_oracle(
    problem: WeightedL1Problem,
    u0=None,
    step: float | None = None,
    tol: float = 1e-12,
    max_iter: int = 500_000,
) -> np.ndarray:
    """Proximal-gradient iteration ``u <- S_{s w}(u - s grad g(u))``.

    Default step is ``0.9 / c2`` with ``c2`` from power iteration on the
    Hessian at the start point.  Stops when successive iterates differ by
    less than ``tol`` in the 2-norm.
    """
    u = np.zeros(problem.n) if u0 is None else np.array(u0, dtype=float)
    if not np.any(residual_map(problem, u)):
        return u
    if step is None:
        c2 = power_iteration(problem.hessian(u), problem.n)
        step = 0.9 / c2
    thresh = step * problem.weights
    for _ in range(max_iter):
        u_new = soft_threshold(u - step * problem.gradient(u), thresh)
        if np.linalg.norm(u_new - u) < tol:
            return u_new
        u = u_new
    raise ConvergenceError(f"ISTA did not converge in {max_iter} iterations")
