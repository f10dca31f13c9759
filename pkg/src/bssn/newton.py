"""B-semismooth Newton solvers: BSSN, modBSSN and their hybrid.

Each outer step classifies the coordinates of the current iterate, eliminates
the active block of the Hessian by a Schur complement, solves the remaining
SPD linear complementarity problem, recovers the Newton direction and damps
it with an Armijo rule on ``Theta = ||F||^2``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import (
    IndexPartition,
    IndexSets,
    WeightedL1Problem,
    _residual_from_grad,
    classify,
    tikhonov_value,
)
from .errors import ConfigError, LineSearchError, NumericalError
from .lcp import LcpInstance, LcpSolution, solve_lcp

log = logging.getLogger(__name__)

__all__ = [
    "VARIANTS",
    "SolverConfig",
    "IterationRecord",
    "SolveResult",
    "ReducedLcp",
    "assemble_reduced_lcp",
    "newton_direction",
    "armijo_search",
    "solve",
    "quadratic_rate_diagnostic",
    "write_history_csv",
    "HISTORY_COLUMNS",
]

VARIANTS = ("bssn", "modbssn", "hybrid")
HISTORY_COLUMNS = ("j", "residual_norm", "objective", "step", "lcp_size", "sle_size", "sle_count")


@dataclass
class SolverConfig:
    """Parameters of the outer Newton iteration.

    ``gamma`` overrides the problem's own scaling when given.
    """

    gamma: float | None = None
    armijo_sigma: float = 0.01
    armijo_beta: float = 0.5
    tol: float = 1e-7
    variant: str = "modbssn"
    j_max: float = 250
    t_min: float = 1e-5
    max_outer: int = 500
    max_backtracks: int = 60
    lcp_tol: float = 1e-7
    divergence_cap: float = 1e12
    store_iterates: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not 0 < self.armijo_sigma < 0.5:
            raise ConfigError(f"armijo_sigma must lie in (0, 0.5), got {self.armijo_sigma}")
        if not 0 < self.armijo_beta < 1:
            raise ConfigError(f"armijo_beta must lie in (0, 1), got {self.armijo_beta}")
        if not self.tol > 0:
            raise ConfigError(f"tol must be positive, got {self.tol}")
        if self.gamma is not None and not self.gamma > 0:
            raise ConfigError(f"gamma must be positive, got {self.gamma}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.max_outer < 0 or self.max_backtracks < 1:
            raise ConfigError("max_outer must be >= 0 and max_backtracks >= 1")


@dataclass
class IterationRecord:
    """One row of the iteration history.

    Row ``j`` holds ``||F(u_j)||`` and ``J(u_j)`` together with the data of
    the step that produced ``u_j``; row 0 has no step data.
    """

    j: int
    residual_norm: float
    objective: float
    step: float | None = None
    lcp_size: int | None = None
    sle_size: int | None = None
    sle_count: int | None = None
    variant_active: str | None = None
    backtracks: int | None = None
    lcp_solver: str | None = None


@dataclass
class SolveResult:
    u_star: np.ndarray
    records: list
    converged: bool
    reason: str = ""
    switch_step: int | None = None
    iterates: list = field(default_factory=list)
    directions: list = field(default_factory=list)

    @property
    def n_steps(self) -> int:
        return max(len(self.records) - 1, 0)

    @property
    def unit_steps(self) -> int:
        return sum(1 for r in self.records[1:] if r.step == 1.0)

    @property
    def residual_norm(self) -> float:
        return self.records[-1].residual_norm if self.records else math.nan


class _Factor:
    """Cholesky (dense) or LU (sparse) factorization of ``M_AA``."""

    def __init__(self, block):
        self.size = block.shape[0]
        self.count = 0
        if self.size == 0:
            return
        try:
            if sp.issparse(block):
                self._lu = spla.splu(sp.csc_matrix(block))
                self._solve = self._lu.solve
            else:
                cf = sla.cho_factor(block, check_finite=False)
                self._solve = lambda rhs: sla.cho_solve(cf, rhs, check_finite=False)
        except (sla.LinAlgError, RuntimeError) as exc:
            raise NumericalError(f"active Hessian block is singular or indefinite: {exc}") from exc

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        if self.size == 0:
            return np.zeros_like(rhs)
        self.count += 1 if rhs.ndim == 1 else rhs.shape[1]
        out = self._solve(rhs)
        if not np.all(np.isfinite(out)):
            raise NumericalError("non-finite solution of the active linear system")
        return out


def _block(mat, rows, cols):
    if sp.issparse(mat):
        return mat[rows][:, cols]
    return mat[np.ix_(rows, cols)]


def _dense(block) -> np.ndarray:
    return block.toarray() if sp.issparse(block) else np.asarray(block)


@dataclass
class ReducedLcp:
    """Reduced LCP plus the pieces needed to recover the Newton direction.

    ``w_cols`` is ``M_AA^{-1} M_{A,L}`` for the LCP block ``L = P u Q`` and
    ``base`` is ``M_AA^{-1}(-F_A/gamma + M_AO u_O)``.
    """

    instance: LcpInstance
    sets: IndexSets
    base: np.ndarray
    w_cols: np.ndarray
    sle_count: int

    @property
    def lcp_size(self) -> int:
        return self.instance.size

    @property
    def sle_size(self) -> int:
        return self.sets.active.size


def assemble_reduced_lcp(
    problem: WeightedL1Problem,
    u,
    partition: IndexPartition,
    use_modified: bool,
    hessian=None,
) -> ReducedLcp:
    """Build ``N`` and ``z`` by block elimination of the active set.

    One factorization of ``M_AA`` serves all ``m + 1`` right-hand sides
    (``m`` LCP columns and one constant column).
    """
    u = problem._check(u)
    gamma = problem.gamma
    M = problem.hessian(u) if hessian is None else hessian
    sets = partition.sets(use_modified)
    A, O, P, Q = sets
    L = np.concatenate([P, Q])
    F = partition.residual
    sign = np.concatenate([np.ones(P.size), -np.ones(Q.size)])

    factor = _Factor(_block(M, A, A))
    rhs0 = -F[A] / gamma + _block(M, A, O) @ u[O]
    if L.size:
        m_al = _dense(_block(M, A, L))
        sol = factor.solve(np.column_stack([m_al, rhs0])) if A.size else np.zeros((0, L.size + 1))
        w_cols, base = sol[:, :-1], sol[:, -1]
        m_la = m_al.T
        schur = _dense(_block(M, L, L)) - m_la @ w_cols
        schur = 0.5 * (schur + schur.T)
        n_mat = gamma * (sign[:, None] * schur * sign[None, :])
        inner = gamma * (m_la @ base - _block(M, L, O) @ u[O] - schur @ u[L]) + F[L]
        z_vec = sign * inner
    else:
        base = factor.solve(rhs0)
        w_cols = np.zeros((A.size, 0))
        n_mat = np.zeros((0, 0))
        z_vec = np.zeros(0)
    back_map = [(int(k), "plus") for k in P] + [(int(k), "minus") for k in Q]
    return ReducedLcp(LcpInstance(n_mat, z_vec, back_map), sets, base, w_cols, factor.count)


def newton_direction(
    problem: WeightedL1Problem,
    u,
    partition: IndexPartition,
    lcp_solution: LcpSolution,
    use_modified: bool,
    reduced: ReducedLcp | None = None,
) -> np.ndarray:
    """Recover the Newton direction from the LCP solution ``x``.

    No further linear solves are needed when ``reduced`` comes from
    :func:`assemble_reduced_lcp` at the same point.
    """
    u = problem._check(u)
    if reduced is None:
        reduced = assemble_reduced_lcp(problem, u, partition, use_modified)
    A, O, P, Q = reduced.sets
    x = lcp_solution.x
    d = np.empty_like(u)
    d[O] = -u[O]
    d[P] = x[: P.size] - u[P]
    d[Q] = -x[P.size:] - u[Q]
    L = np.concatenate([P, Q])
    d[A] = reduced.base - reduced.w_cols @ d[L] if L.size else reduced.base
    return d


def _trial(problem, u, d, t):
    v = u + t * d
    grad = problem.gradient(v)
    r = _residual_from_grad(problem, v, grad)
    return v, grad, r, float(r @ r)


def _line_search(problem, u, d, theta, config: SolverConfig):
    beta, sigma = config.armijo_beta, config.armijo_sigma
    t = 1.0
    for l in range(config.max_backtracks + 1):
        v, grad, r, theta_v = _trial(problem, u, d, t)
        if theta_v <= (1.0 - 2.0 * sigma * t) * theta:
            return t, l, v, grad, r, theta_v
        t *= beta
    raise LineSearchError(
        f"Armijo search failed after {config.max_backtracks} backtracks "
        f"(Theta = {theta:.3e}); direction is not a descent direction"
    )


def armijo_search(problem: WeightedL1Problem, u, d, config: SolverConfig | None = None):
    """Largest ``t = beta^l`` with ``Theta(u + t d) <= (1 - 2 sigma t) Theta(u)``.

    Returns ``(t, l)``.
    """
    config = config or SolverConfig()
    u = problem._check(u)
    r = _residual_from_grad(problem, u, problem.gradient(u))
    t, l, *_ = _line_search(problem, u, np.asarray(d, dtype=float), float(r @ r), config)
    return t, l


def solve(problem: WeightedL1Problem, u0=None, config: SolverConfig | None = None) -> SolveResult:
    """Run BSSN, modBSSN or the hybrid method from ``u0`` (default zero)."""
    config = config or SolverConfig()
    config.validate()
    if config.gamma is not None and config.gamma != problem.gamma:
        problem = problem.with_gamma(config.gamma)
    u = np.zeros(problem.n) if u0 is None else np.array(u0, dtype=float)
    problem._check(u)
    if not np.all(np.isfinite(u)):
        raise NumericalError("starting vector has non-finite entries")

    use_modified = config.variant == "modbssn"
    switch_step = None
    hessian = None
    grad = problem.gradient(u)
    partition = classify(problem, u, grad)
    res = partition.residual
    theta = float(res @ res)
    records = [IterationRecord(0, math.sqrt(theta), tikhonov_value(problem, u))]
    iterates = [u.copy()] if config.store_iterates else []
    directions = []

    j = 0
    reason = "max_outer"
    while True:
        if math.sqrt(theta) < config.tol:
            reason = "converged"
            break
        if j >= config.max_outer:
            break
        if hessian is None or not problem.objective.constant_hessian:
            hessian = problem.hessian(u)
        reduced = assemble_reduced_lcp(problem, u, partition, use_modified, hessian)
        lcp_sol = solve_lcp(reduced.instance, config.lcp_tol)
        d = newton_direction(problem, u, partition, lcp_sol, use_modified, reduced)
        t, l, u, grad, res, theta = _line_search(problem, u, d, theta, config)
        j += 1
        active = "modbssn" if use_modified else "bssn"
        records.append(
            IterationRecord(
                j,
                math.sqrt(theta),
                tikhonov_value(problem, u),
                t,
                reduced.lcp_size,
                reduced.sle_size,
                reduced.sle_count,
                active,
                l,
                lcp_sol.solver_used,
            )
        )
        log.debug(
            "step %d: |F|=%.4e t=%g lcp=%d sle=%d (%s)",
            j, records[-1].residual_norm, t, reduced.lcp_size, reduced.sle_size, active,
        )
        if config.store_iterates:
            iterates.append(u.copy())
            directions.append(d)
        if config.variant == "hybrid" and not use_modified and j > config.j_max and t < config.t_min:
            use_modified = True
            switch_step = j
            log.debug("hybrid: switching to modified index sets after step %d", j)
        if np.max(np.abs(u)) > config.divergence_cap:
            reason = "diverged"
            break
        partition = classify(problem, u, grad)

    return SolveResult(u, records, reason == "converged", reason, switch_step, iterates, directions)


def quadratic_rate_diagnostic(iterates: Sequence[np.ndarray], u_star, tail: int | None = None) -> list:
    """Ratios ``||u_{j+1} - u*|| / ||u_j - u*||^2`` over the run.

    Pairs with ``u_j == u*`` are skipped.  ``tail`` keeps only the last
    ``tail`` ratios.
    """
    u_star = np.asarray(u_star, dtype=float)
    errs = [float(np.linalg.norm(np.asarray(v) - u_star)) for v in iterates]
    ratios = [errs[i + 1] / errs[i] ** 2 for i in range(len(errs) - 1) if errs[i] > 0]
    return ratios[-tail:] if tail else ratios


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.6e}"


def write_history_csv(records: Sequence[IterationRecord], path, delimiter: str = ",") -> None:
    """Write the iteration history."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        writer.writerow(HISTORY_COLUMNS)
        for rec in records:
            row = asdict(rec)
            writer.writerow(
                [str(rec.j)] + [_fmt(row[c]) if c != "step" or rec.step is None else f"{rec.step:.6g}"
                                for c in HISTORY_COLUMNS[1:]]
            )
