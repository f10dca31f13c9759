"""Solvers for the symmetric positive definite LCP.

Find ``x >= 0`` with ``y = N x + z >= 0`` and ``<x, y> = 0``.  For SPD ``N``
the solution exists and is unique.  :func:`solve_lcp` runs a damped Newton
method on the min-map ``H(x) = min(x, N x + z)`` from ``x = 0`` and falls
back to Lemke's complementary pivoting when Newton declines.
"""

from __future__ import annotations

import itertools
import logging
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .errors import DimensionError, LcpError

log = logging.getLogger(__name__)

__all__ = [
    "LcpInstance",
    "LcpSolution",
    "solve_lcp",
    "damped_newton_lcp",
    "lemke",
    "brute_force_lcp",
    "complementarity_residual",
    "random_spd_instance",
]

# absolute-relative complementarity target, independent of the caller's tol
COMPLEMENTARITY_TOL = 1e-10


@dataclass(frozen=True)
class LcpInstance:
    """Matrix ``N``, vector ``z`` and the map back to original coordinates.

    ``back_map[i]`` is ``(k, "plus")`` or ``(k, "minus")``.
    """

    n_mat: np.ndarray
    z_vec: np.ndarray
    back_map: tuple = ()

    def __post_init__(self):
        n_mat = np.atleast_2d(np.asarray(self.n_mat, dtype=float))
        z = np.asarray(self.z_vec, dtype=float).reshape(-1)
        m = z.size
        if m == 0:
            n_mat = np.zeros((0, 0))
        if n_mat.shape != (m, m):
            raise DimensionError(f"N has shape {n_mat.shape}, z has length {m}")
        scale = max(1.0, float(np.max(np.abs(n_mat)))) if m else 1.0
        if m and np.max(np.abs(n_mat - n_mat.T)) > 1e-10 * scale:
            raise ValueError("LCP matrix is not symmetric")
        if self.back_map and len(self.back_map) != m:
            raise DimensionError("back_map length differs from LCP size")
        object.__setattr__(self, "n_mat", n_mat)
        object.__setattr__(self, "z_vec", z)
        object.__setattr__(self, "back_map", tuple(self.back_map))

    @property
    def size(self) -> int:
        return self.z_vec.size

    def dump(self, path=None) -> Path:
        """Write ``N`` and ``z`` as plain text; returns the file path."""
        if path is None:
            fd = tempfile.NamedTemporaryFile("w", suffix=".lcp.txt", delete=False)
            path = fd.name
            fd.close()
        path = Path(path)
        with path.open("w") as fh:
            fh.write(f"# m = {self.size}\n# N\n")
            np.savetxt(fh, self.n_mat, fmt="%.17g")
            fh.write("# z\n")
            np.savetxt(fh, self.z_vec[None, :], fmt="%.17g")
        return path

    @classmethod
    def load(cls, path) -> "LcpInstance":
        rows = np.loadtxt(path, comments="#", ndmin=2)
        return cls(rows[:-1], rows[-1])


@dataclass
class LcpSolution:
    x: np.ndarray
    y: np.ndarray
    solver_used: str
    iterations: int = 0
    history: list = field(default_factory=list)


def complementarity_residual(inst: LcpInstance, x) -> float:
    """``||min(x, N x + z)||_inf``."""
    if inst.size == 0:
        return 0.0
    return float(np.max(np.abs(np.minimum(x, inst.n_mat @ x + inst.z_vec))))


def _target(inst: LcpInstance, tol: float) -> float:
    zscale = float(np.max(np.abs(inst.z_vec))) if inst.size else 0.0
    return min(tol, COMPLEMENTARITY_TOL * (1.0 + zscale))


def _finish(inst: LcpInstance, x, solver: str, iterations: int, history=None) -> LcpSolution:
    x = np.maximum(x, 0.0)
    return LcpSolution(x, inst.n_mat @ x + inst.z_vec, solver, iterations, history or [])


def _empty(solver: str = "empty") -> LcpSolution:
    return LcpSolution(np.zeros(0), np.zeros(0), solver)


def damped_newton_lcp(
    inst: LcpInstance,
    tol: float = 1e-7,
    max_steps: int = 50,
    sigma: float = 0.01,
    beta: float = 0.5,
    max_backtracks: int = 40,
) -> LcpSolution | None:
    """Damped Newton method on ``H(x) = min(x, N x + z)`` started at zero.

    Returns ``None`` (declines) when the start point has ties
    (some ``z_k == 0``), when a reduced system is singular, when the line
    search stalls, or when more than ``max_steps`` steps are needed.
    """
    m = inst.size
    if m == 0:
        return _empty()
    N, z = inst.n_mat, inst.z_vec
    if np.any(z == 0.0):
        return None
    target = _target(inst, tol)
    x = np.zeros(m)
    y = z.copy()
    h = np.minimum(x, y)
    theta = float(h @ h)
    history = [np.sqrt(theta)]
    for step in range(max_steps + 1):
        if np.max(np.abs(h)) <= target:
            sol = _finish(inst, x, "damped_newton", step, history)
            if complementarity_residual(inst, sol.x) <= target:
                return sol
        if step == max_steps:
            return None
        alpha = y < x
        d = -x.copy()
        if np.any(alpha):
            rhs = -y[alpha] - N[np.ix_(alpha, ~alpha)] @ d[~alpha]
            try:
                d[alpha] = sla.solve(N[np.ix_(alpha, alpha)], rhs, assume_a="pos")
            except (sla.LinAlgError, ValueError):
                return None
        t = 1.0
        for _ in range(max_backtracks):
            xn = x + t * d
            yn = N @ xn + z
            hn = np.minimum(xn, yn)
            theta_n = float(hn @ hn)
            if theta_n <= (1.0 - 2.0 * sigma * t) * theta:
                break
            t *= beta
        else:
            return None
        if theta_n >= theta and theta_n > 0:
            return None
        x, y, h, theta = xn, yn, hn, theta_n
        history.append(np.sqrt(theta))
    return None


def _lexmin(rows: np.ndarray, mat: np.ndarray) -> int:
    """Row index of the lexicographically smallest row of ``mat[rows]``."""
    for col in range(mat.shape[1]):
        vals = mat[rows, col]
        best = vals.min()
        rows = rows[vals <= best + 1e-12 * max(1.0, abs(best))]
        if rows.size == 1:
            break
    return int(rows[0])


def lemke(inst: LcpInstance, tol: float = 1e-7, max_pivots: int | None = None) -> LcpSolution:
    """Lemke's complementary pivoting with covering vector ``e``.

    Uses a lexicographic ratio test so degenerate instances terminate.
    """
    m = inst.size
    if m == 0:
        return _empty("lemke")
    N, z = inst.n_mat, inst.z_vec
    if np.all(z >= 0):
        return _finish(inst, np.zeros(m), "lemke", 0)
    if max_pivots is None:
        max_pivots = 50 * m + 100

    # columns: w_0..w_{m-1}, x_0..x_{m-1}, x0 (artificial)
    tab = np.hstack([np.eye(m), -N, -np.ones((m, 1))])
    q = z.copy()
    basis = np.arange(m)
    art = 2 * m
    piv_tol = 1e-12

    def do_pivot(r, col):
        p = tab[r, col]
        tab[r] /= p
        q[r] /= p
        f = tab[:, col].copy()
        f[r] = 0.0
        tab[:] -= np.outer(f, tab[r])
        q[:] -= f * q[r]
        leaving = basis[r]
        basis[r] = col
        return leaving

    # initial pivot: artificial enters, most negative row leaves
    lexmat = np.hstack([q[:, None], tab[:, :m]])
    r = _lexmin(np.flatnonzero(q <= q.min() + 1e-12 * max(1.0, abs(q.min()))), lexmat)
    leaving = do_pivot(r, art)
    pivots = 1
    while True:
        entering = leaving + m if leaving < m else leaving - m
        col = tab[:, entering]
        cand = np.flatnonzero(col > piv_tol)
        if cand.size == 0:
            raise LcpError(f"Lemke: ray termination after {pivots} pivots (dump: {inst.dump()})")
        lexmat = np.hstack([q[:, None], tab[:, :m]]) / np.where(col > piv_tol, col, 1.0)[:, None]
        # artificial variable leaves as soon as it is eligible
        art_rows = cand[basis[cand] == art]
        r = _lexmin(cand, lexmat)
        if art_rows.size and lexmat[art_rows[0], 0] <= lexmat[r, 0] + 1e-12 * max(1.0, abs(lexmat[r, 0])):
            r = int(art_rows[0])
        leaving = do_pivot(r, entering)
        pivots += 1
        if leaving == art:
            break
        if pivots > max_pivots:
            raise LcpError(f"Lemke: pivot cap {max_pivots} exceeded (dump: {inst.dump()})")

    x = np.zeros(m)
    is_x = (basis >= m) & (basis < 2 * m)
    x[basis[is_x] - m] = q[is_x]
    x = _polish(inst, np.maximum(x, 0.0))
    return _finish(inst, x, "lemke", pivots)


def _polish(inst: LcpInstance, x: np.ndarray) -> np.ndarray:
    """Re-solve on the detected support; keep the result if it is feasible."""
    support = x > 0
    if not np.any(support):
        return x
    N, z = inst.n_mat, inst.z_vec
    try:
        xs = sla.solve(N[np.ix_(support, support)], -z[support], assume_a="pos")
    except (sla.LinAlgError, ValueError):
        return x
    cand = np.zeros_like(x)
    cand[support] = xs
    if np.all(xs >= 0) and complementarity_residual(inst, cand) <= complementarity_residual(inst, x):
        return cand
    return x


def brute_force_lcp(inst: LcpInstance) -> LcpSolution:
    """Enumerate all ``2^m`` supports; test oracle for ``m <= 20``."""
    m = inst.size
    if m == 0:
        return _empty("brute_force")
    if m > 20:
        raise DimensionError("brute_force_lcp is limited to m <= 20")
    N, z = inst.n_mat, inst.z_vec
    scale = 1e-10 * (1.0 + float(np.max(np.abs(z))))
    best, best_viol = None, np.inf
    for r in range(m + 1):
        for support in itertools.combinations(range(m), r):
            s = list(support)
            x = np.zeros(m)
            if s:
                try:
                    x[s] = np.linalg.solve(N[np.ix_(s, s)], -z[s])
                except np.linalg.LinAlgError:
                    continue
            y = N @ x + z
            viol = max(-min(0.0, x.min()), -min(0.0, y.min()))
            if viol <= scale:
                return _finish(inst, x, "brute_force", 0)
            if viol < best_viol:
                best, best_viol = x, viol
    if best_viol <= 1e3 * scale:
        return _finish(inst, best, "brute_force", 0)
    raise LcpError("brute force found no complementary solution")


def solve_lcp(inst: LcpInstance, tol: float = 1e-7) -> LcpSolution:
    """Damped Newton with Lemke fallback; validates the returned solution."""
    if inst.size == 0:
        return _empty()
    target = _target(inst, tol)
    sol = damped_newton_lcp(inst, tol)
    if sol is None:
        log.debug("damped Newton declined on LCP of size %d; using Lemke", inst.size)
        sol = lemke(inst, tol)
    if complementarity_residual(inst, sol.x) > max(target, 1e-13 * _ny_scale(inst, sol.x)):
        raise LcpError(
            f"LCP solution fails complementarity check "
            f"({complementarity_residual(inst, sol.x):.3e}); dump: {inst.dump()}"
        )
    return sol


def _ny_scale(inst: LcpInstance, x) -> float:
    return float(np.max(np.abs(inst.n_mat)) * np.max(np.abs(x), initial=0.0) * inst.size)


def random_spd_instance(m: int, rng: np.random.Generator, cond: float = 1e2) -> LcpInstance:
    """Random SPD ``N`` with prescribed condition number and Gaussian ``z``."""
    q, _ = np.linalg.qr(rng.standard_normal((m, m)))
    ev = np.geomspace(1.0, cond, m) if m > 1 else np.ones(m)
    n_mat = (q * ev) @ q.T
    n_mat = 0.5 * (n_mat + n_mat.T)
    return LcpInstance(n_mat, rng.standard_normal(m))
