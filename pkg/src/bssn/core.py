"""Residual map, merit functional and index-set classification.

The problem is ``min_u g(u) + sum_k w_k |u_k|`` with ``g`` strictly convex
and twice differentiable.  Its minimizer is the unique zero of

    F(u) = u - S_{gamma w}(u - gamma grad g(u))

for any fixed ``gamma > 0``, where ``S`` is componentwise soft thresholding.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple

import numpy as np
import scipy.sparse as sp

from .errors import DimensionError, NumericalError

__all__ = [
    "Objective",
    "WeightedL1Problem",
    "IndexPartition",
    "IndexSets",
    "soft_threshold",
    "residual_map",
    "merit",
    "classify",
    "dir_derivative_F",
    "dir_derivative_merit",
    "tikhonov_value",
    "hessian_bounds",
]


@dataclass(frozen=True)
class Objective:
    """Callback bundle for the smooth part ``g``.

    ``hessian`` may return a dense ``ndarray`` or a ``scipy.sparse`` matrix.
    Set ``constant_hessian`` when ``hessian`` ignores its argument, which
    lets callers skip re-evaluation.
    """

    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    hessian: Callable[[np.ndarray], object]
    constant_hessian: bool = False
    name: str = "custom"


@dataclass(frozen=True)
class WeightedL1Problem:
    """``g(u) + sum_k w_k |u_k|`` together with the scaling ``gamma``.

    Parameters
    ----------
    objective : Objective
        Smooth part.
    weights : array_like or float
        Positive weights; a scalar is broadcast to length ``n``.
    gamma : float
        Positive scaling inside the residual map.
    n : int, optional
        Dimension, required when ``weights`` is a scalar.
    boundary_tol : float
        Absolute tolerance for the equality sets ``I+`` / ``I-``.
        Zero means exact floating-point equality.
    """

    objective: Objective
    weights: np.ndarray
    gamma: float = 1.0
    n: int | None = None
    boundary_tol: float = 0.0
    w0: float = field(init=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim == 0:
            if self.n is None:
                raise DimensionError("scalar weights need an explicit dimension n")
            w = np.full(int(self.n), float(w))
        if w.ndim != 1 or w.size == 0:
            raise DimensionError(f"weights must be a non-empty vector, got shape {w.shape}")
        if self.n is not None and w.size != self.n:
            raise DimensionError(f"weights have length {w.size}, expected {self.n}")
        if not np.all(np.isfinite(w)) or np.min(w) <= 0:
            raise ValueError("weights must be finite and strictly positive")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.boundary_tol < 0 or self.boundary_tol >= self.gamma * np.min(w):
            raise ValueError("boundary_tol must lie in [0, gamma * min(w))")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "n", w.size)
        object.__setattr__(self, "w0", float(np.min(w)))

    def with_gamma(self, gamma: float) -> "WeightedL1Problem":
        return replace(self, gamma=gamma)

    def with_weights(self, weights) -> "WeightedL1Problem":
        return replace(self, weights=weights, n=self.n)

    def _check(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.n,):
            raise DimensionError(f"expected vector of length {self.n}, got shape {u.shape}")
        return u

    def gradient(self, u: np.ndarray) -> np.ndarray:
        grad = np.asarray(self.objective.gradient(self._check(u)), dtype=float)
        if grad.shape != (self.n,):
            raise DimensionError(f"gradient has shape {grad.shape}, expected ({self.n},)")
        if not np.all(np.isfinite(grad)):
            raise NumericalError("non-finite entries in the gradient")
        return grad

    def hessian(self, u: np.ndarray):
        hess = self.objective.hessian(self._check(u))
        data = hess.data if sp.issparse(hess) else np.asarray(hess)
        if hess.shape != (self.n, self.n):
            raise DimensionError(f"Hessian has shape {hess.shape}, expected ({self.n}, {self.n})")
        if not np.all(np.isfinite(data)):
            raise NumericalError("non-finite entries in the Hessian")
        return hess if sp.issparse(hess) else np.asarray(hess, dtype=float)

    def value(self, u: np.ndarray) -> float:
        return float(self.objective.value(self._check(u)))


def soft_threshold(v, beta) -> np.ndarray:
    """Componentwise ``sign(v_k) * max(|v_k| - beta_k, 0)``."""
    v = np.asarray(v, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if beta.ndim and beta.shape != v.shape:
        raise DimensionError(f"shape mismatch: v {v.shape}, beta {beta.shape}")
    return np.sign(v) * np.maximum(np.abs(v) - beta, 0.0)


def _residual_from_grad(problem: WeightedL1Problem, u, grad) -> np.ndarray:
    gw = problem.gamma * problem.weights
    return u - soft_threshold(u - problem.gamma * grad, gw)


def residual_map(problem: WeightedL1Problem, u) -> np.ndarray:
    """``F(u) = u - S_{gamma w}(u - gamma grad g(u))``."""
    u = problem._check(u)
    return _residual_from_grad(problem, u, problem.gradient(u))


def merit(problem: WeightedL1Problem, u) -> float:
    """``Theta(u) = ||F(u)||_2^2``."""
    r = residual_map(problem, u)
    return float(r @ r)


def tikhonov_value(problem: WeightedL1Problem, u) -> float:
    """Penalized objective ``g(u) + sum_k w_k |u_k|``."""
    u = problem._check(u)
    return problem.value(u) + float(problem.weights @ np.abs(u))


class IndexSets(NamedTuple):
    """Active / inactive blocks driving one Newton step."""

    active: np.ndarray
    zero: np.ndarray
    plus: np.ndarray
    minus: np.ndarray


@dataclass(frozen=True)
class IndexPartition:
    """All index sets at a point ``u``, computed from one gradient evaluation.

    ``upper`` and ``lower`` hold ``gamma*grad + gamma*w`` and
    ``gamma*grad - gamma*w``; ``residual`` is ``F(u)``.
    """

    a_plus: np.ndarray
    a_minus: np.ndarray
    i_zero: np.ndarray
    i_plus: np.ndarray
    i_minus: np.ndarray
    a_plus_plus: np.ndarray
    a_minus_minus: np.ndarray
    i_zero_plus: np.ndarray
    i_zero_minus: np.ndarray
    modified_a_plus: np.ndarray
    modified_a_minus: np.ndarray
    modified_i_zero: np.ndarray
    modified_i_plus: np.ndarray
    modified_i_minus: np.ndarray
    upper: np.ndarray
    lower: np.ndarray
    gradient: np.ndarray
    residual: np.ndarray

    def sets(self, modified: bool) -> IndexSets:
        if modified:
            return IndexSets(
                np.union1d(self.modified_a_plus, self.modified_a_minus),
                self.modified_i_zero,
                self.modified_i_plus,
                self.modified_i_minus,
            )
        return IndexSets(
            np.union1d(self.a_plus, self.a_minus), self.i_zero, self.i_plus, self.i_minus
        )

    @property
    def sign_inconsistent(self) -> np.ndarray:
        """Union of the four subsets excised by the modification."""
        return np.concatenate(
            [self.a_plus_plus, self.a_minus_minus, self.i_zero_plus, self.i_zero_minus]
        )


def classify(problem: WeightedL1Problem, u, grad: np.ndarray | None = None) -> IndexPartition:
    """Compute plain, excised and modified index sets at ``u``."""
    u = problem._check(u)
    if not np.all(np.isfinite(u)):
        raise NumericalError("iterate has non-finite entries")
    if grad is None:
        grad = problem.gradient(u)
    gw = problem.gamma * problem.weights
    upper = problem.gamma * grad + gw
    lower = problem.gamma * grad - gw
    eps = problem.boundary_tol

    on_upper = np.abs(u - upper) <= eps
    on_lower = np.abs(u - lower) <= eps
    a_plus = (upper < u) & ~on_upper
    a_minus = (u < lower) & ~on_lower
    i_zero = (lower < u) & (u < upper) & ~on_upper & ~on_lower

    a_pp = a_plus & (u < 0)
    a_mm = a_minus & (u > 0)
    i_zp = i_zero & (upper < 0)
    i_zm = i_zero & (lower > 0)

    idx = np.flatnonzero
    return IndexPartition(
        a_plus=idx(a_plus),
        a_minus=idx(a_minus),
        i_zero=idx(i_zero),
        i_plus=idx(on_upper),
        i_minus=idx(on_lower),
        a_plus_plus=idx(a_pp),
        a_minus_minus=idx(a_mm),
        i_zero_plus=idx(i_zp),
        i_zero_minus=idx(i_zm),
        modified_a_plus=idx(a_plus & ~a_pp),
        modified_a_minus=idx(a_minus & ~a_mm),
        modified_i_zero=idx(i_zero & ~i_zp & ~i_zm),
        modified_i_plus=idx(on_upper | a_pp | i_zp),
        modified_i_minus=idx(on_lower | a_mm | i_zm),
        upper=upper,
        lower=lower,
        gradient=grad,
        residual=_residual_from_grad(problem, u, grad),
    )


def dir_derivative_F(problem: WeightedL1Problem, u, d, partition: IndexPartition | None = None):
    """Directional derivative ``F'(u; d)`` using the plain index sets."""
    u = problem._check(u)
    d = problem._check(d)
    if partition is None:
        partition = classify(problem, u)
    hd = problem.gamma * (problem.hessian(u) @ d)
    out = np.array(d, dtype=float)
    active = np.concatenate([partition.a_plus, partition.a_minus])
    out[active] = hd[active]
    p, m = partition.i_plus, partition.i_minus
    out[p] = np.minimum(hd[p], d[p])
    out[m] = np.maximum(hd[m], d[m])
    return out


def dir_derivative_merit(problem: WeightedL1Problem, u, d, partition: IndexPartition | None = None) -> float:
    """``Theta'(u; d) = 2 <F'(u; d), F(u)>``."""
    if partition is None:
        partition = classify(problem, u)
    return 2.0 * float(dir_derivative_F(problem, u, d, partition) @ partition.residual)


def hessian_bounds(problem: WeightedL1Problem, points) -> tuple[float, float]:
    """Smallest and largest Hessian eigenvalue over sample points.

    Raises if a sampled Hessian is not symmetric (relative 1e-10).
    Intended for desk-scale problems; the Hessian is densified.
    """
    lo, hi = np.inf, -np.inf
    for u in points:
        h = problem.hessian(u)
        h = h.toarray() if sp.issparse(h) else h
        scale = max(1.0, float(np.max(np.abs(h))))
        if np.max(np.abs(h - h.T)) > 1e-10 * scale:
            raise NumericalError("Hessian is not symmetric")
        ev = np.linalg.eigvalsh(h)
        lo, hi = min(lo, ev[0]), max(hi, ev[-1])
    return float(lo), float(hi)
