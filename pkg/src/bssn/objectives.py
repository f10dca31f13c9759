"""Smooth data terms: blurred-image least squares and the L1-L2 robust loss."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .core import Objective
from .errors import DimensionError

__all__ = [
    "DeblurProblem",
    "RegressionProblem",
    "blur_half_width",
    "blur_toeplitz",
    "build_blur_operator",
    "forward_blur_simpson",
    "quadratic_objective",
    "robust_objective",
    "phi",
    "phi_prime",
    "phi_second",
    "sparse_test_image",
]


@dataclass
class DeblurProblem:
    side: int
    blur_length: float
    k_matrix: object
    f_delta: np.ndarray
    noise_level: float
    f_clean: np.ndarray | None = None
    u_true: np.ndarray | None = None

    @property
    def noise_norm(self) -> float:
        """``||f - f_delta||_2`` (zero when the clean data is unknown)."""
        if self.f_clean is None:
            return 0.0
        return float(np.linalg.norm(self.f_clean - self.f_delta))


@dataclass
class RegressionProblem:
    a_rows: np.ndarray
    y: np.ndarray
    rho: float = 1.0
    outlier_fraction: float = 0.0
    u_true: np.ndarray | None = None
    outliers: np.ndarray | None = None

    def __post_init__(self):
        self.a_rows = np.asarray(self.a_rows, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        m, n = self.a_rows.shape
        if self.y.shape != (m,):
            raise DimensionError(f"response has shape {self.y.shape}, expected ({m},)")
        if m < n:
            raise DimensionError(f"need m >= n, got m={m}, n={n}")


def blur_half_width(side: int, blur_length: float) -> int:
    if side < 2 or not 0 < blur_length < 1:
        raise ValueError(f"need side >= 2 and 0 < blur_length < 1, got {side}, {blur_length}")
    return int(math.floor(side * blur_length))


def blur_toeplitz(side: int, blur_length: float) -> np.ndarray:
    """Banded Toeplitz averaging factor with bandwidth ``2b + 1``, ``b = floor(N L)``."""
    b = blur_half_width(side, blur_length)
    if b == 0:
        warnings.warn("blur window collapses to a single pixel; operator is the identity", stacklevel=2)
    i = np.arange(side)
    band = np.abs(i[:, None] - i[None, :]) <= b
    return band / (2 * b + 1.0)


def build_blur_operator(side: int, blur_length: float, dense: bool = False):
    """Motion-blur matrix ``T kron I`` acting on row-major ``side x side`` images.

    Returned as CSR unless ``dense`` is set (intended for ``side**2 <= 4096``).
    """
    t = blur_toeplitz(side, blur_length)
    k = sp.kron(sp.csr_matrix(t), sp.identity(side, format="csr"), format="csr")
    return k.toarray() if dense else k


def _simpson_weights(b: int) -> np.ndarray:
    if b == 0:
        warnings.warn("window too short for Simpson weights; using a single-point rule", stacklevel=3)
        return np.ones(1)
    w = np.ones(2 * b + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w / w.sum()


def forward_blur_simpson(side: int, blur_length: float, u) -> np.ndarray:
    """Blur with Simpson-weighted moving averages over the same window.

    Used only to synthesize data, so that the reconstruction operator differs
    from the one that generated the measurements.
    """
    b = blur_half_width(side, blur_length)
    img = np.asarray(u, dtype=float).reshape(side, side)
    weights = _simpson_weights(b)
    out = np.zeros_like(img)
    for off, wgt in zip(range(-b, b + 1), weights):
        # out[i] += wgt * img[i + off], zero outside the image
        lo, hi = max(0, -off), min(side, side - off)
        out[lo:hi] += wgt * img[lo + off:hi + off]
    return out.reshape(-1)


def quadratic_objective(k_matrix, f_delta, ridge: float = 0.0) -> Objective:
    """``g(u) = 0.5 ||K u - f||^2 + 0.5 ridge ||u||^2`` with constant Hessian cached.

    A positive ``ridge`` restores strict convexity when ``K`` is not
    injective (the moving-average blur is singular for many image sizes).
    """
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    f = np.asarray(f_delta, dtype=float)
    K = k_matrix if sp.issparse(k_matrix) else np.asarray(k_matrix, dtype=float)
    if K.shape[0] != f.size:
        raise DimensionError(f"K has {K.shape[0]} rows but data has length {f.size}")
    kt = K.T.tocsr() if sp.issparse(K) else K.T
    n = K.shape[1]
    if sp.issparse(K):
        hess = (kt @ K + ridge * sp.identity(n)).tocsr()
    else:
        hess = kt @ K + ridge * np.eye(n)
        hess = 0.5 * (hess + hess.T)

    def value(u):
        r = K @ u - f
        return 0.5 * float(r @ r) + 0.5 * ridge * float(u @ u)

    def gradient(u):
        return kt @ (K @ u - f) + ridge * u

    return Objective(value, gradient, lambda u: hess, constant_hessian=True, name="quadratic")


def phi(x, rho: float = 1.0):
    """``2 (sqrt(rho + x^2/2) - sqrt(rho))``."""
    return 2.0 * (np.sqrt(rho + 0.5 * np.square(x)) - math.sqrt(rho))


def phi_prime(x, rho: float = 1.0):
    return x / np.sqrt(rho + 0.5 * np.square(x))


def phi_second(x, rho: float = 1.0):
    return rho / (rho + 0.5 * np.square(x)) ** 1.5


def robust_objective(reg: RegressionProblem) -> Objective:
    """Mean L1-L2 loss ``(1/m) sum_k phi(a_k^T u - y_k)``."""
    A, y, rho = reg.a_rows, reg.y, reg.rho
    m = A.shape[0]

    def value(u):
        return float(np.sum(phi(A @ u - y, rho))) / m

    def gradient(u):
        return A.T @ phi_prime(A @ u - y, rho) / m

    def hessian(u):
        c = phi_second(A @ u - y, rho) / m
        h = (A.T * c) @ A
        return 0.5 * (h + h.T)

    return Objective(value, gradient, hessian, name="robust")


def sparse_test_image(side: int) -> np.ndarray:
    """Deterministic piecewise-constant image with roughly 15% nonzero pixels."""
    r, c = np.mgrid[0:side, 0:side] / side
    img = np.zeros((side, side))
    img[(r - 0.3) ** 2 + (c - 0.3) ** 2 <= 0.12**2] = 1.0
    img[(r >= 0.60) & (r < 0.85) & (c >= 0.15) & (c < 0.35)] = 0.6
    img[(r >= 0.15) & (r < 0.28) & (c >= 0.60) & (c < 0.90)] = 0.8
    img[(r >= 0.55) & (r < 0.90) & (np.abs(c - 0.72) < 0.03)] = 0.4
    return img.reshape(-1)
