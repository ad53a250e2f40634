"""Image similarity and operator-perturbation metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, aslinearoperator

from .forward_fd import FdModel
from .forward_td import TdModel
from .geometry import ImageGrid


# seed of the fixed power-iteration start vector
_START_SEED = 0


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class MetricRecord:
    name: str
    value: float
    method: str | None = None
    x_percent: float | None = None
    trial: int | None = None
    seed: int | None = None

    def __post_init__(self):
        if self.name == "PC" and not -1.0 - 1e-12 <= self.value <= 1.0 + 1e-12:
            raise ValueError(f"Pearson correlation out of range: {self.value}")
        if self.name == "delta" and self.value < 0:
            raise ValueError(f"delta must be non-negative, got {self.value}")


def _values(img):
    if isinstance(img, ImageGrid):
        return img.pixel_values
    return np.asarray(img, dtype=float).ravel()


def pearson(a, b) -> float:
    """Sample Pearson correlation between two images of equal size."""
    x, y = _values(a), _values(b)
    if x.size != y.size:
        raise ValueError(f"images differ in size: {x.size} vs {y.size}")
    xc = x - x.mean()
    yc = y - y.mean()
    nx, ny = np.linalg.norm(xc), np.linalg.norm(yc)
    if nx == 0 or ny == 0:
        raise ValueError("Pearson correlation is undefined for a constant image")
    return float(np.clip(np.dot(xc / nx, yc / ny), -1.0, 1.0))


def as_operator(obj) -> LinearOperator:
    if isinstance(obj, (TdModel, FdModel)):
        return obj.operator()
    if isinstance(obj, LinearOperator):
        return obj
    if sp.issparse(obj):
        return aslinearoperator(obj)
    return aslinearoperator(np.asarray(obj))


def spectral_norm(op, tol: float = 1e-8, max_iters: int = 10_000) -> float:
    """Largest singular value by power iteration on ``M^H M``.

    Starts from a fixed pseudo-random unit vector and stops once successive
    estimates of ``||M x||`` differ by less than ``tol`` relative. A constant
    start would be blind to the leading singular vector of ring-symmetric
    models, which is orthogonal to every symmetric image.
    """
    op = as_operator(op)
    n = op.shape[1]
    x = np.random.default_rng(_START_SEED).standard_normal(n)
    x /= np.linalg.norm(x)
    prev = None
    for _ in range(max_iters):
        y = op.matvec(x)
        est = float(np.linalg.norm(y))
        if est == 0.0:
            return 0.0
        if prev is not None and abs(est - prev) <= tol * est:
            return est
        prev = est
        z = op.rmatvec(y)
        x = z / np.linalg.norm(z)
    raise ConvergenceError(f"power iteration did not converge in {max_iters} iterations "
                           f"(last estimate {prev})")


def _difference_operator(true, nominal) -> LinearOperator:
    """``true - nominal``, explicit when both sides allow it, matrix-free otherwise."""
    if isinstance(true, TdModel) and isinstance(nominal, TdModel):
        return aslinearoperator((true.matrix - nominal.matrix).tocsr())
    if isinstance(true, FdModel) and isinstance(nominal, FdModel):
        if true.matrix is not None and nominal.matrix is not None:
            return aslinearoperator(true.matrix - nominal.matrix)
        if true.estimated_bytes() <= max(true.memory_cap, nominal.memory_cap):
            return aslinearoperator(fd_difference_matrix(true, nominal))
    a, b = as_operator(true), as_operator(nominal)
    if a.shape != b.shape:
        raise ValueError(f"operator shapes differ: {a.shape} vs {b.shape}")
    dtype = np.result_type(a.dtype, b.dtype)
    return LinearOperator(a.shape, matvec=lambda u: a.matvec(u) - b.matvec(u),
                          rmatvec=lambda v: a.rmatvec(v) - b.rmatvec(v), dtype=dtype)


def fd_difference_matrix(true: FdModel, nominal: FdModel) -> np.ndarray:
    """Dense ``K - K_N`` built sensor block by sensor block."""
    m, n = true.shape
    out = np.empty((m, n), dtype=complex)
    n_f = true.freq_grid.n_freqs
    for sl in true._sensor_chunks():
        rows = slice(sl.start * n_f, sl.stop * n_f)
        out[rows] = (true.block(sl) - nominal.block(sl)).reshape(-1, n)
    return out


def delta_metric(pair, tol: float = 1e-8, max_iters: int = 10_000,
                 true_norm: float | None = None) -> float:
    """``||M - M_N||_2 / ||M||_2`` for a model pair or a ``(M, M_N)`` tuple.

    ``true_norm`` may be supplied to reuse ``||M||_2`` across many pairs
    sharing the same true model.
    """
    if isinstance(pair, tuple):
        true, nominal = pair
    else:
        true, nominal = pair.true, pair.nominal
    if true_norm is None:
        true_norm = spectral_norm(true, tol, max_iters)
    if true_norm == 0:
        raise ValueError("true model has zero norm")
    diff = _difference_operator(true, nominal)
    return spectral_norm(diff, tol, max_iters) / true_norm
