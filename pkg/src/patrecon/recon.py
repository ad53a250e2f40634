"""Tikhonov-regularised model-based inversion and universal back-projection."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, aslinearoperator

from ._validation import check_count, check_finite, check_positive
from .forward_fd import FdModel, SpectralData
from .forward_td import Sinogram, TdModel
from .geometry import AcousticConfig, ImageGrid, SensorArray, pixel_sensor_distances
from .solvers import lsqr, stacked_real


@dataclass(frozen=True)
class SolverSettings:
    """Tikhonov weight and stopping rule for :func:`tikhonov_solve`.

    With ``alpha = 0`` the iteration count is the only regulariser. When
    ``relative_alpha`` is set the weight applied is ``alpha * ||M||_2^2``, so
    one value means the same thing for operators of very different scale.
    """

    alpha: float = 0.0
    max_iters: int = 50
    rel_tolerance: float = 1e-6
    relative_alpha: bool = False

    def __post_init__(self):
        if not np.isfinite(self.alpha) or self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        check_count(self.max_iters, "max_iters")
        check_positive(self.rel_tolerance, "rel_tolerance")


@dataclass
class ReconResult:
    image: ImageGrid | np.ndarray
    iterations_used: int
    final_residual_norm: float
    method: str | None
    residual_history: list = field(default_factory=list)

    @property
    def values(self) -> np.ndarray:
        if isinstance(self.image, ImageGrid):
            return self.image.pixel_values
        return np.asarray(self.image)


def _as_problem(model, data):
    """Real operator, real right-hand side, grid (or None) and method tag."""
    if isinstance(model, TdModel):
        op, grid, method = model.operator(), model.grid, "TDMM"
    elif isinstance(model, FdModel):
        op, grid, method = model.operator(), model.grid, "FDMM"
    elif isinstance(model, LinearOperator):
        op, grid, method = model, None, None
    elif sp.issparse(model):
        op, grid, method = aslinearoperator(model), None, None
    else:
        op, grid, method = aslinearoperator(np.asarray(model)), None, None

    if isinstance(data, (Sinogram, SpectralData)):
        rhs = data.data.ravel()
    else:
        rhs = np.asarray(data).ravel()
    if rhs.size != op.shape[0]:
        raise ValueError(f"data has {rhs.size} entries, model has {op.shape[0]} rows")
    check_finite(rhs, "data")

    if np.iscomplexobj(rhs) or np.dtype(op.dtype).kind == "c":
        op = stacked_real(op)
        rhs = np.concatenate([rhs.real, rhs.imag]).astype(float)
    return op, rhs.astype(float), grid, method


def tikhonov_solve(model, data, settings: SolverSettings | None = None) -> ReconResult:
    """Minimise ``||M p - d||^2 + alpha ||p||^2`` over real images ``p`` with LSQR.

    ``model`` may be a :class:`TdModel`, an :class:`FdModel`, or any matrix or
    ``LinearOperator``. Complex systems are solved through their stacked
    real/imaginary form, which keeps the iterate real.
    """
    settings = settings or SolverSettings()
    op, rhs, grid, method = _as_problem(model, data)
    alpha = settings.alpha
    if settings.relative_alpha and alpha > 0:
        from .metrics import spectral_norm

        alpha *= spectral_norm(op, tol=1e-6) ** 2
    res = lsqr(op, rhs, damp=np.sqrt(alpha), tol=settings.rel_tolerance,
               max_iters=settings.max_iters)
    image = grid.with_values(res.x) if grid is not None else res.x
    final = res.residual_history[-1] if res.residual_history else 0.0
    return ReconResult(image, res.iterations, float(final), method, res.residual_history)


def bp_term(signal, dt: float, t0: float = 0.0) -> np.ndarray:
    """``2 p(t) - 2 t dp/dt`` along the last axis, central differences inside."""
    p = np.asarray(signal, dtype=float)
    if p.shape[-1] < 3:
        raise ValueError("back-projection term needs at least 3 time samples")
    t = t0 + np.arange(p.shape[-1]) * dt
    dp = np.gradient(p, dt, axis=-1, edge_order=1)
    return 2.0 * p - 2.0 * t * dp


def backproject(sino: Sinogram, sensors: SensorArray, grid: ImageGrid, cfg: AcousticConfig,
                surface_element=None) -> ReconResult:
    """Universal back-projection onto ``grid`` using the given sensor positions.

    Each pixel averages the back-projection terms read at its TOF (linear
    interpolation between samples), weighted by ``dS cos(theta) / |r_d - r|``
    where ``theta`` is measured from the inward ring normal. Reads outside the
    record are left out of both the sum and the normalisation.
    """
    if sensors.n_sensors == 0:
        raise ValueError("empty sensor array")
    data = np.asarray(sino.data, dtype=float)
    if data.shape[0] != sensors.n_sensors:
        raise ValueError(f"sinogram has {data.shape[0]} rows, sensor array has {sensors.n_sensors}")
    nt = data.shape[1]
    b = bp_term(data, sino.dt, sino.t0)

    dist = pixel_sensor_distances(grid, sensors)
    rel = grid.coordinates()[None, :, :] - sensors.positions[:, None, :]
    normals = sensors.inward_normals()
    cos_theta = np.einsum("ljc,lc->lj", rel, normals) / dist
    if surface_element is None:
        surface_element = np.ones(sensors.n_sensors)
    ds = np.broadcast_to(np.asarray(surface_element, dtype=float), (sensors.n_sensors,))
    weight = ds[:, None] * cos_theta / dist

    s = (dist / cfg.vs - sino.t0) / sino.dt
    valid = (s >= 0) & (s <= nt - 1)
    k0 = np.clip(np.floor(s).astype(np.int64), 0, nt - 2)
    frac = s - k0
    rows = np.arange(sensors.n_sensors)[:, None]
    sample = (1.0 - frac) * b[rows, k0] + frac * b[rows, k0 + 1]

    weight = np.where(valid, weight, 0.0)
    num = (weight * np.where(valid, sample, 0.0)).sum(axis=0)
    den = weight.sum(axis=0)
    values = np.divide(num, den, out=np.zeros_like(num), where=den != 0)
    return ReconResult(grid.with_values(values), 0, 0.0, "BP")
