"""Time-domain model matrix: TOF-binned point responses followed by a time derivative."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, aslinearoperator

from ._validation import check_count, check_finite
from .geometry import AcousticConfig, ImageGrid, SensorArray, pixel_sensor_distances

OUT_OF_WINDOW = ("raise", "truncate")


@dataclass(frozen=True, eq=False)
class Sinogram:
    """Time traces, one row per sensor; sample ``k`` is at ``t0 + k*dt``."""

    data: np.ndarray
    dt: float
    t0: float = 0.0
    sensors: SensorArray | None = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2:
            raise ValueError(f"sinogram data must be 2-D (n_d, n_t), got shape {data.shape}")
        check_finite(data, "sinogram data")
        if self.sensors is not None and self.sensors.n_sensors != data.shape[0]:
            raise ValueError(
                f"sinogram has {data.shape[0]} rows but sensor array has {self.sensors.n_sensors}")
        object.__setattr__(self, "data", data)

    @property
    def n_sensors(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.n_samples) * self.dt

    def with_data(self, data) -> "Sinogram":
        return Sinogram(np.asarray(data, dtype=float).reshape(self.data.shape), self.dt, self.t0, self.sensors)


def tof_bins(distances: np.ndarray, cfg: AcousticConfig) -> np.ndarray:
    """Index of the unique sample window ``(t_k - dt/2, t_k + dt/2]`` holding each TOF.

    A TOF exactly on a window edge goes to the lower sample, so the windows
    partition the time axis.
    """
    x = (distances / cfg.vs - cfg.t0) / cfg.dt
    return np.ceil(x - 0.5).astype(np.int64)


def assemble_As(grid: ImageGrid, sensors: SensorArray, cfg: AcousticConfig,
                out_of_window: str = "raise") -> sp.csr_matrix:
    """Sparse point-response matrix of shape (n_d*n_t, N).

    Row ``l*n_t + k`` and column ``j`` hold
    ``dV / (4 pi vs^2 dt^2) / |r_l - r_j|`` when the TOF from pixel ``j`` to
    sensor ``l`` lands in sample ``k``. TOFs outside the record raise unless
    ``out_of_window="truncate"``, in which case those entries are dropped.
    """
    if out_of_window not in OUT_OF_WINDOW:
        raise ValueError(f"out_of_window must be one of {OUT_OF_WINDOW}, got {out_of_window!r}")
    dist = pixel_sensor_distances(grid, sensors)
    bins = tof_bins(dist, cfg)
    inside = (bins >= 0) & (bins < cfg.nt)
    if not inside.all() and out_of_window == "raise":
        l, j = np.argwhere(~inside)[0]
        tof = dist[l, j] / cfg.vs
        raise ValueError(
            f"time of flight {tof:.6e} s from pixel {j} to sensor {l} falls outside the "
            f"recorded window [{cfg.t0:.6e}, {cfg.t0 + (cfg.nt - 1) * cfg.dt:.6e}] s "
            f"({(~inside).sum()} sensor/pixel pairs affected)")
    n_d, n = dist.shape
    scale = grid.voxel_volume / (4.0 * np.pi * cfg.vs ** 2 * cfg.dt ** 2)
    l_idx, j_idx = np.nonzero(inside)
    rows = l_idx * cfg.nt + bins[l_idx, j_idx]
    vals = scale / dist[l_idx, j_idx]
    return sp.csr_matrix((vals, (rows, j_idx)), shape=(n_d * cfg.nt, n))


def time_derivative_block(nt: int) -> sp.csr_matrix:
    """(x[k+1] - x[k-1]) / 2 inside, one-sided first differences at the ends."""
    check_count(nt, "nt", minimum=3)
    half = np.full(nt - 1, 0.5)
    block = sp.diags([-half, half], [-1, 1], shape=(nt, nt), format="lil")
    block[0, 0], block[0, 1] = -1.0, 1.0
    block[nt - 1, nt - 2], block[nt - 1, nt - 1] = -1.0, 1.0
    return block.tocsr()


def assemble_Aoa(n_d: int, n_t: int) -> sp.csr_matrix:
    """Block-diagonal derivative operator, one ``n_t`` block per sensor."""
    check_count(n_d, "n_d")
    return sp.block_diag([time_derivative_block(n_t)] * n_d, format="csr")


class TdModel:
    """Time-domain forward model ``A = A_oa @ A_s``.

    Parameters
    ----------
    grid, sensors, config
        Geometry and sampling the matrix is built for.
    out_of_window : {"raise", "truncate"}
        What to do when a TOF falls outside the recorded window.
    """

    kind = "TD"

    def __init__(self, grid: ImageGrid, sensors: SensorArray, config: AcousticConfig,
                 out_of_window: str = "raise"):
        self.grid = grid
        self.sensors = sensors
        self.config = config
        self.out_of_window = out_of_window
        self.a_s = assemble_As(grid, sensors, config, out_of_window)
        self.a_oa = assemble_Aoa(sensors.n_sensors, config.nt)
        self.matrix = (self.a_oa @ self.a_s).tocsr()

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def operator(self) -> LinearOperator:
        return aslinearoperator(self.matrix)

    def apply(self, p0) -> np.ndarray:
        return self.matrix @ np.asarray(p0, dtype=float)

    def adjoint(self, y) -> np.ndarray:
        return self.matrix.T @ np.asarray(y, dtype=float)


def forward_td(p0: ImageGrid, model: TdModel) -> Sinogram:
    """Simulated sinogram ``A p0`` reshaped to (n_d, n_t)."""
    values = p0.pixel_values if isinstance(p0, ImageGrid) else np.asarray(p0, dtype=float).ravel()
    if values.size != model.shape[1]:
        raise ValueError(f"image has {values.size} pixels, model expects {model.shape[1]}")
    cfg = model.config
    data = model.apply(values).reshape(model.sensors.n_sensors, cfg.nt)
    return Sinogram(data, cfg.dt, cfg.t0, model.sensors)
