"""Frequency-domain model matrix, explicit or generated on the fly.

Entries follow ``-1j * k * dV * exp(+1j * k * d) / (4 pi d)``. The matching
time-to-frequency transform is ``P(f_p) = vs * dt * sum_k p[k] exp(+2j pi p k / n_t)``,
i.e. ``vs * dt * conj(fft(p))`` for real traces (see :func:`spectra_from_sinogram`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator

from ._validation import check_finite
from .geometry import AcousticConfig, ImageGrid, SensorArray, pixel_sensor_distances

SIGN_CONVENTION = "exp(+i k d); P(f) = vs*dt*sum_k p[k] exp(+2j*pi*p*k/nt)"
DEFAULT_MEMORY_CAP = 1 << 30
# rows of the phasor recurrence between exact re-evaluations
_REANCHOR = 32
# complex entries generated per chunk in matrix-free mode
_CHUNK_ENTRIES = 1 << 21


@dataclass(frozen=True, eq=False)
class FrequencyGrid:
    freqs: np.ndarray
    vs: float
    indices: np.ndarray | None = None

    def __post_init__(self):
        f = np.asarray(self.freqs, dtype=float).ravel()
        if f.size == 0:
            raise ValueError("frequency grid is empty")
        if np.any(f <= 0):
            raise ValueError("frequencies must be strictly positive")
        if np.any(np.diff(f) <= 0):
            raise ValueError("frequencies must be strictly increasing")
        object.__setattr__(self, "freqs", f)
        if self.indices is not None:
            object.__setattr__(self, "indices", np.asarray(self.indices, dtype=np.int64))

    @property
    def n_freqs(self) -> int:
        return self.freqs.size

    @property
    def wavenumbers(self) -> np.ndarray:
        return 2.0 * np.pi * self.freqs / self.vs

    def is_uniform(self) -> bool:
        if self.n_freqs < 3:
            return True
        step = np.diff(self.freqs)
        return bool(np.allclose(step, step[0], rtol=1e-12, atol=0))


@dataclass(frozen=True, eq=False)
class SpectralData:
    """Complex spectra, one row per sensor, sampled on ``freq_grid``."""

    data: np.ndarray
    freq_grid: FrequencyGrid
    sensors: SensorArray | None = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=complex)
        if data.ndim != 2 or data.shape[1] != self.freq_grid.n_freqs:
            raise ValueError(
                f"spectral data must have shape (n_d, {self.freq_grid.n_freqs}), got {data.shape}")
        check_finite(data, "spectral data")
        object.__setattr__(self, "data", data)

    @property
    def n_sensors(self) -> int:
        return self.data.shape[0]

    def with_data(self, data) -> "SpectralData":
        return SpectralData(np.asarray(data, dtype=complex).reshape(self.data.shape),
                            self.freq_grid, self.sensors)


def make_frequency_grid(cfg: AcousticConfig) -> FrequencyGrid:
    """Positive DFT bins ``p / (n_t dt)`` that fall inside ``[f_lo, min(f_hi, Nyquist)]``."""
    p = np.arange(1, cfg.nt // 2 + 1)
    f = p / (cfg.nt * cfg.dt)
    keep = (f >= cfg.f_lo) & (f <= cfg.f_hi)
    if not keep.any():
        raise ValueError(
            f"no DFT frequency in band [{cfg.f_lo}, {min(cfg.f_hi, cfg.nyquist)}] Hz "
            f"for nt={cfg.nt}, dt={cfg.dt}")
    return FrequencyGrid(f[keep], cfg.vs, p[keep])


def phasors(k: np.ndarray, d: np.ndarray, uniform: bool) -> np.ndarray:
    """``exp(1j * k[p] * d[..., j])`` with shape ``d.shape[:-1] + (len(k), d.shape[-1])``.

    Uniformly spaced wavenumbers use a multiplicative recurrence, re-seeded
    with an exact exponential every few rows to bound round-off drift.
    """
    d = np.asarray(d, dtype=float)
    out = np.empty(d.shape[:-1] + (k.size, d.shape[-1]), dtype=complex)
    if not uniform or k.size < 3:
        out[...] = np.exp(1j * k[:, None] * d[..., None, :])
        return out
    step = np.exp(1j * (k[1] - k[0]) * d)
    for p in range(k.size):
        if p % _REANCHOR == 0:
            out[..., p, :] = np.exp(1j * k[p] * d)
        else:
            np.multiply(out[..., p - 1, :], step, out=out[..., p, :])
    return out


class FdModel:
    """Frequency-domain forward model ``K`` of shape (n_d*n_f, N).

    Parameters
    ----------
    grid, sensors, freq_grid, config
        Geometry and sampling the operator is built for.
    representation : {"auto", "explicit", "matrix_free"}
        ``auto`` stores the matrix only when it fits in ``memory_cap`` bytes.
    memory_cap : int
        Upper bound on the explicit matrix size in bytes.
    """

    kind = "FD"

    def __init__(self, grid: ImageGrid, sensors: SensorArray, freq_grid: FrequencyGrid,
                 config: AcousticConfig, representation: str = "auto",
                 memory_cap: int = DEFAULT_MEMORY_CAP):
        if representation not in ("auto", "explicit", "matrix_free"):
            raise ValueError(f"unknown representation {representation!r}")
        self.grid = grid
        self.sensors = sensors
        self.freq_grid = freq_grid
        self.config = config
        self.memory_cap = memory_cap
        self.distances = pixel_sensor_distances(grid, sensors)
        k = 2.0 * np.pi * freq_grid.freqs / config.vs
        self._k = k
        self._coef = -1j * k * grid.voxel_volume / (4.0 * np.pi)
        self._uniform = freq_grid.is_uniform()
        nbytes = self.estimated_bytes()
        if representation == "auto":
            representation = "explicit" if nbytes <= memory_cap else "matrix_free"
        elif representation == "explicit" and nbytes > memory_cap:
            raise MemoryError(
                f"explicit K needs {nbytes / 2**30:.2f} GiB, above the cap of "
                f"{memory_cap / 2**30:.2f} GiB; use the matrix-free representation")
        self.representation = representation
        self.matrix = self.dense() if representation == "explicit" else None

    @property
    def shape(self) -> tuple[int, int]:
        return (self.sensors.n_sensors * self.freq_grid.n_freqs, self.grid.n_pixels)

    def estimated_bytes(self) -> int:
        m, n = self.shape
        return m * n * 16

    def _sensor_chunks(self):
        n_f, n = self.freq_grid.n_freqs, self.grid.n_pixels
        per = max(1, _CHUNK_ENTRIES // (n_f * n))
        for start in range(0, self.sensors.n_sensors, per):
            yield slice(start, min(start + per, self.sensors.n_sensors))

    def block(self, sensors: slice) -> np.ndarray:
        """Entries for a run of sensors, shape (n_sensors_in_slice, n_f, N)."""
        d = self.distances[sensors]
        e = phasors(self._k, d, self._uniform)
        e *= self._coef[None, :, None]
        e /= d[:, None, :]
        return e

    def dense(self) -> np.ndarray:
        m, n = self.shape
        out = np.empty((m, n), dtype=complex)
        n_f = self.freq_grid.n_freqs
        for sl in self._sensor_chunks():
            out[sl.start * n_f:sl.stop * n_f] = self.block(sl).reshape(-1, n)
        return out

    def apply(self, u) -> np.ndarray:
        u = np.asarray(u)
        if u.shape != (self.shape[1],):
            raise ValueError(f"input has shape {u.shape}, expected ({self.shape[1]},)")
        if self.matrix is not None:
            return self.matrix @ u
        n_f = self.freq_grid.n_freqs
        out = np.empty(self.shape[0], dtype=complex)
        for sl in self._sensor_chunks():
            d = self.distances[sl]
            e = phasors(self._k, d, self._uniform)
            w = u[None, :] / d
            out[sl.start * n_f:sl.stop * n_f] = (
                np.matmul(e, w[:, :, None])[..., 0] * self._coef[None, :]).ravel()
        return out

    def adjoint(self, v) -> np.ndarray:
        v = np.asarray(v)
        if v.shape != (self.shape[0],):
            raise ValueError(f"input has shape {v.shape}, expected ({self.shape[0]},)")
        if self.matrix is not None:
            return np.conj(np.conj(v) @ self.matrix)
        n_f = self.freq_grid.n_freqs
        out = np.zeros(self.shape[1], dtype=complex)
        for sl in self._sensor_chunks():
            d = self.distances[sl]
            e = phasors(self._k, d, self._uniform)
            vv = v[sl.start * n_f:sl.stop * n_f].reshape(-1, n_f) * np.conj(self._coef)[None, :]
            # sum_p conj(e[c, p, j]) * vv[c, p]
            acc = np.conj(np.matmul(np.conj(vv)[:, None, :], e)[:, 0, :])
            out += (acc / d).sum(axis=0)
        return out

    def operator(self) -> LinearOperator:
        return LinearOperator(self.shape, matvec=self.apply, rmatvec=self.adjoint, dtype=complex)


def assemble_K(grid: ImageGrid, sensors: SensorArray, freq_grid: FrequencyGrid,
               cfg: AcousticConfig, representation: str = "auto",
               memory_cap: int = DEFAULT_MEMORY_CAP) -> FdModel:
    return FdModel(grid, sensors, freq_grid, cfg, representation, memory_cap)


def forward_fd(p0: ImageGrid, model: FdModel) -> SpectralData:
    """Simulated spectra ``K p0`` reshaped to (n_d, n_f)."""
    values = p0.pixel_values if isinstance(p0, ImageGrid) else np.asarray(p0, dtype=float).ravel()
    if values.size != model.shape[1]:
        raise ValueError(f"image has {values.size} pixels, model expects {model.shape[1]}")
    data = model.apply(values).reshape(model.sensors.n_sensors, model.freq_grid.n_freqs)
    return SpectralData(data, model.freq_grid, model.sensors)


def spectra_from_sinogram(sino, freq_grid: FrequencyGrid, vs: float) -> SpectralData:
    """Transform time traces to the model's frequency convention at the grid's DFT bins."""
    if freq_grid.indices is None:
        raise ValueError("frequency grid carries no DFT bin indices")
    data = np.asarray(sino.data, dtype=float)
    spec = vs * sino.dt * np.conj(np.fft.fft(data, axis=1))[:, freq_grid.indices]
    if sino.t0 != 0:
        spec = spec * np.exp(2j * np.pi * freq_grid.freqs * sino.t0)[None, :]
    return SpectralData(spec, freq_grid, sino.sensors)
