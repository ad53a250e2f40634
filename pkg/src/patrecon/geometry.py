"""Imaging grids, sensor rings, phantoms and the radial perturbation model."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ._validation import check_positive, check_count

# Original ten-ellipse Shepp-Logan table:
# (x0, y0, semi-axis a, semi-axis b, rotation in degrees, additive intensity)
SHEPP_LOGAN_ELLIPSES = np.array([
    [0.0, 0.0, 0.69, 0.92, 0.0, 2.0],
    [0.0, -0.0184, 0.6624, 0.874, 0.0, -0.98],
    [0.22, 0.0, 0.11, 0.31, -18.0, -0.02],
    [-0.22, 0.0, 0.16, 0.41, 18.0, -0.02],
    [0.0, 0.35, 0.21, 0.25, 0.0, 0.01],
    [0.0, 0.1, 0.046, 0.046, 0.0, 0.01],
    [0.0, -0.1, 0.046, 0.046, 0.0, 0.01],
    [-0.08, -0.605, 0.046, 0.023, 0.0, 0.01],
    [0.0, -0.605, 0.023, 0.023, 0.0, 0.01],
    [0.06, -0.605, 0.023, 0.046, 0.0, 0.01],
])

PERTURB_MODES = ("common", "per_sensor", "deterministic")


@dataclass(frozen=True, eq=False)
class ImageGrid:
    """Square image region of ``nx`` by ``ny`` pixels centred on ``center``.

    Pixel ``j`` sits at column ``j % nx`` and row ``j // nx``; rows run along +y.
    Pixels are treated as point sources in the sensor plane, so the voxel
    volume is the pixel area times a unit (1 m) thickness.
    """

    nx: int
    ny: int
    side_length: float
    pixel_values: np.ndarray = None
    center: tuple = (0.0, 0.0)

    def __post_init__(self):
        check_count(self.nx, "nx")
        check_count(self.ny, "ny")
        check_positive(self.side_length, "side_length")
        if self.pixel_values is None:
            values = np.zeros(self.nx * self.ny)
        else:
            values = np.asarray(self.pixel_values, dtype=float).reshape(-1)
            if values.size != self.nx * self.ny:
                raise ValueError(
                    f"pixel_values has {values.size} entries, expected nx*ny = {self.nx * self.ny}")
        object.__setattr__(self, "pixel_values", values)
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))

    @property
    def n_pixels(self) -> int:
        return self.nx * self.ny

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def pixel_size(self) -> tuple[float, float]:
        return (self.side_length / self.nx, self.side_length / self.ny)

    @property
    def voxel_volume(self) -> float:
        dx, dy = self.pixel_size
        return dx * dy * 1.0

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        """Pixel-centre coordinates along x and y, symmetric about the centre."""
        ix = np.arange(self.nx)
        iy = np.arange(self.ny)
        half = self.side_length / 2.0
        xs = self.center[0] + half * ((2 * ix + 1 - self.nx) / self.nx)
        ys = self.center[1] + half * ((2 * iy + 1 - self.ny) / self.ny)
        return xs, ys

    def coordinates(self) -> np.ndarray:
        """(N, 2) array of pixel centres in flat index order."""
        xs, ys = self.axes()
        xx, yy = np.meshgrid(xs, ys)
        return np.column_stack([xx.ravel(), yy.ravel()])

    def pixel_center(self, j: int) -> np.ndarray:
        if not 0 <= j < self.n_pixels:
            raise IndexError(f"pixel index {j} outside [0, {self.n_pixels})")
        xs, ys = self.axes()
        return np.array([xs[j % self.nx], ys[j // self.nx]])

    def image(self) -> np.ndarray:
        """Pixel values as a (ny, nx) array."""
        return self.pixel_values.reshape(self.ny, self.nx)

    def with_values(self, values) -> "ImageGrid":
        return replace(self, pixel_values=np.asarray(values, dtype=float).reshape(-1))

    def geometry_key(self) -> dict:
        return {"nx": self.nx, "ny": self.ny, "side_length": self.side_length,
                "center": list(self.center)}


@dataclass(frozen=True)
class Perturbation:
    x_percent: float
    mode: str
    seed: int


@dataclass(frozen=True, eq=False)
class SensorArray:
    """Point detectors on (or near) a circle of nominal radius ``radius``.

    ``provenance`` is ``None`` for a nominal ring and a :class:`Perturbation`
    record once the radii have been disturbed.
    """

    positions: np.ndarray
    radius: float
    center: tuple = (0.0, 0.0)
    provenance: Perturbation | None = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 2 or pos.shape[0] < 1:
            raise ValueError(f"positions must be an (n_d, 2) array with n_d >= 1, got shape {pos.shape}")
        check_positive(self.radius, "radius")
        if len(np.unique(pos, axis=0)) != len(pos):
            raise ValueError("sensor positions must be distinct")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))

    @property
    def n_sensors(self) -> int:
        return self.positions.shape[0]

    @property
    def is_nominal(self) -> bool:
        return self.provenance is None

    def radii(self) -> np.ndarray:
        return np.hypot(*(self.positions - np.asarray(self.center)).T)

    def angles(self) -> np.ndarray:
        rel = self.positions - np.asarray(self.center)
        return np.arctan2(rel[:, 1], rel[:, 0])

    def inward_normals(self) -> np.ndarray:
        rel = np.asarray(self.center) - self.positions
        return rel / np.linalg.norm(rel, axis=1, keepdims=True)

    def geometry_key(self) -> dict:
        prov = None
        if self.provenance is not None:
            prov = {"x_percent": self.provenance.x_percent, "mode": self.provenance.mode,
                    "seed": self.provenance.seed}
        return {"positions": self.positions.tolist(), "radius": self.radius,
                "center": list(self.center), "provenance": prov}


@dataclass(frozen=True)
class AcousticConfig:
    """Medium and sampling parameters; sample ``k`` is taken at ``t0 + k*dt``."""

    vs: float = 1500.0
    dt: float = 50e-9
    nt: int = 420
    f_lo: float = 0.1e6
    f_hi: float = 20e6
    t0: float = 0.0

    def __post_init__(self):
        check_positive(self.vs, "vs")
        check_positive(self.dt, "dt")
        if int(self.nt) != self.nt or self.nt < 2:
            raise ValueError(f"nt must be an integer >= 2, got {self.nt}")
        if not (0 <= self.f_lo < self.f_hi):
            raise ValueError(f"band limits must satisfy 0 <= f_lo < f_hi, got {self.f_lo}, {self.f_hi}")

    @property
    def nyquist(self) -> float:
        return 1.0 / (2.0 * self.dt)

    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.nt) * self.dt


def rasterize_ellipses(table, nx: int, ny: int) -> np.ndarray:
    """Sum ellipse intensities over pixel centres of a [-1, 1]^2 raster.

    Returns a (ny, nx) array; each pixel receives the intensity of every
    ellipse whose closed interior contains its centre.
    """
    table = np.asarray(table, dtype=float)
    xs = (2 * np.arange(nx) + 1 - nx) / nx
    ys = (2 * np.arange(ny) + 1 - ny) / ny
    xx, yy = np.meshgrid(xs, ys)
    out = np.zeros((ny, nx))
    for x0, y0, a, b, phi_deg, value in table:
        phi = np.deg2rad(phi_deg)
        c, s = np.cos(phi), np.sin(phi)
        dx, dy = xx - x0, yy - y0
        u = dx * c + dy * s
        v = -dx * s + dy * c
        out[(u / a) ** 2 + (v / b) ** 2 <= 1.0] += value
    return out


def make_shepp_logan(nx: int, ny: int, side_length: float = 0.03, center=(0.0, 0.0)) -> ImageGrid:
    """Shepp-Logan phantom, rescaled to [0, 1], covering a ``side_length`` square."""
    check_count(nx, "nx")
    check_count(ny, "ny")
    img = rasterize_ellipses(SHEPP_LOGAN_ELLIPSES, nx, ny)
    lo, hi = img.min(), img.max()
    if hi > lo:
        img = (img - lo) / (hi - lo)
    return ImageGrid(nx, ny, side_length, img.ravel(), center)


def make_point_phantom(nx: int, ny: int, side_length: float, index: int | tuple = None,
                       center=(0.0, 0.0)) -> ImageGrid:
    """Image with a single unit pixel, at the middle of the grid by default."""
    values = np.zeros(nx * ny)
    if index is None:
        index = (ny // 2) * nx + nx // 2
    elif isinstance(index, tuple):
        ix, iy = index
        index = iy * nx + ix
    values[index] = 1.0
    return ImageGrid(nx, ny, side_length, values, center)


def make_sensor_ring(radius: float, n_sensors: int, center=(0.0, 0.0)) -> SensorArray:
    """``n_sensors`` equally spaced detectors starting on the +x axis."""
    check_positive(radius, "radius")
    check_count(n_sensors, "n_sensors")
    theta = 2.0 * np.pi * np.arange(n_sensors) / n_sensors
    pos = np.column_stack([center[0] + radius * np.cos(theta), center[1] + radius * np.sin(theta)])
    return SensorArray(pos, radius, center)


def perturb_radius(sensors: SensorArray, x_percent: float, mode: str = "common",
                   seed: int = 0) -> SensorArray:
    """Move sensors along their rays to radii in ``[R(1-X/100), R(1+X/100)]``.

    ``common`` draws one uniform radius for the whole ring, ``per_sensor``
    draws one per detector and ``deterministic`` places every detector at
    ``R(1+X/100)``. Angles are kept.
    """
    if x_percent < 0:
        raise ValueError(f"x_percent must be >= 0, got {x_percent}")
    if mode not in PERTURB_MODES:
        raise ValueError(f"mode must be one of {PERTURB_MODES}, got {mode!r}")
    if not sensors.is_nominal:
        raise ValueError("sensor array is already perturbed; perturb the nominal ring instead")
    R = sensors.radius
    n = sensors.n_sensors
    rng = np.random.default_rng(seed)
    lo, hi = R * (1 - x_percent / 100.0), R * (1 + x_percent / 100.0)
    if x_percent == 0:
        radii = None
    elif mode == "common":
        radii = np.full(n, rng.uniform(lo, hi))
    elif mode == "per_sensor":
        radii = rng.uniform(lo, hi, size=n)
    else:
        radii = np.full(n, hi)
    if radii is None:
        positions = sensors.positions.copy()
    else:
        theta = sensors.angles()
        c = np.asarray(sensors.center)
        positions = np.column_stack([c[0] + radii * np.cos(theta), c[1] + radii * np.sin(theta)])
    return SensorArray(positions, R, sensors.center,
                       Perturbation(float(x_percent), mode, int(seed)))


def pixel_sensor_distances(grid: ImageGrid, sensors: SensorArray) -> np.ndarray:
    """(N_d, N) Euclidean distances; raises if any pixel sits on a sensor."""
    pix = grid.coordinates()
    diff = sensors.positions[:, None, :] - pix[None, :, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])
    if np.any(dist == 0):
        l, j = np.argwhere(dist == 0)[0]
        raise ValueError(f"sensor {l} coincides with pixel {j}: zero propagation distance")
    return dist
