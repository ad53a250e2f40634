"""Monte-Carlo sensor-radius uncertainty sweep and operator-perturbation sweep."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .forward_fd import FdModel, forward_fd, make_frequency_grid
from .forward_td import TdModel, forward_td
from .geometry import AcousticConfig, PERTURB_MODES, make_sensor_ring, make_shepp_logan, perturb_radius
from .metrics import delta_metric, pearson, spectral_norm
from .noise import FILTER_DESCRIPTION, NoiseSpec, add_noise, bandpass
from .recon import SolverSettings, backproject, tikhonov_solve

logger = logging.getLogger(__name__)

METHODS = ("TDMM", "FDMM", "BP")
UNCERTAINTY_HEADER = "x_percent,trial,seed,method,pc,iterations,wall_time_s"
DELTA_HEADER = "x_percent,delta_td,delta_fd"

_X_DEFAULT = (0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 5.0, 10.0)

PROFILES = {
    # 130 ns keeps every TOF of the 30 mm field inside 256 samples up to X = 10 %
    "desk": dict(nx=32, ny=32, side_length_m=0.03, radius_m=0.0225, n_sensors=60,
                 vs_mps=1500.0, dt_s=130e-9, nt=256, f_lo_hz=0.1e6, f_hi_hz=20e6,
                 x_percents=_X_DEFAULT, trials=10, methods=METHODS, mode="common", seed=0,
                 alpha=0.0, max_iters=20, rel_tol=1e-6, out_dir="sweep_out"),
    "full": dict(nx=64, ny=64, side_length_m=0.03, radius_m=0.0225, n_sensors=120,
                  vs_mps=1500.0, dt_s=50e-9, nt=420, f_lo_hz=0.1e6, f_hi_hz=20e6,
                  x_percents=_X_DEFAULT, trials=50, methods=METHODS, mode="common", seed=0,
                  alpha=0.0, max_iters=20, rel_tol=1e-6, out_dir="sweep_out"),
}
# settings that follow the profile but are not config-file keys
PROFILE_EXTRAS = {
    "desk": dict(out_of_window="raise", fd_memory_cap=1 << 30),
    # 420 samples of 50 ns cannot hold the far side of the 30 mm field
    "full": dict(out_of_window="truncate", fd_memory_cap=2 << 30),
}


@dataclass(frozen=True)
class SweepConfig:
    nx: int = 32
    ny: int = 32
    side_length_m: float = 0.03
    radius_m: float = 0.0225
    n_sensors: int = 60
    vs_mps: float = 1500.0
    dt_s: float = 130e-9
    nt: int = 256
    f_lo_hz: float = 0.1e6
    f_hi_hz: float = 20e6
    x_percents: tuple = _X_DEFAULT
    trials: int = 10
    methods: tuple = METHODS
    mode: str = "common"
    seed: int = 0
    alpha: float = 0.0
    max_iters: int = 20
    rel_tol: float = 1e-6
    out_dir: str = "sweep_out"
    profile: str = "desk"
    # not part of the config-file key set
    out_of_window: str = "raise"
    fd_memory_cap: int = 1 << 30
    noise_fraction: float = 0.01
    threads: int = 1
    save_images: bool = True

    def __post_init__(self):
        object.__setattr__(self, "x_percents", tuple(float(x) for x in self.x_percents))
        object.__setattr__(self, "methods", tuple(m.upper() for m in self.methods))
        if any(x < 0 for x in self.x_percents) or not self.x_percents:
            raise ValueError("x_percents must be a non-empty list of values >= 0")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.methods or any(m not in METHODS for m in self.methods):
            raise ValueError(f"methods must be a non-empty subset of {METHODS}, got {self.methods}")
        if self.mode not in PERTURB_MODES:
            raise ValueError(f"mode must be one of {PERTURB_MODES}, got {self.mode!r}")
        if self.profile not in PROFILES:
            raise ValueError(f"profile must be one of {tuple(PROFILES)}, got {self.profile!r}")
        # validates the acoustic parameters early
        self.acoustic()
        SolverSettings(self.alpha, self.max_iters, self.rel_tol)

    @classmethod
    def from_profile(cls, profile: str = "desk", **overrides) -> "SweepConfig":
        if profile not in PROFILES:
            raise ValueError(f"unknown profile {profile!r}; choose from {tuple(PROFILES)}")
        values = dict(PROFILES[profile], **PROFILE_EXTRAS[profile], profile=profile)
        values.update(overrides)
        return cls(**values)

    def acoustic(self) -> AcousticConfig:
        return AcousticConfig(self.vs_mps, self.dt_s, self.nt, self.f_lo_hz, self.f_hi_hz)

    def solver(self) -> SolverSettings:
        return SolverSettings(self.alpha, self.max_iters, self.rel_tol, relative_alpha=True)

    def file_keys(self) -> dict:
        """The values that round-trip through a config file."""
        keys = PROFILES["desk"].keys() | {"profile"}
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name in keys}


CONFIG_KEYS = tuple(PROFILES["desk"].keys()) + ("profile",)


class TrialError(RuntimeError):
    """A sweep trial failed; ``__cause__`` holds the original exception."""


def derive_seed(master: int, x_percent: float, trial: int) -> int:
    """Seed for one trial, independent of how many other trials or X values run."""
    ss = np.random.SeedSequence([int(master), int(round(x_percent * 1e6)), int(trial)])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass
class SweepResult:
    config: SweepConfig
    rows: list = field(default_factory=list)
    averaged: dict = field(default_factory=dict)

    def summary(self) -> dict:
        """Mean and standard deviation of PC keyed by ``(x_percent, method)``."""
        out = {}
        for x in self.config.x_percents:
            for m in self.config.methods:
                pcs = np.array([r["pc"] for r in self.rows if r["x_percent"] == x and r["method"] == m])
                out[(x, m)] = (float(pcs.mean()), float(pcs.std()))
        return out

    def mean_pc(self, x: float, method: str) -> float:
        return self.summary()[(float(x), method)][0]

    def to_csv(self, path) -> None:
        lines = [UNCERTAINTY_HEADER]
        for r in self.rows:
            lines.append(f"{r['x_percent']!r},{r['trial']},{r['seed']},{r['method']},{r['pc']!r},"
                         f"{r['iterations']},{r['wall_time_s']:.6f}")
        Path(path).write_text("\n".join(lines) + "\n")


def _phantom(cfg: SweepConfig):
    return make_shepp_logan(cfg.nx, cfg.ny, cfg.side_length_m)


def _run_trial(cfg: SweepConfig, x: float, trial: int, phantom, ring, clean_td, clean_fd, freq_grid):
    acoustic = cfg.acoustic()
    seed = derive_seed(cfg.seed, x, trial)
    pert_seed, noise_seed, fd_noise_seed = (int(s) for s in
                                            np.random.SeedSequence(seed).generate_state(3))
    moved = perturb_radius(ring, x, cfg.mode, pert_seed)
    rows, images = [], {}
    td_data = fd_data = None
    if "TDMM" in cfg.methods or "BP" in cfg.methods:
        td_data = add_noise(bandpass(clean_td, cfg.f_lo_hz, cfg.f_hi_hz),
                            NoiseSpec(cfg.noise_fraction, noise_seed))
    if "FDMM" in cfg.methods:
        fd_data = add_noise(bandpass(clean_fd, cfg.f_lo_hz, cfg.f_hi_hz, fs=1.0 / cfg.dt_s),
                            NoiseSpec(cfg.noise_fraction, fd_noise_seed))
    for method in cfg.methods:
        start = time.perf_counter()
        try:
            if method == "TDMM":
                model = TdModel(phantom, moved, acoustic, cfg.out_of_window)
                res = tikhonov_solve(model, td_data, cfg.solver())
            elif method == "FDMM":
                model = FdModel(phantom, moved, freq_grid, acoustic, memory_cap=cfg.fd_memory_cap)
                res = tikhonov_solve(model, fd_data, cfg.solver())
                del model
            else:
                res = backproject(td_data, moved, phantom, acoustic)
        except Exception as exc:
            raise TrialError(f"sweep failed at X={x}%, trial {trial}, method {method}: {exc}") from exc
        elapsed = time.perf_counter() - start
        rows.append({"x_percent": x, "trial": trial, "seed": seed, "method": method,
                     "pc": pearson(res.image, phantom), "iterations": res.iterations_used,
                     "wall_time_s": elapsed})
        images[method] = res.values
    logger.info("X=%g%% trial %d: %s", x, trial,
                ", ".join(f"{r['method']} PC={r['pc']:.3f}" for r in rows))
    return x, trial, rows, images


def run_uncertainty_sweep(cfg: SweepConfig) -> SweepResult:
    """Reconstruct noisy Shepp-Logan data with models built on perturbed sensor radii.

    Data always come from the nominal ring; TDMM and FDMM invert with matrices
    assembled on the perturbed ring, BP back-projects from the perturbed positions.
    """
    acoustic = cfg.acoustic()
    phantom = _phantom(cfg)
    ring = make_sensor_ring(cfg.radius_m, cfg.n_sensors)
    clean_td = clean_fd = freq_grid = None
    if "TDMM" in cfg.methods or "BP" in cfg.methods:
        clean_td = forward_td(phantom, TdModel(phantom, ring, acoustic, cfg.out_of_window))
    if "FDMM" in cfg.methods:
        freq_grid = make_frequency_grid(acoustic)
        true_fd = FdModel(phantom, ring, freq_grid, acoustic, representation="matrix_free")
        clean_fd = forward_fd(phantom, true_fd)

    jobs = [(x, t) for x in cfg.x_percents for t in range(cfg.trials)]
    args = (phantom, ring, clean_td, clean_fd, freq_grid)
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            outputs = list(pool.map(lambda job: _run_trial(cfg, *job, *args), jobs))
    else:
        outputs = [_run_trial(cfg, x, t, *args) for x, t in jobs]

    order = {m: i for i, m in enumerate(cfg.methods)}
    rows = [r for _, _, rs, _ in outputs for r in rs]
    rows.sort(key=lambda r: (cfg.x_percents.index(r["x_percent"]), r["trial"], order[r["method"]]))
    averaged = {}
    for x in cfg.x_percents:
        for m in cfg.methods:
            stack = [imgs[m] for xx, _, _, imgs in outputs if xx == x]
            averaged[(x, m)] = phantom.with_values(np.mean(stack, axis=0))
    return SweepResult(cfg, rows, averaged)


def run_delta_sweep(cfg: SweepConfig, tol: float = 1e-6, max_iters: int = 10_000) -> list:
    """``(x_percent, delta_td, delta_fd)`` for deterministic radius offsets ``R(1 + X/100)``.

    Large offsets push TOFs past the record, so the time-domain pair is built
    with out-of-window entries dropped.
    """
    acoustic = cfg.acoustic()
    grid = _phantom(cfg)
    ring = make_sensor_ring(cfg.radius_m, cfg.n_sensors)
    freq_grid = make_frequency_grid(acoustic)
    td_true = TdModel(grid, ring, acoustic, out_of_window="truncate")
    fd_repr = "auto"
    fd_probe = FdModel(grid, ring, freq_grid, acoustic, representation="matrix_free")
    if 2 * fd_probe.estimated_bytes() > cfg.fd_memory_cap:
        fd_repr = "matrix_free"
    fd_true = fd_probe if fd_repr == "matrix_free" else FdModel(
        grid, ring, freq_grid, acoustic, memory_cap=cfg.fd_memory_cap)
    norm_td = spectral_norm(td_true, tol, max_iters)
    norm_fd = spectral_norm(fd_true, tol, max_iters)
    rows = []
    for x in cfg.x_percents:
        moved = perturb_radius(ring, x, "deterministic", cfg.seed)
        td_nom = TdModel(grid, moved, acoustic, out_of_window="truncate")
        fd_nom = FdModel(grid, moved, freq_grid, acoustic, representation=fd_repr,
                         memory_cap=cfg.fd_memory_cap)
        d_td = delta_metric((td_true, td_nom), tol, max_iters, true_norm=norm_td)
        d_fd = delta_metric((fd_true, fd_nom), tol, max_iters, true_norm=norm_fd)
        logger.info("X=%g%%: delta_td=%.4f delta_fd=%.4f", x, d_td, d_fd)
        rows.append((x, d_td, d_fd))
    return rows


def write_delta_csv(path, rows) -> None:
    lines = [DELTA_HEADER] + [f"{x!r},{a!r},{k!r}" for x, a, k in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def percent_label(x: float) -> str:
    return f"{x:g}"


def write_sweep_outputs(result: SweepResult, out_dir) -> list:
    """CSV of all trials plus averaged images ``avg_<method>_x<percent>.pgm``."""
    from .io import write_image

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = [out_dir / "uncertainty.csv"]
    result.to_csv(written[0])
    if result.config.save_images:
        for (x, m), img in result.averaged.items():
            path = out_dir / f"avg_{m.lower()}_x{percent_label(x)}.pgm"
            write_image(path, img)
            written.append(path)
    return written


def describe_run(cfg: SweepConfig) -> dict:
    """Config echo for manifests, including settings outside the config-file keys."""
    out = asdict(cfg)
    out["filter"] = FILTER_DESCRIPTION
    return out


def with_overrides(cfg: SweepConfig, **kw) -> SweepConfig:
    return replace(cfg, **kw)
