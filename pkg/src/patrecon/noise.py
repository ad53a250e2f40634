"""Measurement noise, transducer band-pass and true/nominal model pairs."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import signal

from ._validation import check_positive
from .forward_fd import DEFAULT_MEMORY_CAP, FdModel, SpectralData, make_frequency_grid
from .forward_td import Sinogram, TdModel
from .geometry import AcousticConfig, ImageGrid, Perturbation, make_sensor_ring, perturb_radius

FILTER_ORDER = 4
FILTER_DESCRIPTION = f"Butterworth order {FILTER_ORDER}, zero-phase (forward-backward sosfiltfilt)"


@dataclass(frozen=True)
class NoiseSpec:
    """Gaussian noise with sigma = ``fraction`` times the peak absolute amplitude."""

    fraction: float = 0.01
    seed: int = 0

    def __post_init__(self):
        check_positive(self.fraction, "fraction")


def snr_db(fraction: float) -> float:
    """Peak-amplitude-to-sigma ratio in dB for a given noise fraction."""
    return 20.0 * np.log10(1.0 / fraction)


def add_noise(data, spec: NoiseSpec):
    """Return a copy of ``data`` with zero-mean white Gaussian noise added.

    Complex spectra receive independent noise of the same sigma on the real
    and imaginary parts.
    """
    values = data.data
    peak = np.abs(values).max()
    if peak == 0:
        raise ValueError("cannot scale noise to an all-zero signal")
    sigma = spec.fraction * peak
    rng = np.random.default_rng(spec.seed)
    noise = rng.normal(0.0, sigma, size=values.shape)
    if np.iscomplexobj(values):
        noise = noise + 1j * rng.normal(0.0, sigma, size=values.shape)
    return data.with_data(values + noise)


def design_bandpass(f_lo: float, f_hi: float, fs: float, order: int = FILTER_ORDER):
    """Second-order sections for the band ``[f_lo, f_hi]``, or ``None`` for an all-pass.

    An upper edge at or above Nyquist leaves a high-pass; ``f_lo = 0`` leaves a low-pass.
    """
    if not (0 <= f_lo < f_hi):
        raise ValueError(f"band limits must satisfy 0 <= f_lo < f_hi, got {f_lo}, {f_hi}")
    nyq = fs / 2.0
    has_lo = f_lo > 0
    has_hi = f_hi < nyq
    if has_lo and f_lo >= nyq:
        raise ValueError(f"lower cutoff {f_lo} Hz is at or above Nyquist {nyq} Hz")
    if has_lo and has_hi:
        return signal.butter(order, [f_lo, f_hi], btype="bandpass", fs=fs, output="sos")
    if has_lo:
        return signal.butter(order, f_lo, btype="highpass", fs=fs, output="sos")
    if has_hi:
        return signal.butter(order, f_hi, btype="lowpass", fs=fs, output="sos")
    return None


def bandpass(data, f_lo: float, f_hi: float, fs: float | None = None):
    """Zero-phase band-pass of every sensor trace.

    Sinograms are filtered forward and backward in time. Spectra are
    multiplied by the equivalent squared magnitude response, which needs the
    sampling rate ``fs``.
    """
    if isinstance(data, SpectralData):
        if fs is None:
            raise ValueError("filtering spectra needs the sampling rate fs")
        sos = design_bandpass(f_lo, f_hi, fs)
        if sos is None:
            return data
        _, h = signal.sosfreqz(sos, worN=data.freq_grid.freqs, fs=fs)
        return data.with_data(data.data * (np.abs(h) ** 2)[None, :])
    fs = 1.0 / data.dt
    sos = design_bandpass(f_lo, f_hi, fs)
    if sos is None:
        return data
    return data.with_data(signal.sosfiltfilt(sos, data.data, axis=-1))


@dataclass(frozen=True, eq=False)
class ModelPair:
    """``true`` models the real acquisition; ``nominal`` is what the solver assumes."""

    true: TdModel | FdModel
    nominal: TdModel | FdModel
    perturbation: Perturbation

    def __post_init__(self):
        if self.true.kind != self.nominal.kind:
            raise ValueError("model pair mixes time- and frequency-domain models")
        if self.true.shape != self.nominal.shape:
            raise ValueError(f"model shapes differ: {self.true.shape} vs {self.nominal.shape}")

    @property
    def kind(self) -> str:
        return self.true.kind


def build_model(kind: str, grid: ImageGrid, sensors, cfg: AcousticConfig, *,
                out_of_window: str = "raise", representation: str = "auto",
                memory_cap: int = DEFAULT_MEMORY_CAP, freq_grid=None):
    if kind == "TD":
        return TdModel(grid, sensors, cfg, out_of_window)
    if kind == "FD":
        fg = freq_grid if freq_grid is not None else make_frequency_grid(cfg)
        return FdModel(grid, sensors, fg, cfg, representation, memory_cap)
    raise ValueError(f"kind must be 'TD' or 'FD', got {kind!r}")


def make_model_pair(kind: str, grid: ImageGrid, cfg: AcousticConfig, radius: float,
                    x_percent: float, mode: str = "deterministic", seed: int = 0, *,
                    n_sensors: int = 120, center=(0.0, 0.0), vs_percent: float = 0.0,
                    out_of_window: str = "raise", representation: str = "auto",
                    memory_cap: int = DEFAULT_MEMORY_CAP) -> ModelPair:
    """True model on the nominal ring and nominal model on the perturbed ring.

    ``vs_percent`` additionally scales the speed of sound assumed by the
    nominal model by ``1 + vs_percent/100``.
    """
    ring = make_sensor_ring(radius, n_sensors, center)
    moved = perturb_radius(ring, x_percent, mode, seed)
    cfg_nominal = replace(cfg, vs=cfg.vs * (1 + vs_percent / 100.0)) if vs_percent else cfg
    freq_grid = make_frequency_grid(cfg) if kind == "FD" else None
    opts = dict(out_of_window=out_of_window, representation=representation,
                memory_cap=memory_cap, freq_grid=freq_grid)
    true = build_model(kind, grid, ring, cfg, **opts)
    nominal = build_model(kind, grid, moved, cfg_nominal, **opts)
    return ModelPair(true, nominal, moved.provenance)
