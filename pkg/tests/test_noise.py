import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import signal

from patrecon.forward_fd import FrequencyGrid, SpectralData
from patrecon.forward_td import Sinogram, tof_bins
from patrecon.geometry import AcousticConfig, ImageGrid
from patrecon.noise import (FILTER_ORDER, ModelPair, NoiseSpec, add_noise, bandpass, build_model,
                            design_bandpass, make_model_pair, snr_db)


def _sino(values, dt=1e-8):
    return Sinogram(np.atleast_2d(values), dt)


def test_forty_db_at_one_percent():
    assert snr_db(0.01) == pytest.approx(40.0, abs=1e-12)
    with pytest.raises(ValueError):
        NoiseSpec(0.0)


def test_noise_sigma_and_independence():
    clean = np.zeros((10, 20000))
    clean[0, 0] = -4.0
    noisy = add_noise(_sino(clean), NoiseSpec(0.01, seed=42)).data
    n = (noisy - clean).ravel()
    assert n.size >= 1e5
    assert abs(n.std() / 0.04 - 1) < 0.02
    assert abs(n.mean()) < 0.04 * 0.02
    per_trace = noisy - clean
    lag1 = np.mean([np.corrcoef(tr[:-1], tr[1:])[0, 1] for tr in per_trace])
    assert abs(lag1) < 0.01
    across = np.corrcoef(per_trace[1], per_trace[2])[0, 1]
    assert abs(across) < 0.03


def test_noise_determinism():
    clean = _sino(np.sin(np.linspace(0, 10, 500)))
    a = add_noise(clean, NoiseSpec(0.01, 7)).data
    b = add_noise(clean, NoiseSpec(0.01, 7)).data
    c = add_noise(clean, NoiseSpec(0.01, 8)).data
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_noise_on_zero_signal_raises():
    with pytest.raises(ValueError, match="all-zero"):
        add_noise(_sino(np.zeros(10)), NoiseSpec())


def test_complex_noise_independent_parts():
    fg = FrequencyGrid(np.arange(1, 1001) * 1e3, 1500.0)
    clean = np.zeros((200, 1000), dtype=complex)
    clean[0, 0] = 3 + 4j
    noisy = add_noise(SpectralData(clean, fg), NoiseSpec(0.01, 3)).data - clean
    assert abs(noisy.real.std() / 0.05 - 1) < 0.02
    assert abs(noisy.imag.std() / 0.05 - 1) < 0.02
    assert abs(np.corrcoef(noisy.real.ravel(), noisy.imag.ravel())[0, 1]) < 0.01


def test_sinusoid_at_band_centre_preserved():
    fs, f_lo, f_hi = 20e6, 0.1e6, 2e6
    fc = np.sqrt(f_lo * f_hi)
    t = np.arange(40000) / fs
    x = np.sin(2 * np.pi * fc * t)
    y = bandpass(_sino(x, 1 / fs), f_lo, f_hi).data[0]
    mid = slice(10000, 30000)
    assert abs(np.abs(y[mid]).max() - 1.0) < 0.05


def test_dc_removed():
    y = bandpass(_sino(np.full(4000, 5.0), 50e-9), 0.1e6, 20e6).data
    assert np.abs(y).max() < 0.01 * 5.0


def test_cascade_matches_squared_response():
    fs, f_lo, f_hi = 20e6, 0.5e6, 4e6
    n = 1 << 14
    x = np.zeros(n)
    x[n // 2] = 1.0
    once = bandpass(_sino(x, 1 / fs), f_lo, f_hi)
    twice = bandpass(once, f_lo, f_hi).data[0]
    sos = design_bandpass(f_lo, f_hi, fs)
    f = np.fft.rfftfreq(n, 1 / fs)
    _, h = signal.sosfreqz(sos, worN=f, fs=fs)
    expected_once = np.fft.irfft(np.fft.rfft(x) * np.abs(h) ** 2, n)
    expected_twice = np.fft.irfft(np.fft.rfft(x) * np.abs(h) ** 4, n)
    np.testing.assert_allclose(once.data[0], expected_once, atol=1e-6 * np.abs(expected_once).max())
    np.testing.assert_allclose(twice, expected_twice, atol=1e-6 * np.abs(expected_twice).max())


def test_spectra_filter_uses_squared_magnitude():
    fs = 20e6
    fg = FrequencyGrid(np.linspace(0.05e6, 9e6, 50), 1500.0)
    spec = SpectralData(np.ones((2, 50), dtype=complex), fg)
    out = bandpass(spec, 0.1e6, 20e6, fs=fs).data
    _, h = signal.sosfreqz(signal.butter(FILTER_ORDER, 0.1e6, "highpass", fs=fs, output="sos"),
                           worN=fg.freqs, fs=fs)
    np.testing.assert_allclose(out[0], np.abs(h) ** 2, rtol=1e-12)
    with pytest.raises(ValueError, match="fs"):
        bandpass(spec, 0.1e6, 20e6)


@given(st.integers(0, 2**32 - 1))
def test_bandpass_linear(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(3, 300)), rng.normal(size=(3, 300))
    fa = bandpass(_sino(a, 50e-9), 0.1e6, 5e6).data
    fb = bandpass(_sino(b, 50e-9), 0.1e6, 5e6).data
    fab = bandpass(_sino(a + b, 50e-9), 0.1e6, 5e6).data
    np.testing.assert_allclose(fab, fa + fb, rtol=0, atol=1e-12 * np.abs(fab).max())


def test_design_variants():
    fs = 20e6
    assert design_bandpass(0.0, 20e6, fs) is None
    hp = design_bandpass(0.1e6, 10e6, fs)
    ref = signal.butter(FILTER_ORDER, 0.1e6, "highpass", fs=fs, output="sos")
    np.testing.assert_array_equal(hp, ref)
    lp = design_bandpass(0.0, 2e6, fs)
    np.testing.assert_array_equal(lp, signal.butter(FILTER_ORDER, 2e6, "lowpass", fs=fs, output="sos"))
    with pytest.raises(ValueError):
        design_bandpass(11e6, 12e6, fs)
    with pytest.raises(ValueError):
        design_bandpass(2e6, 1e6, fs)
    x = _sino(np.arange(10.0), 1 / fs)
    assert bandpass(x, 0.0, 30e6) is x


def _centre_grid():
    return ImageGrid(3, 3, 0.003)


@pytest.mark.parametrize("kind", ["TD", "FD"])
def test_zero_offset_pair_agrees(kind):
    cfg = AcousticConfig(vs=1500.0, dt=50e-9, nt=420, f_lo=0.1e6, f_hi=5e6)
    pair = make_model_pair(kind, ImageGrid(6, 6, 0.01), cfg, 0.0225, 0.0, "common", 3, n_sensors=10)
    if kind == "TD":
        assert (pair.true.matrix != pair.nominal.matrix).nnz == 0
    else:
        np.testing.assert_array_equal(pair.true.dense(), pair.nominal.dense())
    assert pair.kind == kind and pair.perturbation.x_percent == 0.0


def test_fd_pair_phasor_discrepancy():
    cfg = AcousticConfig(vs=1500.0, dt=50e-9, nt=420, f_lo=0.1e6, f_hi=20e6)
    pair = make_model_pair("FD", _centre_grid(), cfg, 0.0225, 1.0, "deterministic", n_sensors=4)
    fg = pair.true.freq_grid
    p = int(np.argmin(np.abs(fg.freqs - 1e6)))
    assert fg.freqs[p] == pytest.approx(1e6, rel=0.03)
    fg1 = FrequencyGrid(np.array([1e6]), 1500.0)
    true = build_model("FD", _centre_grid(), pair.true.sensors, cfg, freq_grid=fg1)
    nom = build_model("FD", _centre_grid(), pair.nominal.sensors, cfg, freq_grid=fg1)
    k = 2 * np.pi * 1e6 / 1500.0
    coef = -1j * k * _centre_grid().voxel_volume / (4 * np.pi)
    e_true = true.dense()[0, 4] / coef * 0.0225
    e_nom = nom.dense()[0, 4] / coef * 0.022725
    assert abs(e_true - 1.0) < 0.01
    # +1 % moves outward: the conjugate of the inward (-1 %) worked value
    assert abs(e_nom.real - 0.59) < 0.01 and abs(e_nom.imag - 0.81) < 0.01


def test_td_pair_bin_shift_and_kernel_change():
    cfg = AcousticConfig(vs=1500.0, dt=50e-9, nt=420, f_lo=0.1e6, f_hi=20e6)
    pair = make_model_pair("TD", _centre_grid(), cfg, 0.0225, 1.0, "deterministic", n_sensors=6)
    a, b = pair.true.a_s[:, 4].toarray().ravel(), pair.nominal.a_s[:, 4].toarray().ravel()
    ka, kb = np.nonzero(a[:420])[0][0], np.nonzero(b[:420])[0][0]
    expected_shift = int(np.rint(0.0225 * 0.01 / 1500.0 / 50e-9))
    assert kb - ka == expected_shift
    assert tof_bins(np.array([0.022725]), cfg)[0] == kb
    assert abs(a[ka] / b[kb] - 1) <= 0.011


def test_pair_reproducible_and_validated():
    cfg = AcousticConfig(vs=1500.0, dt=130e-9, nt=256)
    grid = ImageGrid(6, 6, 0.01)
    a = make_model_pair("TD", grid, cfg, 0.0225, 2.0, "per_sensor", 9, n_sensors=12)
    b = make_model_pair("TD", grid, cfg, 0.0225, 2.0, "per_sensor", 9, n_sensors=12)
    assert (a.nominal.matrix != b.nominal.matrix).nnz == 0
    with pytest.raises(ValueError, match="mixes"):
        ModelPair(a.true, make_model_pair("FD", grid, cfg, 0.0225, 0.0, n_sensors=12).true, a.perturbation)
    with pytest.raises(ValueError):
        build_model("XD", grid, a.true.sensors, cfg)


def test_speed_of_sound_offset_changes_nominal_only():
    cfg = AcousticConfig(vs=1500.0, dt=130e-9, nt=256)
    pair = make_model_pair("TD", ImageGrid(6, 6, 0.01), cfg, 0.0225, 0.0, n_sensors=8, vs_percent=2.0)
    assert pair.true.config.vs == 1500.0
    assert pair.nominal.config.vs == pytest.approx(1530.0)
