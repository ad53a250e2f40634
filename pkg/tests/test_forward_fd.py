import numpy as np
import pytest
from hypothesis import given, strategies as st

from patrecon.forward_fd import (FdModel, FrequencyGrid, SpectralData, assemble_K, forward_fd,
                                 make_frequency_grid, phasors, spectra_from_sinogram)
from patrecon.forward_td import TdModel, forward_td, tof_bins
from patrecon.geometry import (AcousticConfig, ImageGrid, SensorArray, make_point_phantom,
                               make_sensor_ring, make_shepp_logan, pixel_sensor_distances)


def _worked_example_terms(distances, f=1e6, vs=1500.0):
    """exp(i k d)/d read back from assembled entries for a pixel at the origin."""
    grid = ImageGrid(3, 3, 0.003)
    sensors = SensorArray(np.column_stack([distances, np.zeros(len(distances))]), 0.0225)
    model = FdModel(grid, sensors, FrequencyGrid(np.array([f]), vs), AcousticConfig(vs=vs),
                    representation="explicit")
    k = 2 * np.pi * f / vs
    entries = model.matrix[:, 4]
    over_d = entries / (-1j * k * grid.voxel_volume / (4 * np.pi))
    return over_d, over_d * np.asarray(distances)


def test_worked_example_phasors_and_terms():
    over_d, ph = _worked_example_terms([0.0225, 0.022275])
    assert abs(ph[0].real - 1.00) <= 0.01 and abs(ph[0].imag) <= 0.01
    assert abs(ph[1].real - 0.59) <= 0.01 and abs(ph[1].imag + 0.81) <= 0.01
    assert over_d[0].real == pytest.approx(44.44, rel=0.01)
    assert abs(over_d[0].imag) <= 0.01 * 44.44
    assert over_d[1].real == pytest.approx(26.4, rel=0.01)
    assert over_d[1].imag == pytest.approx(-36.3, rel=0.01)


def test_frequency_grid_full_profile_sampling():
    fg = make_frequency_grid(AcousticConfig(vs=1500.0, dt=50e-9, nt=420, f_lo=0.1e6, f_hi=20e6))
    step = np.diff(fg.freqs)
    np.testing.assert_allclose(step, 1 / (420 * 50e-9), rtol=1e-9)
    assert step[0] == pytest.approx(47.619e3, rel=1e-4)
    assert fg.freqs.max() == pytest.approx(10e6, rel=1e-12)
    assert fg.freqs.min() >= 0.1e6
    np.testing.assert_array_equal(fg.indices, np.arange(3, 211))


def test_frequency_grid_two_samples_and_empty():
    fg = make_frequency_grid(AcousticConfig(vs=1500.0, dt=1e-7, nt=2, f_lo=0.0, f_hi=1e12))
    np.testing.assert_allclose(fg.freqs, [1 / (2 * 1e-7)])
    with pytest.raises(ValueError, match="no DFT frequency"):
        make_frequency_grid(AcousticConfig(vs=1500.0, dt=1e-7, nt=10, f_lo=1e3, f_hi=2e3))


def test_frequency_grid_validation():
    with pytest.raises(ValueError):
        FrequencyGrid(np.array([0.0, 1.0]), 1500.0)
    with pytest.raises(ValueError):
        FrequencyGrid(np.array([2.0, 1.0]), 1500.0)


def test_low_frequency_rows_vanish():
    grid = ImageGrid(4, 4, 0.01)
    ring = make_sensor_ring(0.02, 3)
    fg = FrequencyGrid(np.array([1e-3, 1e-1, 1e1]), 1500.0)
    K = assemble_K(grid, ring, fg, AcousticConfig(), representation="explicit").matrix
    mags = np.abs(K.reshape(3, 3, 16)).max(axis=(0, 2))
    # entries scale with k as f -> 0
    np.testing.assert_allclose(mags[1] / mags[0], 100.0, rtol=1e-6)
    k0 = 2 * np.pi * 1e-3 / 1500.0
    d_min = pixel_sensor_distances(grid, ring).min()
    assert mags[0] <= k0 * grid.voxel_volume / (4 * np.pi * d_min) * (1 + 1e-12)


def test_single_pixel_single_frequency_scalar():
    grid = ImageGrid(5, 5, 0.01)
    ring = make_sensor_ring(0.02, 4)
    f, vs = 3.3e6, 1480.0
    model = FdModel(grid, ring, FrequencyGrid(np.array([f]), vs), AcousticConfig(vs=vs))
    p = make_point_phantom(5, 5, 0.01, (1, 3))
    out = forward_fd(p, model).data[:, 0]
    r_j = grid.pixel_center(3 * 5 + 1)
    k = 2 * np.pi * f / vs
    for l, r_d in enumerate(ring.positions):
        d = np.sqrt((r_d[0] - r_j[0]) ** 2 + (r_d[1] - r_j[1]) ** 2)
        expected = -1j * k * grid.voxel_volume * np.exp(1j * k * d) / (4 * np.pi * d)
        assert out[l] == pytest.approx(expected, rel=1e-12)


def test_zero_image_zero_spectra(small_grid, small_ring, small_cfg):
    model = FdModel(small_grid, small_ring, make_frequency_grid(small_cfg), small_cfg)
    assert not forward_fd(small_grid, model).data.any()


def test_phasor_recurrence_matches_direct(rng):
    k = 2 * np.pi * np.arange(1, 300) * 30e3 / 1500.0
    d = rng.uniform(0.005, 0.05, size=(3, 50))
    fast = phasors(k, d, uniform=True)
    exact = np.exp(1j * k[None, :, None] * d[:, None, :])
    assert np.abs(fast - exact).max() < 1e-12


def test_explicit_and_matrix_free_agree(small_grid, small_ring, small_cfg, rng):
    fg = make_frequency_grid(small_cfg)
    exp_model = FdModel(small_grid, small_ring, fg, small_cfg, representation="explicit")
    mf_model = FdModel(small_grid, small_ring, fg, small_cfg, representation="matrix_free")
    assert exp_model.matrix is not None and mf_model.matrix is None
    np.testing.assert_allclose(mf_model.dense(), exp_model.matrix, rtol=0, atol=0)
    u = rng.normal(size=small_grid.n_pixels)
    a, b = exp_model.apply(u), mf_model.apply(u)
    assert np.linalg.norm(a - b) <= 1e-10 * np.linalg.norm(a)
    v = rng.normal(size=exp_model.shape[0]) + 1j * rng.normal(size=exp_model.shape[0])
    a, b = exp_model.adjoint(v), mf_model.adjoint(v)
    assert np.linalg.norm(a - b) <= 1e-10 * np.linalg.norm(a)
    np.testing.assert_allclose(exp_model.adjoint(v), exp_model.matrix.conj().T @ v, rtol=1e-12)


@given(st.integers(0, 2**32 - 1), st.sampled_from(["explicit", "matrix_free"]))
def test_adjoint_inner_product(seed, representation):
    grid = ImageGrid(5, 4, 0.01)
    ring = make_sensor_ring(0.015, 5)
    cfg = AcousticConfig(vs=1500.0, dt=100e-9, nt=64, f_lo=0.5e6, f_hi=4e6)
    model = FdModel(grid, ring, make_frequency_grid(cfg), cfg, representation=representation)
    rng = np.random.default_rng(seed)
    u = rng.normal(size=20) + 1j * rng.normal(size=20)
    v = rng.normal(size=model.shape[0]) + 1j * rng.normal(size=model.shape[0])
    lhs = np.vdot(v, model.apply(u))
    rhs = np.vdot(model.adjoint(v), u)
    assert abs(lhs - rhs) <= 1e-10 * abs(lhs)


def test_mirrored_geometry_entries():
    nx, ny = 6, 5
    grid = ImageGrid(nx, ny, 0.01)
    ring = make_sensor_ring(0.015, 7)
    mirror = SensorArray(ring.positions * np.array([1.0, -1.0]), 0.015)
    fg = FrequencyGrid(np.array([1e6, 2.5e6]), 1500.0)
    K = FdModel(grid, ring, fg, AcousticConfig(), "explicit").matrix
    Km = FdModel(grid, mirror, fg, AcousticConfig(), "explicit").matrix
    j = np.arange(nx * ny)
    reflected = (ny - 1 - j // nx) * nx + j % nx
    np.testing.assert_array_equal(Km, K[:, reflected])


def test_memory_cap(small_grid, small_ring, small_cfg):
    fg = make_frequency_grid(small_cfg)
    auto = FdModel(small_grid, small_ring, fg, small_cfg, memory_cap=1000)
    assert auto.representation == "matrix_free"
    with pytest.raises(MemoryError, match="cap"):
        FdModel(small_grid, small_ring, fg, small_cfg, representation="explicit", memory_cap=1000)
    with pytest.raises(ValueError):
        FdModel(small_grid, small_ring, fg, small_cfg, representation="sparse")


def test_spectral_data_validation(small_cfg):
    fg = make_frequency_grid(small_cfg)
    with pytest.raises(ValueError):
        SpectralData(np.zeros((2, fg.n_freqs + 1)), fg)
    bad = np.zeros((2, fg.n_freqs), dtype=complex)
    bad[0, 0] = np.inf
    with pytest.raises(ValueError):
        SpectralData(bad, fg)


@pytest.mark.parametrize("t0", [0.0, 0.4e-6])
def test_single_pixel_cross_domain_identity(t0):
    """DFT of TD data over FD entries is sinc(w dt) times the TOF-binning phase error."""
    grid = ImageGrid(7, 7, 0.01)
    ring = make_sensor_ring(0.02, 9)
    cfg = AcousticConfig(vs=1500.0, dt=80e-9, nt=300, f_lo=0.1e6, f_hi=6e6, t0=t0)
    fg = make_frequency_grid(cfg)
    j = 2 * 7 + 5
    p = make_point_phantom(7, 7, 0.01, (5, 2))
    td = forward_td(p, TdModel(grid, ring, cfg))
    spec = spectra_from_sinogram(td, fg, cfg.vs).data
    fd = forward_fd(p, FdModel(grid, ring, fg, cfg)).data
    d = pixel_sensor_distances(grid, ring)[:, j]
    kb = tof_bins(d, cfg)
    w = 2 * np.pi * fg.freqs
    tau = d / cfg.vs
    t_bin = t0 + kb * cfg.dt
    expected = (np.sin(w * cfg.dt) / (w * cfg.dt))[None, :] * np.exp(1j * w[None, :] * (t_bin - tau)[:, None])
    np.testing.assert_allclose(spec / fd, expected, rtol=1e-10, atol=1e-12)


def test_spectra_from_sinogram_needs_indices(small_cfg):
    from patrecon.forward_td import Sinogram
    fg = FrequencyGrid(np.array([1e6]), 1500.0)
    with pytest.raises(ValueError):
        spectra_from_sinogram(Sinogram(np.zeros((1, 8)), 1e-7), fg, 1500.0)
