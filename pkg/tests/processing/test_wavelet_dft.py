import pytest
import numpy as np
from pathlib import Path
from unittest import mock
import json
import sys

try:
    from processing import wavelet_dft as wd
    from processing import sphere_harmonics as sh
    from processing.errors import FormatError, ParameterError
    from processing.volume_core import ComplexVolume, FrequencyGrid, centered_fftn
except ImportError:
    project_root = Path(__file__).parent.parent.parent
    sys.path.insert(0, str(project_root))
    from processing import wavelet_dft as wd
    from processing import sphere_harmonics as sh
    from processing.errors import FormatError, ParameterError
    from processing.volume_core import ComplexVolume, FrequencyGrid, centered_fftn


def create_params(**overrides):
    values = dict(n_orientations=6, s_o=0.2, filter_dims=(7, 7, 7), s_rho=1.0)
    values.update(overrides)
    return wd.CakeParams(**values)


@pytest.fixture(scope="module")
def small_bank():
    return wd.build_bank(create_params())


# --- Parameters and building blocks ---

def test_default_params_follow_documented_values():
    p = wd.CakeParams()
    assert p.n_orientations == 42
    assert p.filter_dims == (11, 11, 11)
    assert p.nyquist == pytest.approx(np.pi)
    assert p.varrho == pytest.approx(0.85 * np.pi)
    assert p.sigma == pytest.approx(0.15 * np.pi / 3)
    assert p.varrho0 == pytest.approx(p.varrho / np.sqrt(2))


@pytest.mark.parametrize("overrides", [
    {"gamma": 1.0},
    {"gamma": 0.0},
    {"s_rho": 0.0},
    {"s_o": -1.0},
    {"sigma_erf": 0.0},
    {"n_orientations": 0},
])
def test_invalid_params_raise(overrides):
    with pytest.raises(ParameterError):
        create_params(**overrides)


def test_radial_window_is_half_at_cutoff():
    p = wd.CakeParams()
    assert wd.radial_g(p.varrho, p.varrho, p.sigma) == pytest.approx(0.5)
    assert wd.radial_g(0.0, p.varrho, p.sigma) == pytest.approx(1.0, abs=1e-12)
    assert wd.radial_g(p.nyquist, p.varrho, p.sigma) < 0.01


def test_angular_coeffs_combine_funk_and_antisymmetric_parts():
    a = sh.diffusion_kernel_coeffs(0.1, 1e-3).values
    c = wd.angular_coeffs(0.1, 1e-3).values
    assert c[0] == pytest.approx(a[0])
    assert c[1] == pytest.approx(a[1])
    assert c[2] == pytest.approx(-0.5 * a[2])
    assert c[3] == pytest.approx(a[3])
    assert c[4] == pytest.approx(0.375 * a[4])


def test_filter_value_at_cutoff_along_orientation():
    p = wd.CakeParams()
    coeffs = wd.angular_coeffs(p.s_o, p.tol)
    n = np.array([0.0, 0.6, 0.8])
    expected = 0.5 * sum(c * np.sqrt((2 * l + 1) / (4 * np.pi)) for l, c in enumerate(coeffs.values))
    for method in ("wigner", "zonal"):
        value = wd.evaluate_fourier(p, coeffs, n, (p.varrho * n)[None, :], method)[0]
        assert value == pytest.approx(expected, rel=1e-9)


def test_dc_sample_uses_l0_band_only():
    p = create_params()
    psi_hat = wd.sample_fourier_filter(p, np.array([1.0, 0.0, 0.0]))
    coeffs = wd.angular_coeffs(p.s_o, p.tol)
    dc = psi_hat.data[FrequencyGrid(p.filter_dims).dc_index()]
    assert dc.real == pytest.approx(wd.radial_g(0.0, p.varrho, p.sigma) * coeffs.values[0] / np.sqrt(4 * np.pi))


def test_wigner_and_zonal_sampling_agree():
    p = create_params()
    n = np.array([0.3, -0.5, 0.81])
    n = n / np.linalg.norm(n)
    a = wd.sample_fourier_filter(p, n, method="wigner").data
    b = wd.sample_fourier_filter(p, n, method="zonal").data
    np.testing.assert_allclose(a, b, atol=1e-10)


def test_unknown_steering_method_raises():
    with pytest.raises(ParameterError):
        wd.sample_fourier_filter(create_params(), np.array([0.0, 0.0, 1.0]), method="euler")


def test_split_is_exact_partition():
    p = create_params(filter_dims=(9, 9, 9))
    psi_hat = wd.sample_fourier_filter(p, np.array([0.0, 0.0, 1.0]))
    low, high = wd.split_low_high(psi_hat, 2.0)
    np.testing.assert_allclose(low.data + high.data, psi_hat.data, atol=1e-15)
    dc = FrequencyGrid(p.filter_dims).dc_index()
    assert abs(high.data[dc]) < 1e-15


def test_split_rejects_spatial_input():
    with pytest.raises(ParameterError):
        wd.split_low_high(ComplexVolume(np.zeros((3, 3, 3), complex)), 1.0)


# --- Bank ---

def test_bank_shapes_and_metadata(small_bank):
    assert small_bank.filters.shape == (6, 7, 7, 7)
    assert small_bank.kind == "dft"
    assert small_bank.spectral_split
    assert small_bank.count == 6
    assert len(small_bank.bank_hash) == 64


def test_bank_filters_have_even_real_and_odd_imaginary_parts(small_bank):
    for psi in small_bank.filters:
        flipped = np.flip(psi, axis=(0, 1, 2))
        np.testing.assert_allclose(flipped.real, psi.real, atol=1e-12)
        np.testing.assert_allclose(flipped.imag, -psi.imag, atol=1e-12)
        assert np.abs(psi.imag).max() > 1e-6


def test_bank_spectrum_matches_sampled_filter(small_bank):
    p = create_params()
    expected = wd.sample_fourier_filter(p, small_bank.design.points[2]).data
    np.testing.assert_allclose(centered_fftn(small_bank.filters[2]), expected, atol=1e-10)


def test_even_filter_dims_raise():
    with pytest.raises(ParameterError):
        wd.build_bank(create_params(filter_dims=(8, 8, 8)))


def test_bank_build_is_deterministic(small_bank):
    again = wd.build_bank(create_params(), workers=2)
    assert again.bank_hash == small_bank.bank_hash


def test_high_pass_filters_have_zero_mean(small_bank):
    high = wd.high_pass_filters(small_bank)
    assert high.shape == small_bank.filters.shape
    np.testing.assert_allclose(high.sum(axis=(1, 2, 3)), 0.0, atol=1e-12)


def test_low_pass_mass_is_one_when_grid_is_large_enough():
    p = create_params(n_orientations=2, filter_dims=(31, 31, 31), s_rho=1.805)
    phi0 = wd.gaussian_low_pass(p.filter_dims, p.spacing, p.s_rho)
    assert phi0.min() >= 0.0
    assert phi0.sum() == pytest.approx(1.0, abs=1e-6)


def test_save_and_load_bank_preserves_hash(tmp_path, small_bank):
    wd.save_bank(small_bank, tmp_path / "bank.osb")
    loaded = wd.load_bank(tmp_path / "bank.osb")
    assert loaded.bank_hash == small_bank.bank_hash
    assert loaded.kind == "dft"
    np.testing.assert_allclose(loaded.filters, small_bank.filters, atol=1e-6)
    np.testing.assert_allclose(loaded.design.points, small_bank.design.points)


def test_load_bank_detects_tampered_payload(tmp_path, small_bank):
    target = tmp_path / "bank.osb"
    wd.save_bank(small_bank, target)
    payload = np.fromfile(target / "filter_000.c64", dtype="<f4")
    payload[0] += 1.0
    payload.tofile(target / "filter_000.c64")
    with pytest.raises(FormatError):
        wd.load_bank(target)


def test_load_bank_without_manifest_raises(tmp_path):
    with pytest.raises(FormatError):
        wd.load_bank(tmp_path)


def test_load_bank_with_broken_manifest_raises(tmp_path, small_bank):
    target = tmp_path / "bank.osb"
    wd.save_bank(small_bank, target)
    manifest = json.loads((target / wd.BANK_MANIFEST).read_text())
    del manifest["design"]
    (target / wd.BANK_MANIFEST).write_text(json.dumps(manifest))
    with pytest.raises(FormatError):
        wd.load_bank(target)


# --- Stability ---

def test_stability_report_split_identity_and_condition(small_bank):
    report = wd.stability_report(small_bank, fine_dims=(24, 24, 24))
    assert report.split_identity_error < 1e-12
    assert report.invertible
    assert report.cond_split_sq == pytest.approx(2 * report.m_max / report.m_min, rel=1e-9)
    assert report.m_split_max <= report.m_max + 1e-12
    assert report.m_split_min >= report.m_min / 2 - 1e-12


def test_numeric_fast_reconstruction_lies_within_bounds(small_bank):
    report = wd.stability_report(small_bank, fine_dims=(16, 16, 16), n_directions=200)
    assert report.n_bound_low - 1e-9 <= report.n_min
    assert report.n_max <= report.n_bound_high + 1e-9
    assert report.cond_fast == pytest.approx(report.n_max / report.n_min)


def test_fine_grid_must_cover_filter_grid(small_bank):
    with pytest.raises(ParameterError):
        wd.stability_report(small_bank, fine_dims=(5, 5, 5))


def test_vanishing_filters_report_non_invertible():
    p = create_params()
    with mock.patch.object(wd, "evaluate_fourier", side_effect=lambda params, coeffs, n, omega, method="zonal": np.zeros(omega.shape[:-1])):
        report = wd.stability_report(p, fine_dims=(8, 8, 8), n_directions=50)
    assert not report.invertible
    assert report.cond_split_sq == float("inf")


def test_antipodal_design_cancels_odd_bands():
    design = sh.antipodal_design(sh.sample_sphere(10, seed=3))
    sums = wd.design_band_sums(wd.angular_coeffs(0.1), design)
    for l in range(1, len(sums), 2):
        assert np.abs(sums[l]).max() < 1e-10


def test_sum_rule_bounds_ignore_odd_bands():
    design = sh.sample_sphere(12, seed=2)
    coeffs = wd.angular_coeffs(0.1)
    scaled = coeffs.values.copy()
    scaled[1::2] *= 10.0
    assert wd.sum_rule_bounds(sh.ZonalCoeffs(scaled), design) == pytest.approx(wd.sum_rule_bounds(coeffs, design))
    assert wd.sum_rule_bounds(coeffs.even_part(), design) == pytest.approx(wd.sum_rule_bounds(coeffs, design))


def test_sum_rule_bounds_from_even_band_sums():
    design = sh.sample_sphere(12, seed=2)
    coeffs = wd.angular_coeffs(0.1)
    sums = wd.design_band_sums(coeffs, design)
    spread = sum(np.linalg.norm(sums[l]) * np.sqrt((2 * l + 1) / (4 * np.pi)) for l in range(2, len(sums), 2))
    centre = coeffs.values[0] * 4 * np.pi / np.sqrt(4 * np.pi)
    low, high = wd.sum_rule_bounds(coeffs, design)
    assert low == pytest.approx(centre - spread)
    assert high == pytest.approx(centre + spread)


@pytest.mark.slow
@pytest.mark.parametrize("s_o", [0.04, 0.08, 0.16])
def test_fast_reconstruction_bounds_are_tight_for_42_orientations(s_o):
    params = wd.CakeParams(s_o=s_o)
    design = sh.sample_sphere(42, seed=0)
    low, high = wd.sum_rule_bounds(wd.angular_coeffs(s_o, params.tol), design)
    assert low >= 0.95
    assert high <= 1.05


def test_stability_curves_return_one_row_per_time():
    rows = wd.stability_curves(create_params(), [0.1, 0.3], fine_dims=(8, 8, 8), n_directions=50)
    assert [r["s_o"] for r in rows] == [0.1, 0.3]
    assert all("cond_fast" in r for r in rows)
