import pytest
import numpy as np
from pathlib import Path
from scipy import special
import sys

try:
    from processing import wavelet_zernike as wz
    from processing import wavelet_dft as wd
    from processing import sphere_harmonics as sh
    from processing.errors import ParameterError
    from processing.volume_core import FrequencyGrid, centered_fftn
except ImportError:
    project_root = Path(__file__).parent.parent.parent
    sys.path.insert(0, str(project_root))
    from processing import wavelet_zernike as wz
    from processing import wavelet_dft as wd
    from processing import sphere_harmonics as sh
    from processing.errors import ParameterError
    from processing.volume_core import FrequencyGrid, centered_fftn


def create_quadrature(n=200):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def create_spec(s_o=0.2, alpha=6.0, p_max=12):
    return wz.analytic_filter_spec(wz.ZernikeParams(alpha=alpha, s_o=s_o, p_max=p_max, n_orientations=2))


# --- Radial basis ---

def test_lowest_radial_functions():
    rho = np.linspace(0.0, 1.0, 11)
    np.testing.assert_allclose(wz.zernike_radial(0, 0, 3.0, rho), (1 - rho ** 2) ** 3, atol=1e-14)
    np.testing.assert_allclose(wz.zernike_radial(1, 1, 0.0, rho), rho, atol=1e-14)


@pytest.mark.parametrize("n, l", [(3, 0), (1, 2), (2, -1)])
def test_invalid_index_pairs_raise(n, l):
    with pytest.raises(ParameterError):
        wz.zernike_radial(n, l, 2.0, 0.5)


def test_radius_outside_unit_ball_raises():
    with pytest.raises(ParameterError):
        wz.zernike_radial(2, 0, 2.0, np.array([0.5, 1.2]))


@pytest.mark.parametrize("alpha", [0.0, 3.0, 6.0])
@pytest.mark.parametrize("l", [0, 1, 4])
def test_radial_orthogonality(alpha, l):
    rho, w = create_quadrature(120)
    weight = w * rho ** 2 / (1 - rho ** 2) ** alpha
    ns = [l + 2 * p for p in range(7) if l + 2 * p <= 12]
    for n1 in ns:
        for n2 in ns:
            value = np.sum(wz.zernike_radial(n1, l, alpha, rho) * wz.zernike_radial(n2, l, alpha, rho) * weight)
            expected = wz.zernike_normalization(n1, l, alpha) if n1 == n2 else 0.0
            assert value == pytest.approx(expected, abs=1e-8)


def test_fourier_radial_at_zero():
    assert wz.zernike_fourier_radial(0, 0, 0.0, 0.0) == pytest.approx(1.0 / 3.0)
    for n, l in [(2, 0), (1, 1), (4, 2)]:
        assert wz.zernike_fourier_radial(n, l, 3.0, 0.0) == 0.0


def test_fourier_radial_matches_quadrature_example():
    rho, w = create_quadrature()
    q = 5.0
    expected = np.sum(wz.zernike_radial(2, 0, 3.0, rho) * special.spherical_jn(0, q * rho) * rho ** 2 * w)
    assert wz.zernike_fourier_radial(2, 0, 3.0, q) == pytest.approx(expected, abs=1e-9)


@pytest.mark.parametrize("alpha", [0.0, 3.0, 6.0])
def test_fourier_radial_closed_form_grid(alpha):
    rho, w = create_quadrature()
    for l in (0, 1, 3, 8):
        for n in range(l, 13, 2):
            for q in (0.7, 3.1, 9.0):
                expected = np.sum(wz.zernike_radial(n, l, alpha, rho) * special.spherical_jn(l, q * rho) * rho ** 2 * w)
                assert wz.zernike_fourier_radial(n, l, alpha, q) == pytest.approx(expected, abs=1e-8)


def test_integer_alpha_reduces_to_spherical_bessel():
    q = np.array([0.5, 2.0, 7.0])
    n, l, alpha = 4, 2, 3
    p = (n - l) // 2
    reduced = 2 ** alpha * (-1) ** p * special.poch(p + 1, alpha) * special.spherical_jn(n + alpha + 1, q) / q ** (alpha + 1)
    np.testing.assert_allclose(wz.zernike_fourier_radial(n, l, alpha, q), reduced, rtol=1e-10)


# --- Flat profile ---

def test_flat_profile_constants():
    assert wz.rho_max(6.0, 2.0) == pytest.approx(1 / np.sqrt(7))
    c0, c1, c2 = wz.flat_taylor_coeffs(6.0)
    assert c0 == pytest.approx(19 / 12)
    assert c1 == pytest.approx(-49 / 6)
    assert c2 == pytest.approx(343 / 12)
    assert wz.flat_profile(6.0, wz.rho_max(6.0)) == pytest.approx(1.0)


def test_standard_profile_coeffs_match_quadrature():
    rho, w = create_quadrature()
    alpha, beta = 6.0, 2.0
    for l in (0, 1, 3):
        b = wz.standard_profile_coeffs(alpha, beta, l, 4)
        for p in range(5):
            integrand = (1 - rho ** 2) ** alpha * rho ** beta * wz.zernike_radial(l + 2 * p, l, alpha, rho) * rho ** 2 / (1 - rho ** 2) ** alpha
            assert b[p] == pytest.approx(np.sum(integrand * w), abs=1e-12)


def test_generalized_binom_at_negative_and_nonnegative_integers():
    np.testing.assert_array_equal(wz.generalized_binom(-1.0, 4), [1.0, -1.0, 1.0, -1.0, 1.0])
    np.testing.assert_array_equal(wz.generalized_binom(-2.0, 3), [1.0, -2.0, 3.0, -4.0])
    np.testing.assert_array_equal(wz.generalized_binom(1.0, 3), [1.0, 1.0, 0.0, 0.0])
    np.testing.assert_allclose(wz.generalized_binom(0.5, 3), special.binom(0.5, np.arange(4)), rtol=1e-14)


@pytest.mark.parametrize("l", [4, 6, 8])
def test_standard_profile_coeffs_above_beta_match_quadrature(l):
    rho, w = create_quadrature()
    b = wz.standard_profile_coeffs(6.0, 2.0, l, 4)
    for p in range(5):
        integrand = rho ** 2 * wz.zernike_radial(l + 2 * p, l, 6.0, rho) * rho ** 2
        assert b[p] == pytest.approx(np.sum(integrand * w), abs=1e-12)


def test_flat_profile_table_is_finite_for_high_bands():
    spec = wz.flat_profile_coeffs(3.0, 10)
    assert spec.table.shape == (11, 13)
    assert np.all(np.isfinite(spec.table))
    assert np.any(spec.table[4:] != 0.0)


@pytest.mark.parametrize("l", [0, 2])
def test_flat_profile_expansion_is_exact_for_low_even_bands(l):
    spec = wz.flat_profile_coeffs(6.0, 8, 12)
    rho = np.linspace(0.0, 1.0, 101)
    np.testing.assert_allclose(wz.zernike_fourier_profile(spec, l, rho), wz.flat_profile(6.0, rho), atol=1e-6)


@pytest.mark.parametrize("l", [1, 3, 4, 5, 6, 7, 8])
def test_flat_profile_expansion_converges_in_weighted_norm(l):
    spec = wz.flat_profile_coeffs(6.0, 8, 12)
    rho, w = create_quadrature()
    weight = w * rho ** 2 / (1 - rho ** 2) ** 6.0
    target = wz.flat_profile(6.0, rho)
    error = wz.zernike_fourier_profile(spec, l, rho) - target
    assert np.sqrt(np.sum(error ** 2 * weight) / np.sum(target ** 2 * weight)) < 5e-2


def test_invalid_zernike_params_raise():
    with pytest.raises(ParameterError):
        wz.ZernikeParams(alpha=0.0)
    with pytest.raises(ParameterError):
        wz.ZernikeParams(beta=4)
    with pytest.raises(ParameterError):
        wz.flat_profile_coeffs(-1.0, 4)


# --- Spatial filters ---

def test_filter_value_at_origin():
    spec = create_spec()
    psi = wz.assemble_spatial_filter(spec, np.array([0.0, 0.6, 0.8]), (9, 9, 9))
    expected = spec.nyquist ** 3 * 4 * np.pi * spec.coeffs[0, 0] * wz.zernike_fourier_radial(0, 0, spec.alpha, 0.0) / np.sqrt(4 * np.pi)
    assert psi.data[4, 4, 4] == pytest.approx(expected, rel=1e-12)


def test_filter_along_z_is_zonal():
    psi = wz.assemble_spatial_filter(create_spec(), np.array([0.0, 0.0, 1.0]), (11, 11, 11)).data
    rotated = np.rot90(psi, k=1, axes=(0, 1))
    np.testing.assert_allclose(rotated, psi, atol=1e-12)


def test_wigner_and_zonal_assembly_agree():
    spec = create_spec()
    n = np.array([0.48, -0.6, 0.64])
    a = wz.assemble_spatial_filter(spec, n, (9, 9, 9), method="wigner").data
    b = wz.assemble_spatial_filter(spec, n, (9, 9, 9), method="zonal").data
    np.testing.assert_allclose(a, b, atol=1e-10)


def test_real_part_is_even_bands_and_imaginary_part_is_odd_bands():
    spec = create_spec()
    n = np.array([0.0, 0.6, 0.8])
    full = wz.assemble_spatial_filter(spec, n, (9, 9, 9)).data
    even = wz.assemble_spatial_filter(spec, n, (9, 9, 9), bands="even").data
    odd = wz.assemble_spatial_filter(spec, n, (9, 9, 9), bands="odd").data
    np.testing.assert_allclose(full.real, even.real, atol=1e-15)
    np.testing.assert_allclose(full.imag, odd.imag, atol=1e-15)
    assert np.all(even.imag == 0.0)
    assert np.all(odd.real == 0.0)


def test_steering_matches_exact_grid_rotation():
    spec = create_spec()
    psi_z = wz.assemble_spatial_filter(spec, np.array([0.0, 0.0, 1.0]), (11, 11, 11)).data
    psi_x = wz.assemble_spatial_filter(spec, np.array([1.0, 0.0, 0.0]), (11, 11, 11)).data
    # rotation about y taking e_z to e_x: ψ_x(x, y, z) = ψ_z(-z, y, x)
    expected = np.transpose(psi_z[::-1, :, :], (2, 1, 0))
    np.testing.assert_allclose(psi_x, expected, atol=1e-10)


def test_even_filter_grid_raises():
    with pytest.raises(ParameterError):
        wz.assemble_spatial_filter(create_spec(), np.array([0.0, 0.0, 1.0]), (8, 9, 9))


@pytest.mark.slow
def test_spatial_filter_and_coefficient_table_are_a_fourier_pair():
    spec = create_spec(s_o=0.2)
    n = np.array([0.36, 0.48, 0.8])
    dims = (33, 33, 33)
    psi = wz.assemble_spatial_filter(spec, n, dims).data
    numeric = centered_fftn(psi)
    grid = FrequencyGrid(dims)
    omega = np.stack(grid.mesh(), axis=-1)
    analytic = wz.evaluate_fourier_zernike(spec, n, omega)
    inside = grid.norm() <= 0.9 * np.pi
    err = np.linalg.norm(numeric[inside] - analytic[inside]) / np.linalg.norm(analytic[inside])
    assert err < 1e-3


# --- Banks and comparison ---

def test_zernike_bank_metadata():
    params = wz.ZernikeParams(n_orientations=4, s_o=0.3, filter_dims=(7, 7, 7), s_rho=1.0)
    bank = wz.build_zernike_bank(params)
    assert bank.kind == "zernike"
    assert not bank.spectral_split
    assert bank.filters.shape == (4, 7, 7, 7)
    assert len(bank.coeffs["c_nl"]) == len(bank.coeffs["a_l"])
    with pytest.raises(ParameterError):
        wd.stability_report(bank)


def test_zernike_bank_with_default_band_limit_is_finite():
    params = wz.ZernikeParams(n_orientations=42, filter_dims=(15, 15, 15), s_rho=2.0)
    bank = wz.build_zernike_bank(params)
    assert bank.filters.shape == (42, 15, 15, 15)
    assert np.all(np.isfinite(bank.filters))
    assert np.all(np.isfinite(np.asarray(bank.coeffs["c_nl"])))
    assert np.linalg.norm(bank.filters[0]) > 0.0


def test_radial_profiles_match_for_comparison_settings():
    cake = wd.CakeParams(s_rho=0.5 * 1.9 ** 2, gamma=0.85, s_o=0.08)
    zern = wz.ZernikeParams(alpha=3.0, s_o=0.08)
    match = wz.match_radial_profile(cake, zern)
    assert match.correlation > 0.98
    assert match.kappa > 0
    assert match.residual < 0.2


@pytest.mark.slow
def test_dft_and_zernike_filters_are_similar():
    design = sh.sample_sphere(6, seed=1)
    cake = wd.CakeParams(n_orientations=6, s_rho=0.5 * 1.9 ** 2, gamma=0.85, s_o=0.08, filter_dims=(31, 31, 31))
    zern = wz.ZernikeParams(n_orientations=6, alpha=3.0, s_o=0.08, filter_dims=(31, 31, 31), s_rho=cake.s_rho)
    dft_high = wd.high_pass_filters(wd.build_bank(cake, design))
    zernike = wz.build_zernike_bank(zern, design).filters
    for a, b in zip(dft_high, zernike):
        ncc = abs(np.vdot(a, b)) / (np.linalg.norm(a) * np.linalg.norm(b))
        assert ncc > 0.95


# --- Harmonic oscillator baseline ---

def test_harmonic_oscillator_order_zero_is_gaussian():
    psi = wz.harmonic_oscillator_wavelet(0, (9, 9, 9)).data
    axes = np.arange(9) - 4
    xx, yy, zz = np.meshgrid(axes, axes, axes, indexing="ij")
    np.testing.assert_allclose(psi.real, np.exp(-0.5 * (xx ** 2 + yy ** 2 + zz ** 2)) / np.sqrt(4 * np.pi), atol=1e-15)


def test_harmonic_oscillator_is_not_centered():
    psi = wz.harmonic_oscillator_wavelet(15, (21, 21, 21)).data.real
    assert psi[10, 10, 10] == pytest.approx(1 / np.sqrt(4 * np.pi))
    profile = np.abs(psi[10, 10, :])
    assert np.argmax(profile) != 10


def test_harmonic_oscillator_rejects_negative_order():
    with pytest.raises(ParameterError):
        wz.harmonic_oscillator_wavelet(-1, (5, 5, 5))
