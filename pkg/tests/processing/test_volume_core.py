import json
import pytest
import numpy as np
from pathlib import Path
import sys

from hypothesis import given, settings, strategies as st

try:
    from processing import volume_core as vc
    from processing.errors import FormatError, ParameterError
except ImportError:
    project_root = Path(__file__).parent.parent.parent
    sys.path.insert(0, str(project_root))
    from processing import volume_core as vc
    from processing.errors import FormatError, ParameterError


def create_random_volume(dims=(16, 16, 16), seed=0, spacing=(1.0, 1.0, 1.0)) -> vc.Volume:
    rng = np.random.default_rng(seed)
    return vc.Volume(rng.standard_normal(dims), spacing)


def _centered_dft_matrix(n: int) -> np.ndarray:
    idx = np.arange(n) - n // 2
    return np.exp(-2j * np.pi * np.outer(idx, idx) / n)


def _direct_correlation(kernel: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Brute-force periodic Σ_d conj(k(d)) f(x + d) with d relative to the kernel center."""
    out = np.zeros(f.shape, dtype=np.complex128)
    kc = [k // 2 for k in kernel.shape]
    for i in range(kernel.shape[0]):
        for j in range(kernel.shape[1]):
            for l in range(kernel.shape[2]):
                d = (i - kc[0], j - kc[1], l - kc[2])
                out += np.conj(kernel[i, j, l]) * np.roll(f, shift=(-d[0], -d[1], -d[2]), axis=(0, 1, 2))
    return out


# --- Types ---

def test_volume_rejects_bad_spacing():
    with pytest.raises(ParameterError):
        vc.Volume(np.zeros((2, 2, 2)), (1.0, 0.0, 1.0))


def test_volume_rejects_non_3d_data():
    with pytest.raises(ParameterError):
        vc.Volume(np.zeros((4, 4)))


def test_frequency_grid_dc_and_nyquist():
    grid = vc.FrequencyGrid((8, 9, 10), (1.0, 2.0, 0.5))
    dc = grid.dc_index()
    assert grid.norm()[dc] == 0.0
    assert grid.nyquist_per_axis == pytest.approx((np.pi, np.pi / 2, 2 * np.pi))
    assert grid.nyquist == pytest.approx(np.pi / 2)
    for axis, nyq in zip(grid.axes, grid.nyquist_per_axis):
        assert np.all(np.abs(axis) <= nyq + 1e-12)


# --- FFT ---

def test_fft_of_centered_impulse_is_constant_one():
    data = np.zeros((8, 8, 8))
    data[4, 4, 4] = 1.0
    spec = vc.fft_forward(vc.ComplexVolume(data))
    assert spec.domain == "fourier"
    np.testing.assert_allclose(spec.data, np.ones((8, 8, 8)), atol=1e-12)


def test_fft_of_constant_is_dc_spike():
    spec = vc.fft_forward(vc.ComplexVolume(np.full((6, 5, 4), 2.5)))
    expected = np.zeros((6, 5, 4), dtype=complex)
    expected[3, 2, 2] = 2.5 * 6 * 5 * 4
    np.testing.assert_allclose(spec.data, expected, atol=1e-9)


def test_fft_matches_direct_dft_oracle():
    rng = np.random.default_rng(3)
    data = rng.standard_normal((8, 8, 8)) + 1j * rng.standard_normal((8, 8, 8))
    m = _centered_dft_matrix(8)
    direct = np.einsum("ai,bj,ck,ijk->abc", m, m, m, data)
    spec = vc.fft_forward(vc.ComplexVolume(data)).data
    assert np.linalg.norm(spec - direct) / np.linalg.norm(direct) < 1e-12


def test_fft_round_trip_and_parseval():
    v = create_random_volume()
    spec = vc.fft_forward(vc.ComplexVolume(v.data))
    back = vc.fft_inverse(spec).data
    assert np.linalg.norm(back - v.data) / np.linalg.norm(v.data) < 1e-12
    n = v.data.size
    assert np.sum(np.abs(spec.data) ** 2) / n == pytest.approx(np.sum(v.data ** 2), rel=1e-10)


def test_fft_inverse_rejects_spatial_input():
    with pytest.raises(ParameterError):
        vc.fft_inverse(vc.ComplexVolume(np.zeros((2, 2, 2))))


# --- Correlation ---

def test_correlate_with_identity_kernel_returns_input():
    f = create_random_volume((10, 9, 8))
    kernel = np.zeros((3, 3, 3), dtype=complex)
    kernel[1, 1, 1] = 1.0
    out = vc.correlate(vc.ComplexVolume(kernel), f)
    np.testing.assert_allclose(out.data, f.data, atol=1e-12)


def test_correlate_impulse_response_is_conjugate_flipped_kernel():
    rng = np.random.default_rng(5)
    kernel = rng.standard_normal((3, 3, 3)) + 1j * rng.standard_normal((3, 3, 3))
    f = np.zeros((9, 9, 9))
    f[4, 4, 4] = 1.0
    out = vc.correlate(vc.ComplexVolume(kernel), vc.Volume(f)).data
    # out(x) = conj(k(-x)) around the center
    np.testing.assert_allclose(out[3:6, 3:6, 3:6], np.conj(kernel[::-1, ::-1, ::-1]), atol=1e-12)


def test_correlate_matches_brute_force_sum():
    rng = np.random.default_rng(7)
    kernel = rng.standard_normal((7, 7, 7)) + 1j * rng.standard_normal((7, 7, 7))
    f = create_random_volume(seed=8)
    out = vc.correlate(vc.ComplexVolume(kernel), f).data
    direct = _direct_correlation(kernel, f.data)
    assert np.max(np.abs(out - direct)) < 1e-10 * np.max(np.abs(direct))


def test_correlate_rejects_oversized_kernel():
    with pytest.raises(ParameterError):
        vc.correlate(vc.ComplexVolume(np.zeros((9, 3, 3))), create_random_volume((8, 8, 8)))


def test_correlate_is_shift_covariant():
    rng = np.random.default_rng(11)
    kernel = vc.ComplexVolume(rng.standard_normal((5, 5, 5)) + 0j)
    f = create_random_volume((12, 12, 12), seed=12)
    shifted = vc.Volume(np.roll(f.data, (2, -3, 1), axis=(0, 1, 2)))
    a = np.roll(vc.correlate(kernel, f).data, (2, -3, 1), axis=(0, 1, 2))
    b = vc.correlate(kernel, shifted).data
    np.testing.assert_allclose(a, b, atol=1e-10)


@settings(max_examples=20, deadline=None)
@given(a=st.floats(-5, 5), b=st.floats(-5, 5), seed=st.integers(0, 1000))
def test_correlate_is_linear(a, b, seed):
    rng = np.random.default_rng(seed)
    kernel = vc.ComplexVolume(rng.standard_normal((3, 3, 3)) + 1j * rng.standard_normal((3, 3, 3)))
    f = rng.standard_normal((6, 6, 6))
    g = rng.standard_normal((6, 6, 6))
    lhs = vc.correlate(kernel, vc.Volume(a * f + b * g)).data
    rhs = a * vc.correlate(kernel, vc.Volume(f)).data + b * vc.correlate(kernel, vc.Volume(g)).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


# --- Padding ---

def test_pad_then_crop_is_identity():
    v = create_random_volume((6, 7, 8))
    padded = vc.pad_volume(v, 3)
    assert padded.dims == (12, 13, 14)
    assert padded.data[0, 3, 3] == v.data[0, 0, 0]
    np.testing.assert_array_equal(vc.crop_volume(padded, 3).data, v.data)


# --- I/O ---

def test_write_read_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(1)
    data = rng.standard_normal((5, 4, 3)).astype(np.float32).astype(np.float64)
    spacing = (0.1, 1.0 / 3.0, 2.5)
    path = tmp_path / "vol.f32"
    vc.write_volume(vc.Volume(data, spacing), path)
    loaded = vc.read_volume(path)
    assert loaded.dims == (5, 4, 3)
    assert loaded.spacing == spacing
    assert loaded.data.astype("<f4").tobytes() == data.astype("<f4").tobytes()
    # x-fastest on disk
    raw = np.fromfile(path, dtype="<f4")
    assert raw[1] == np.float32(data[1, 0, 0])


def test_header_dims_mismatch_is_format_error(tmp_path):
    path = tmp_path / "vol.f32"
    vc.write_volume(create_random_volume((4, 4, 4)), path)
    header_path = vc.sidecar_path(path)
    header = json.loads(header_path.read_text())
    header["dims"] = [4, 4, 5]
    header_path.write_text(json.dumps(header))
    with pytest.raises(FormatError):
        vc.read_volume(path)


def test_unknown_dtype_is_format_error(tmp_path):
    path = tmp_path / "vol.f32"
    vc.write_volume(create_random_volume((2, 2, 2)), path)
    header_path = vc.sidecar_path(path)
    header = json.loads(header_path.read_text())
    header["dtype"] = "f16"
    header_path.write_text(json.dumps(header))
    with pytest.raises(FormatError):
        vc.read_volume(path)


def test_missing_header_is_format_error(tmp_path):
    path = tmp_path / "vol.f32"
    path.write_bytes(b"\x00" * 32)
    with pytest.raises(FormatError):
        vc.read_volume(path)


def test_complex_round_trip_interleaves(tmp_path):
    data = np.zeros((2, 2, 2), dtype=complex)
    data[1, 0, 0] = 1.5 - 2.0j
    path = tmp_path / "k.c64"
    vc.write_complex_volume(vc.ComplexVolume(data), path)
    raw = np.fromfile(path, dtype="<f4")
    assert raw[2] == 1.5 and raw[3] == -2.0
    np.testing.assert_array_equal(vc.read_complex_volume(path).data, data)


def test_volume_hash_depends_on_spacing():
    v = create_random_volume((3, 3, 3))
    w = vc.Volume(v.data, (1.0, 1.0, 2.0))
    assert vc.volume_hash(v) != vc.volume_hash(w)
    assert vc.volume_hash(v) == vc.volume_hash(v.copy())
