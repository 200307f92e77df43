"""Grid types, the centered FFT contract and raw volume I/O.

Conventions shared by every other module:

* Arrays are indexed ``data[x, y, z]``; on disk the payload is written with
  X varying fastest (Fortran order).
* The grid origin (spatial or frequency) sits at index ``n // 2`` per axis.
* ``fft_forward`` is unnormalized, ``fft_inverse`` carries the 1/N factor.
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Tuple, Union

import numpy as np
from scipy import fft as sp_fft

from .errors import FormatError, ParameterError

log = logging.getLogger(__name__)

SIDECAR_SUFFIX = ".json"
_DTYPES = {"f32": "<f4", "c64": "<f4"}

_fft_workers = 1


def set_fft_workers(workers: int) -> None:
    """Sets the thread count handed to scipy.fft for all transforms."""
    global _fft_workers
    _fft_workers = max(1, int(workers))
    log.debug(f"FFT workers set to {_fft_workers}")


def get_fft_workers() -> int:
    return _fft_workers


def _check_grid(dims: Tuple[int, ...], spacing: Tuple[float, ...]):
    if len(dims) != 3 or any(int(d) < 1 for d in dims):
        raise ParameterError(f"dims must be three positive integers, got {dims}")
    if len(spacing) != 3 or any(not np.isfinite(s) or s <= 0 for s in spacing):
        raise ParameterError(f"spacing must be three positive reals, got {spacing}")


@dataclass
class Volume:
    """Real scalar field on a regular grid."""
    data: np.ndarray
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise ParameterError(f"Volume data must be 3D, got shape {self.data.shape}")
        self.spacing = tuple(float(s) for s in self.spacing)
        _check_grid(self.data.shape, self.spacing)

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(int(d) for d in self.data.shape)

    @property
    def voxel_volume(self) -> float:
        return float(np.prod(self.spacing))

    def copy(self) -> "Volume":
        return Volume(self.data.copy(), self.spacing)


@dataclass
class ComplexVolume:
    """Complex scalar field, tagged as living in the spatial or Fourier domain."""
    data: np.ndarray
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    domain: str = "spatial"

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.complex128)
        if self.data.ndim != 3:
            raise ParameterError(f"ComplexVolume data must be 3D, got shape {self.data.shape}")
        if self.domain not in ("spatial", "fourier"):
            raise ParameterError(f"Unknown domain tag '{self.domain}'")
        self.spacing = tuple(float(s) for s in self.spacing)
        _check_grid(self.data.shape, self.spacing)

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(int(d) for d in self.data.shape)


@dataclass
class FrequencyGrid:
    """Angular-frequency coordinates of a centered spectrum.

    ``axes[k][i] = 2π (i - n_k//2) / (n_k · spacing_k)``; the Nyquist
    frequency of each axis is ``π / spacing_k``.
    """
    dims: Tuple[int, int, int]
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    axes: Tuple[np.ndarray, ...] = field(init=False, repr=False)

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.spacing = tuple(float(s) for s in self.spacing)
        _check_grid(self.dims, self.spacing)
        self.axes = tuple(
            2.0 * np.pi * (np.arange(n) - n // 2) / (n * s)
            for n, s in zip(self.dims, self.spacing)
        )

    @property
    def nyquist_per_axis(self) -> Tuple[float, float, float]:
        return tuple(np.pi / s for s in self.spacing)

    @property
    def nyquist(self) -> float:
        """ρ_N of the grid: the smallest per-axis Nyquist frequency."""
        return float(min(self.nyquist_per_axis))

    def mesh(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return np.meshgrid(*self.axes, indexing="ij")

    def norm(self) -> np.ndarray:
        wx, wy, wz = self.mesh()
        return np.sqrt(wx ** 2 + wy ** 2 + wz ** 2)

    def dc_index(self) -> Tuple[int, int, int]:
        return tuple(n // 2 for n in self.dims)


def centered_fftn(data: np.ndarray) -> np.ndarray:
    """Unnormalized DFT with the origin at index n//2 on both sides."""
    return sp_fft.fftshift(sp_fft.fftn(sp_fft.ifftshift(data), workers=_fft_workers))


def centered_ifftn(data: np.ndarray) -> np.ndarray:
    return sp_fft.fftshift(sp_fft.ifftn(sp_fft.ifftshift(data), workers=_fft_workers))


def fft_forward(v: Union[ComplexVolume, Volume]) -> ComplexVolume:
    if isinstance(v, ComplexVolume) and v.domain != "spatial":
        raise ParameterError("fft_forward expects a spatial-domain volume")
    return ComplexVolume(centered_fftn(v.data), v.spacing, "fourier")


def fft_inverse(v: ComplexVolume) -> ComplexVolume:
    if v.domain != "fourier":
        raise ParameterError("fft_inverse expects a fourier-domain volume")
    return ComplexVolume(centered_ifftn(v.data), v.spacing, "spatial")


def embed_centered(kernel: np.ndarray, dims: Tuple[int, int, int]) -> np.ndarray:
    """Places a small centered kernel inside a zero grid of ``dims``.

    The kernel's center index ``k//2`` lands on the grid's center ``n//2``.
    """
    if any(k > n for k, n in zip(kernel.shape, dims)):
        raise ParameterError(f"Kernel dims {kernel.shape} exceed volume dims {tuple(dims)}")
    out = np.zeros(dims, dtype=kernel.dtype)
    starts = [n // 2 - k // 2 for k, n in zip(kernel.shape, dims)]
    out[tuple(slice(s, s + k) for s, k in zip(starts, kernel.shape))] = kernel
    return out


def kernel_spectrum(kernel: np.ndarray, dims: Tuple[int, int, int]) -> np.ndarray:
    """Centered spectrum of a centered kernel embedded in ``dims``."""
    return centered_fftn(embed_centered(np.asarray(kernel, dtype=np.complex128), dims))


def correlate(kernel: ComplexVolume, f: Volume) -> ComplexVolume:
    """Periodic correlation ``out(x) = Σ_x' conj(k(x'-x)) f(x')``."""
    if kernel.domain != "spatial":
        raise ParameterError("correlate expects a spatial-domain kernel")
    k_hat = kernel_spectrum(kernel.data, f.dims)
    f_hat = centered_fftn(f.data)
    out = centered_ifftn(np.conj(k_hat) * f_hat)
    return ComplexVolume(out, f.spacing, "spatial")


def pad_volume(v: Volume, pad: Union[int, Tuple[int, int, int]]) -> Volume:
    """Edge-replication padding applied before a periodic transform."""
    pads = (pad,) * 3 if np.isscalar(pad) else tuple(pad)
    if any(p < 0 for p in pads):
        raise ParameterError(f"Padding must be non-negative, got {pads}")
    data = np.pad(v.data, [(int(p), int(p)) for p in pads], mode="edge")
    return Volume(data, v.spacing)


def crop_volume(v: Volume, pad: Union[int, Tuple[int, int, int]]) -> Volume:
    pads = (pad,) * 3 if np.isscalar(pad) else tuple(pad)
    if any(2 * p >= n for p, n in zip(pads, v.dims)):
        raise ParameterError(f"Cannot crop {pads} from volume of dims {v.dims}")
    sl = tuple(slice(int(p), n - int(p)) for p, n in zip(pads, v.dims))
    return Volume(v.data[sl].copy(), v.spacing)


def sidecar_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_name(path.name + SIDECAR_SUFFIX)


def _read_header(path: Path) -> dict:
    header_path = sidecar_path(path)
    if not header_path.is_file():
        raise FormatError(f"Header file not found: {header_path}")
    if not path.is_file():
        raise FormatError(f"Payload file not found: {path}")
    try:
        with open(header_path, "r", encoding="utf-8") as fh:
            header = json.load(fh)
    except json.JSONDecodeError as e:
        raise FormatError(f"Invalid JSON in header {header_path}: {e}")
    for key in ("dims", "spacing", "dtype"):
        if key not in header:
            raise FormatError(f"Header {header_path} is missing '{key}'")
    if header["dtype"] not in _DTYPES:
        raise FormatError(f"Unknown dtype '{header['dtype']}' in {header_path}")
    if header.get("order", "x-fastest") != "x-fastest":
        raise FormatError(f"Unsupported voxel order '{header['order']}' in {header_path}")
    return header


def _write_payload(path: Path, dims, spacing, dtype: str, payload: np.ndarray):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(payload.astype("<f4").tobytes())
    header = {
        "dims": [int(d) for d in dims],
        "spacing": [float(s) for s in spacing],
        "dtype": dtype,
        "order": "x-fastest",
    }
    with open(sidecar_path(path), "w", encoding="utf-8") as fh:
        json.dump(header, fh, indent=4)
    log.debug(f"Wrote {dtype} volume {tuple(dims)} to {path}")


def write_volume(v: Volume, path: Union[str, Path]) -> None:
    _write_payload(Path(path), v.dims, v.spacing, "f32", v.data.ravel(order="F"))


def read_volume(path: Union[str, Path]) -> Volume:
    path = Path(path)
    header = _read_header(path)
    if header["dtype"] != "f32":
        raise FormatError(f"Expected an f32 volume in {path}, found '{header['dtype']}'")
    dims = tuple(int(d) for d in header["dims"])
    payload = np.fromfile(path, dtype="<f4")
    if payload.size != int(np.prod(dims)):
        raise FormatError(
            f"Payload of {path} holds {payload.size} values, header dims {dims} need {int(np.prod(dims))}"
        )
    try:
        return Volume(payload.reshape(dims, order="F"), tuple(header["spacing"]))
    except ParameterError as e:
        raise FormatError(f"Invalid header in {path}: {e}")


def write_complex_volume(v: ComplexVolume, path: Union[str, Path]) -> None:
    flat = v.data.ravel(order="F")
    interleaved = np.empty(2 * flat.size, dtype=np.float64)
    interleaved[0::2] = flat.real
    interleaved[1::2] = flat.imag
    _write_payload(Path(path), v.dims, v.spacing, "c64", interleaved)


def read_complex_volume(path: Union[str, Path], domain: str = "spatial") -> ComplexVolume:
    path = Path(path)
    header = _read_header(path)
    if header["dtype"] != "c64":
        raise FormatError(f"Expected a c64 volume in {path}, found '{header['dtype']}'")
    dims = tuple(int(d) for d in header["dims"])
    payload = np.fromfile(path, dtype="<f4").astype(np.float64)
    if payload.size != 2 * int(np.prod(dims)):
        raise FormatError(f"Complex payload of {path} does not match dims {dims}")
    data = (payload[0::2] + 1j * payload[1::2]).reshape(dims, order="F")
    return ComplexVolume(data, tuple(header["spacing"]), domain)


def volume_hash(v: Union[Volume, ComplexVolume]) -> str:
    """SHA-256 over dims, spacing and the raw float payload."""
    h = hashlib.sha256()
    h.update(json.dumps({"dims": list(v.dims), "spacing": list(v.spacing)}).encode("utf-8"))
    h.update(np.ascontiguousarray(v.data).tobytes())
    return h.hexdigest()
