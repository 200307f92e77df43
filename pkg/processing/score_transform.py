"""Discrete orientation-score transform, its inverses and the steerable evaluator.

Scores are stored orientation-major: ``data[i]`` is the complex volume of
orientation ``design.points[i]``.
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from scipy import ndimage

from . import sphere_harmonics as sh
from .errors import FormatError, ParameterError, ProvenanceError
from .volume_core import (
    ComplexVolume,
    FrequencyGrid,
    Volume,
    centered_fftn,
    centered_ifftn,
    kernel_spectrum,
    read_complex_volume,
    read_volume,
    write_complex_volume,
    write_volume,
)
from .wavelet_dft import CakeParams, WaveletBank, gaussian_hat, sum_rule_bounds, angular_coeffs

log = logging.getLogger(__name__)

SCORE_MANIFEST = "manifest.json"


@dataclass
class OrientationScore:
    data: np.ndarray  # (N_o, X, Y, Z) complex
    design: sh.SphericalDesign
    low_channel: Volume
    bank_hash: str
    s_rho: float
    spectral_split: bool = True  # low/high split of the producing bank

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.complex128)
        if self.data.ndim != 4 or self.data.shape[0] != self.design.count:
            raise ParameterError(
                f"Score has shape {self.data.shape} but the design holds {self.design.count} orientations"
            )
        if self.data.shape[1:] != self.low_channel.dims:
            raise ParameterError(f"Low channel dims {self.low_channel.dims} differ from score dims {self.data.shape[1:]}")
        if not np.all(np.isfinite(self.data)):
            raise ParameterError("Orientation score contains non-finite values")

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(int(d) for d in self.data.shape[1:])

    @property
    def spacing(self) -> Tuple[float, float, float]:
        return self.low_channel.spacing

    @property
    def count(self) -> int:
        return self.design.count

    def channel(self, index: int) -> ComplexVolume:
        return ComplexVolume(self.data[index], self.spacing, "spatial")


def _check_spacing(bank: WaveletBank, spacing) -> None:
    if not np.allclose(bank.spacing, spacing, rtol=1e-9):
        raise ParameterError(f"Bank spacing {bank.spacing} does not match volume spacing {tuple(spacing)}")


def _gaussian_spectrum(dims, spacing, s_rho: float) -> np.ndarray:
    return gaussian_hat(FrequencyGrid(dims, spacing).norm() ** 2, s_rho)


def filter_spectrum(bank: WaveletBank, index: int, dims, g_hat: Optional[np.ndarray] = None) -> np.ndarray:
    """K̂_i on the image grid, high-passed when the bank keeps unsplit filters."""
    k_hat = kernel_spectrum(bank.filters[index], dims)
    if bank.spectral_split:
        if g_hat is None:
            g_hat = _gaussian_spectrum(dims, bank.spacing, bank.s_rho)
        k_hat = k_hat * (1.0 - g_hat)
    return k_hat


def forward(f: Volume, bank: WaveletBank, workers: int = 1) -> OrientationScore:
    _check_spacing(bank, f.spacing)
    f_hat = centered_fftn(f.data)
    g_hat = _gaussian_spectrum(f.dims, f.spacing, bank.s_rho)

    def _channel(i):
        return centered_ifftn(np.conj(filter_spectrum(bank, i, f.dims, g_hat)) * f_hat)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        data = np.stack(list(pool.map(_channel, range(bank.count))))
    low = Volume(centered_ifftn(g_hat * f_hat).real, f.spacing)
    log.debug(f"Forward transform: {bank.count} channels on {f.dims}")
    return OrientationScore(data, bank.design, low, bank.bank_hash, bank.s_rho, bank.spectral_split)


def effective_stability(bank: WaveletBank, dims, spacing) -> np.ndarray:
    """M_eff = Σ Δ_i |K̂_i|² + Ĝ², the multiplier of forward followed by the adjoint."""
    g_hat = _gaussian_spectrum(dims, spacing, bank.s_rho)
    m = g_hat ** 2
    for i, w in enumerate(bank.design.weights):
        m = m + w * np.abs(filter_spectrum(bank, i, dims, g_hat)) ** 2
    return m


def reconstruct_exact(score: OrientationScore, bank: WaveletBank, workers: int = 1) -> Volume:
    if score.bank_hash != bank.bank_hash:
        raise ProvenanceError(f"Score was produced by bank {score.bank_hash[:12]}, not {bank.bank_hash[:12]}")
    _check_spacing(bank, score.spacing)
    dims = score.dims
    g_hat = _gaussian_spectrum(dims, score.spacing, bank.s_rho)

    def _term(i):
        k_hat = filter_spectrum(bank, i, dims, g_hat)
        return bank.design.weights[i] * k_hat * centered_fftn(score.data[i]), \
            bank.design.weights[i] * np.abs(k_hat) ** 2

    acc = g_hat * centered_fftn(score.low_channel.data)
    m_eff = g_hat ** 2
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        for num, den in pool.map(_term, range(bank.count)):
            acc = acc + num
            m_eff = m_eff + den
    clipped = m_eff < bank.eps_m
    if np.any(clipped):
        log.debug(f"Exact inverse: ε clip active on {int(clipped.sum())} frequencies")
    out = centered_ifftn(acc / np.maximum(m_eff, bank.eps_m)).real
    return Volume(out, score.spacing)


def reconstruct_sum(score: OrientationScore) -> Volume:
    """Σ Δ_i Re U_i + low channel.

    Only banks with the low/high split give N ≈ 1 on the high band; analytic
    banks need the exact inverse.
    """
    if not score.spectral_split:
        raise ParameterError(
            f"Fast reconstruction needs a bank with the low/high split (bank {score.bank_hash[:12]}); use the exact inverse"
        )
    total = np.tensordot(score.design.weights, score.data.real, axes=(0, 0))
    return Volume(total + score.low_channel.data, score.spacing)


def energy_audit(f: Volume, bank: WaveletBank) -> dict:
    """Plancherel check: Σ Δ_i‖U_i‖² + ‖low‖² against Σ M_eff |f̂|² / N."""
    score = forward(f, bank)
    spatial = float(np.sum(score.design.weights * np.sum(np.abs(score.data) ** 2, axis=(1, 2, 3)))
                    + np.sum(score.low_channel.data ** 2))
    m_eff = effective_stability(bank, f.dims, f.spacing)
    spectral = float(np.sum(m_eff * np.abs(centered_fftn(f.data)) ** 2) / f.data.size)
    rel = abs(spatial - spectral) / spectral if spectral > 0 else abs(spatial)
    return {"spatial_energy": spatial, "spectral_energy": spectral, "relative_error": rel}


@dataclass
class ConditionAudit:
    m_min: float
    m_max: float
    m_eff_min: float
    m_eff_max: float
    invertible: bool
    cond_split_sq: float
    n_min: float
    n_max: float
    cond_fast: float
    n_bound_low: Optional[float] = None
    n_bound_high: Optional[float] = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def condition_audit(bank: WaveletBank, fine_dims: Tuple[int, int, int] = (64, 64, 64), gamma: float = 0.85) -> ConditionAudit:
    """Stability extrema from the sampled bank itself.

    M uses the stored filters (ψ for DFT banks, ψ₁ for analytic ones) on the
    ball ‖ω‖ ≤ ϱ; N = Σ Δ_i K̂_i over the real parts of the filters, which is
    what the fast sum inverts, uses the ball of radius ϱ/√2.
    """
    if bank.kind == "dft":
        params = CakeParams.from_dict(bank.params)
        varrho, varrho0 = params.varrho, params.varrho0
    else:
        varrho = gamma * np.pi / min(bank.spacing)
        varrho0 = varrho / np.sqrt(2.0)
    grid = FrequencyGrid(fine_dims, bank.spacing)
    rho = grid.norm()
    ball, ball0 = rho <= varrho, rho <= varrho0
    g_hat = gaussian_hat(rho ** 2, bank.s_rho)
    m = np.zeros(fine_dims)
    m_eff = g_hat ** 2
    n_sum = np.zeros(fine_dims, dtype=np.complex128)
    for i, w in enumerate(bank.design.weights):
        k_hat = kernel_spectrum(bank.filters[i], fine_dims)
        m += w * np.abs(k_hat) ** 2
        n_sum += w * kernel_spectrum(bank.filters[i].real, fine_dims)
        high = k_hat * (1.0 - g_hat) if bank.spectral_split else k_hat
        m_eff = m_eff + w * np.abs(high) ** 2
    m_min, m_max = float(m[ball].min()), float(m[ball].max())
    invertible = m_min > 0.0
    if not invertible:
        log.warning("Condition audit: stability function vanishes inside the ball")
    n_real = n_sum.real[ball0]
    n_min, n_max = float(n_real.min()), float(n_real.max())
    audit = ConditionAudit(
        m_min=m_min, m_max=m_max,
        m_eff_min=float(m_eff[ball].min()), m_eff_max=float(m_eff[ball].max()),
        invertible=invertible,
        cond_split_sq=2.0 * m_max / m_min if invertible else float("inf"),
        n_min=n_min, n_max=n_max,
        cond_fast=n_max / n_min if n_min > 0 else float("inf"),
    )
    if bank.kind == "dft":
        params = CakeParams.from_dict(bank.params)
        audit.n_bound_low, audit.n_bound_high = sum_rule_bounds(angular_coeffs(params.s_o, params.tol), bank.design)
    return audit


# --- Steerable evaluation ---

@dataclass
class ShScoreExpansion:
    coeffs: np.ndarray  # (X, Y, Z, (L+1)²) complex
    band_limit: int
    residual: float
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.coeffs.shape[-1] != (self.band_limit + 1) ** 2:
            raise ParameterError(
                f"Expansion holds {self.coeffs.shape[-1]} coefficients, expected {(self.band_limit + 1) ** 2}"
            )

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(int(d) for d in self.coeffs.shape[:3])


def sh_expand(score: OrientationScore, band_limit: int = 5) -> ShScoreExpansion:
    """Per-voxel weighted least-squares fit over the orientation axis."""
    n_coeffs = (band_limit + 1) ** 2
    if band_limit < 0 or n_coeffs > score.count:
        raise ParameterError(f"Band limit {band_limit} needs {n_coeffs} orientations, design has {score.count}")
    basis = sh.sh_matrix(band_limit, score.design.points)
    sqrt_w = np.sqrt(score.design.weights)[:, None]
    weighted = sqrt_w * basis
    if np.linalg.matrix_rank(weighted) < n_coeffs:
        raise ParameterError(f"Design cannot resolve band limit {band_limit}")
    samples = score.data.reshape(score.count, -1)
    coeffs, *_ = np.linalg.lstsq(weighted, sqrt_w * samples, rcond=None)
    fitted = basis @ coeffs
    norm = np.linalg.norm(samples)
    residual = float(np.linalg.norm(fitted - samples) / norm) if norm > 0 else 0.0
    log.debug(f"SH expansion L={band_limit}: relative residual {residual:.3e}")
    coeffs = np.moveaxis(coeffs.reshape((n_coeffs,) + score.dims), 0, -1)
    return ShScoreExpansion(coeffs, band_limit, residual, score.spacing)


def _interp_complex(volume: np.ndarray, coords: np.ndarray, mode: str) -> np.ndarray:
    real = ndimage.map_coordinates(volume.real, coords, order=1, mode=mode)
    imag = ndimage.map_coordinates(volume.imag, coords, order=1, mode=mode)
    return real + 1j * imag


def steer_eval_many(exp: ShScoreExpansion, positions: np.ndarray, directions: np.ndarray,
                    mode: str = "nearest") -> np.ndarray:
    """U(x_k, n_k) for voxel-index positions (P, 3) and unit directions (P, 3)."""
    positions = np.atleast_2d(np.asarray(positions, dtype=np.float64))
    directions = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    if positions.shape != directions.shape:
        raise ParameterError(f"Positions {positions.shape} and directions {directions.shape} differ")
    coords = positions.T
    values = np.stack([_interp_complex(exp.coeffs[..., k], coords, mode) for k in range(exp.coeffs.shape[-1])], axis=-1)
    basis = sh.sh_matrix(exp.band_limit, directions)
    return np.sum(values * basis, axis=-1)


def steer_eval(exp: ShScoreExpansion, x, n) -> complex:
    return complex(steer_eval_many(exp, np.asarray(x)[None, :], np.asarray(n)[None, :])[0])


def synthesize(exp: ShScoreExpansion, direction: np.ndarray) -> np.ndarray:
    """U(·, d) on the whole grid for a single direction d."""
    basis = sh.sh_matrix(exp.band_limit, np.asarray(direction, dtype=np.float64)[None, :])[0]
    return exp.coeffs @ basis


def band_limit(f: Volume, radius: float) -> Volume:
    """Zeroes the spectrum outside ‖ω‖ ≤ radius (angular frequency)."""
    f_hat = centered_fftn(f.data)
    f_hat[FrequencyGrid(f.dims, f.spacing).norm() > radius] = 0.0
    return Volume(centered_ifftn(f_hat).real, f.spacing)


# --- Persistence ---

def save_score(score: OrientationScore, directory: Union[str, Path]) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    channels = [f"channel_{i:03d}.c64" for i in range(score.count)]
    manifest = {
        "dims": list(score.dims),
        "spacing": list(score.spacing),
        "layout": "orientation-major",
        "design": score.design.to_dict(),
        "bank_hash": score.bank_hash,
        "s_rho": score.s_rho,
        "spectral_split": score.spectral_split,
        "channels": channels,
        "low_channel": "low.f32",
    }
    for i, name in enumerate(channels):
        write_complex_volume(score.channel(i), directory / name)
    write_volume(score.low_channel, directory / manifest["low_channel"])
    with open(directory / SCORE_MANIFEST, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=4)
    log.info(f"Saved orientation score ({score.count} channels, dims {score.dims}) to {directory}")
    return directory


def load_score(directory: Union[str, Path]) -> OrientationScore:
    directory = Path(directory)
    manifest_path = directory / SCORE_MANIFEST
    if not manifest_path.is_file():
        raise FormatError(f"Score manifest not found: {manifest_path}")
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
        data = np.stack([read_complex_volume(directory / name).data for name in manifest["channels"]])
        low = read_volume(directory / manifest["low_channel"])
        score = OrientationScore(data, sh.SphericalDesign.from_dict(manifest["design"]), low,
                                 manifest["bank_hash"], float(manifest["s_rho"]),
                                 bool(manifest.get("spectral_split", True)))
    except (KeyError, json.JSONDecodeError, ParameterError) as e:
        raise FormatError(f"Invalid score manifest {manifest_path}: {e}")
    if list(score.dims) != list(manifest["dims"]):
        raise FormatError(f"Score payload dims {score.dims} differ from manifest {manifest['dims']}")
    return score
