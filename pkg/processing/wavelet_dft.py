"""Cake wavelets sampled in the Fourier domain, and their stability diagnostics.

The filter for orientation n is ``ψ̂_n(ω) = g(ρ) h_n(ω/ρ)`` with the erf
radial window g and the steered angular profile h_n whose even bands are the
Funk transform of a heat kernel on S² and whose odd bands are its
antisymmetrized part. The bank keeps the spatial filters obtained by a
centered inverse DFT on the (small) filter grid. The low/high split with
``Ĝ_{s_ρ}`` is applied on the image grid by the transform whenever
``spectral_split`` is set.
"""

import dataclasses
import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from scipy import special

from . import sphere_harmonics as sh
from .errors import FormatError, ParameterError
from .volume_core import (
    ComplexVolume,
    FrequencyGrid,
    Volume,
    centered_fftn,
    centered_ifftn,
    read_complex_volume,
    read_volume,
    write_complex_volume,
    write_volume,
)

log = logging.getLogger(__name__)

BANK_MANIFEST = "manifest.json"


@dataclass
class CakeParams:
    n_orientations: int = 42
    gamma: float = 0.85
    sigma_erf: Optional[float] = None  # None -> (ρ_N - ϱ)/3
    s_rho: float = 128.0
    s_o: float = 0.10125
    filter_dims: Tuple[int, int, int] = (11, 11, 11)
    tol: float = 1e-3
    seed: int = 0
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    eps_m: float = 1e-3
    rho0_fraction: float = float(1.0 / np.sqrt(2.0))

    def __post_init__(self):
        self.filter_dims = tuple(int(d) for d in self.filter_dims)
        self.spacing = tuple(float(s) for s in self.spacing)
        self.validate()

    def validate(self):
        if self.n_orientations < 1:
            raise ParameterError(f"n_orientations must be ≥ 1, got {self.n_orientations}")
        if not 0.0 < self.gamma < 1.0:
            raise ParameterError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.sigma_erf is not None and self.sigma_erf <= 0:
            raise ParameterError(f"sigma_erf must be positive, got {self.sigma_erf}")
        if self.s_rho <= 0 or self.s_o <= 0:
            raise ParameterError(f"s_rho and s_o must be positive, got {self.s_rho}, {self.s_o}")
        if len(self.filter_dims) != 3 or any(d < 1 for d in self.filter_dims):
            raise ParameterError(f"filter_dims must be three positive integers, got {self.filter_dims}")
        if not 0.0 < self.tol < 1.0:
            raise ParameterError(f"tol must lie in (0, 1), got {self.tol}")
        if not 0.5 < self.rho0_fraction < 1.0:
            raise ParameterError(f"rho0_fraction must lie in (0.5, 1), got {self.rho0_fraction}")
        if self.eps_m <= 0:
            raise ParameterError(f"eps_m must be positive, got {self.eps_m}")

    @property
    def nyquist(self) -> float:
        return float(np.pi / min(self.spacing))

    @property
    def varrho(self) -> float:
        return self.gamma * self.nyquist

    @property
    def varrho0(self) -> float:
        return self.rho0_fraction * self.varrho

    @property
    def sigma(self) -> float:
        if self.sigma_erf is not None:
            return float(self.sigma_erf)
        return (self.nyquist - self.varrho) / 3.0

    def to_dict(self) -> dict:
        data = dataclasses.asdict(self)
        data["filter_dims"] = list(self.filter_dims)
        data["spacing"] = list(self.spacing)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "CakeParams":
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})


@dataclass
class WaveletBank:
    """Per-orientation spatial filters plus the ledger that generated them."""
    design: sh.SphericalDesign
    filters: np.ndarray  # (N_o, kx, ky, kz) complex, spatial
    low_pass: np.ndarray  # φ_0 on the filter grid
    coeffs: Dict[str, list]
    params: dict
    kind: str = "dft"
    spectral_split: bool = True
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    bank_hash: str = field(default="", init=False)

    def __post_init__(self):
        self.filters = np.asarray(self.filters, dtype=np.complex128)
        if self.filters.ndim != 4 or self.filters.shape[0] != self.design.count:
            raise ParameterError(
                f"Bank holds {self.filters.shape[0] if self.filters.ndim else 0} filters for {self.design.count} orientations"
            )
        self.spacing = tuple(float(s) for s in self.spacing)
        self.bank_hash = compute_bank_hash(self)

    @property
    def count(self) -> int:
        return self.design.count

    @property
    def filter_dims(self) -> Tuple[int, int, int]:
        return tuple(int(d) for d in self.filters.shape[1:])

    @property
    def s_rho(self) -> float:
        return float(self.params["s_rho"])

    @property
    def eps_m(self) -> float:
        return float(self.params.get("eps_m", 1e-3))

    def filter_volume(self, index: int) -> ComplexVolume:
        return ComplexVolume(self.filters[index], self.spacing, "spatial")


def compute_bank_hash(bank: WaveletBank) -> str:
    h = hashlib.sha256()
    ledger = {"kind": bank.kind, "params": bank.params, "coeffs": bank.coeffs,
              "spectral_split": bank.spectral_split, "spacing": list(bank.spacing)}
    h.update(json.dumps(ledger, sort_keys=True).encode("utf-8"))
    h.update(np.ascontiguousarray(bank.design.points).tobytes())
    h.update(np.ascontiguousarray(bank.filters.astype(np.complex64)).tobytes())
    return h.hexdigest()


# --- Building blocks ---

def radial_g(rho, varrho: float, sigma_erf: float) -> np.ndarray:
    return 0.5 * (1.0 - special.erf((np.asarray(rho, dtype=np.float64) - varrho) / sigma_erf))


def angular_coeffs(s_o: float, tol: float = 1e-3) -> sh.ZonalCoeffs:
    """c_l = (P_l(0) + (1 - (-1)^l)/2) a_l."""
    a = sh.diffusion_kernel_coeffs(s_o, tol)
    factors = np.array([sh.legendre_at_zero(l) + (l % 2) for l in range(a.values.size)])
    return sh.ZonalCoeffs(factors * a.values)


def gaussian_hat(rho_sq, s_rho: float) -> np.ndarray:
    return np.exp(-s_rho * np.asarray(rho_sq))


def angular_profile(coeffs: sh.ZonalCoeffs, n: np.ndarray, directions: np.ndarray,
                    method: str = "zonal") -> np.ndarray:
    """h_n at unit ``directions`` (..., 3).

    ``wigner`` sums c_l D^l_{0,m'} Y_l^{m'}; ``zonal`` uses the equivalent
    Legendre form c_l √((2l+1)/4π) P_l(n·ω̂) and is much cheaper on large grids.
    """
    if method == "wigner":
        return sh.eval_steered(coeffs, n, directions).real
    if method == "zonal":
        return sh.eval_zonal(coeffs, directions, axis=n)
    raise ParameterError(f"Unknown steering method '{method}'")


def evaluate_fourier(params: CakeParams, coeffs: sh.ZonalCoeffs, n: np.ndarray,
                     omega: np.ndarray, method: str = "zonal") -> np.ndarray:
    """ψ̂_n at arbitrary frequencies ``omega`` (..., 3), DC from the l = 0 band only."""
    omega = np.asarray(omega, dtype=np.float64)
    rho = np.linalg.norm(omega, axis=-1)
    out = np.empty(rho.shape)
    dc = rho == 0.0
    g = radial_g(rho, params.varrho, params.sigma)
    out[dc] = g[dc] * coeffs.values[0] / np.sqrt(sh.FOUR_PI)
    if np.any(~dc):
        directions = omega[~dc] / rho[~dc, None]
        out[~dc] = g[~dc] * angular_profile(coeffs, n, directions, method)
    return out


def _grid_omega(grid: FrequencyGrid) -> np.ndarray:
    return np.stack(grid.mesh(), axis=-1)


def sample_fourier_filter(params: CakeParams, n: np.ndarray, grid: Optional[FrequencyGrid] = None,
                          coeffs: Optional[sh.ZonalCoeffs] = None, method: str = "wigner") -> ComplexVolume:
    grid = grid or FrequencyGrid(params.filter_dims, params.spacing)
    coeffs = coeffs or angular_coeffs(params.s_o, params.tol)
    values = evaluate_fourier(params, coeffs, n, _grid_omega(grid), method)
    return ComplexVolume(values.astype(np.complex128), grid.spacing, "fourier")


def split_low_high(psi_hat: ComplexVolume, s_rho: float) -> Tuple[ComplexVolume, ComplexVolume]:
    if psi_hat.domain != "fourier":
        raise ParameterError("split_low_high expects a fourier-domain volume")
    g_hat = gaussian_hat(FrequencyGrid(psi_hat.dims, psi_hat.spacing).norm() ** 2, s_rho)
    low = psi_hat.data * g_hat
    high = psi_hat.data - low
    return (ComplexVolume(low, psi_hat.spacing, "fourier"),
            ComplexVolume(high, psi_hat.spacing, "fourier"))


def gaussian_low_pass(dims: Tuple[int, int, int], spacing, s_rho: float) -> np.ndarray:
    """φ_0(x) = (4π s_ρ)^{-3/2} exp(-|x|²/4s_ρ) on a centered grid (world units)."""
    axes = [(np.arange(n) - n // 2) * s for n, s in zip(dims, spacing)]
    xx, yy, zz = np.meshgrid(*axes, indexing="ij")
    return (4.0 * np.pi * s_rho) ** -1.5 * np.exp(-(xx ** 2 + yy ** 2 + zz ** 2) / (4.0 * s_rho))


def build_bank(params: CakeParams, design: Optional[sh.SphericalDesign] = None,
               workers: int = 1) -> WaveletBank:
    if any(d % 2 == 0 for d in params.filter_dims):
        raise ParameterError(f"filter_dims must be odd for a centered filter, got {params.filter_dims}")
    if design is None:
        if params.n_orientations == 1:
            design = sh.SphericalDesign(np.array([[0.0, 0.0, 1.0]]), np.array([sh.FOUR_PI]))
        else:
            design = sh.sample_sphere(params.n_orientations, seed=params.seed)
    coeffs = angular_coeffs(params.s_o, params.tol)
    grid = FrequencyGrid(params.filter_dims, params.spacing)
    log.info(f"Building cake bank: {design.count} orientations, L={coeffs.band_limit}, dims {params.filter_dims}")

    def _one(n):
        psi_hat = sample_fourier_filter(params, n, grid, coeffs, method="wigner")
        return centered_ifftn(psi_hat.data)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        filters = np.stack(list(pool.map(_one, design.points)))

    return WaveletBank(
        design=design,
        filters=filters,
        low_pass=gaussian_low_pass(params.filter_dims, params.spacing, params.s_rho),
        coeffs={"c_l": coeffs.values.tolist()},
        params=params.to_dict(),
        kind="dft",
        spectral_split=True,
        spacing=params.spacing,
    )


def high_pass_filters(bank: WaveletBank) -> np.ndarray:
    """Spatial ψ₁ on the filter grid, i.e. the split applied before the inverse DFT."""
    if not bank.spectral_split:
        return bank.filters.copy()
    out = np.empty_like(bank.filters)
    for i, psi in enumerate(bank.filters):
        _, high = split_low_high(ComplexVolume(centered_fftn(psi), bank.spacing, "fourier"), bank.s_rho)
        out[i] = centered_ifftn(high.data)
    return out


# --- Persistence ---

def save_bank(bank: WaveletBank, directory: Union[str, Path]) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "kind": bank.kind,
        "params": bank.params,
        "design": bank.design.to_dict(),
        "coeffs": bank.coeffs,
        "spectral_split": bank.spectral_split,
        "spacing": list(bank.spacing),
        "filters": [f"filter_{i:03d}.c64" for i in range(bank.count)],
        "low_pass": "low_pass.f32",
        "bank_hash": bank.bank_hash,
    }
    for i, name in enumerate(manifest["filters"]):
        write_complex_volume(bank.filter_volume(i), directory / name)
    write_volume(Volume(bank.low_pass, bank.spacing), directory / manifest["low_pass"])
    with open(directory / BANK_MANIFEST, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=4)
    log.info(f"Saved {bank.kind} bank ({bank.count} filters) to {directory}")
    return directory


def load_bank(directory: Union[str, Path]) -> WaveletBank:
    directory = Path(directory)
    manifest_path = directory / BANK_MANIFEST
    if not manifest_path.is_file():
        raise FormatError(f"Bank manifest not found: {manifest_path}")
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
        filters = np.stack([read_complex_volume(directory / name).data for name in manifest["filters"]])
        low_pass = read_volume(directory / manifest["low_pass"]).data
        bank = WaveletBank(
            design=sh.SphericalDesign.from_dict(manifest["design"]),
            filters=filters,
            low_pass=low_pass,
            coeffs=manifest["coeffs"],
            params=manifest["params"],
            kind=manifest["kind"],
            spectral_split=manifest["spectral_split"],
            spacing=tuple(manifest["spacing"]),
        )
    except (KeyError, json.JSONDecodeError, ParameterError) as e:
        raise FormatError(f"Invalid bank manifest {manifest_path}: {e}")
    if manifest.get("bank_hash") and manifest["bank_hash"] != bank.bank_hash:
        raise FormatError(f"Bank payload in {directory} does not match its manifest hash")
    return bank


# --- Stability diagnostics ---

@dataclass
class StabilityReport:
    m_min: float
    m_max: float
    n_min: float
    n_max: float
    n_bound_low: float
    n_bound_high: float
    split_identity_error: float
    m_split_min: float
    m_split_max: float
    invertible: bool
    cond_split_sq: float
    cond_fast: float

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def design_band_sums(coeffs: sh.ZonalCoeffs, design: sh.SphericalDesign) -> List[np.ndarray]:
    """d_l^m = Σ_i c_l Δ_i D^l_{0,m}(0, β_i, γ_i) per band."""
    sums = []
    for l, c_l in enumerate(coeffs.values):
        acc = np.zeros(2 * l + 1, dtype=np.complex128)
        for n, w in zip(design.points, design.weights):
            beta, gamma = sh.rotation_angles(n)
            acc += w * sh.wigner_d_row(l, beta, gamma).values
        sums.append(c_l * acc)
    return sums


def sum_rule_bounds(coeffs: sh.ZonalCoeffs, design: sh.SphericalDesign) -> Tuple[float, float]:
    """1 ± Σ_{even l≥2} ‖d_l‖ √((2l+1)/4π) around the exact l = 0 contribution.

    The fast sum keeps Re U, and the real part of a filter carries only its
    even bands, so odd bands never enter N.
    """
    sums = design_band_sums(coeffs.even_part(), design)
    spread = sum(np.linalg.norm(d) * np.sqrt((2 * l + 1) / sh.FOUR_PI) for l, d in enumerate(sums) if l >= 2 and l % 2 == 0)
    centre = float((sums[0][0] / np.sqrt(sh.FOUR_PI)).real)
    return centre - spread, centre + spread


def _angular_sum(coeffs, design, directions, power: int) -> np.ndarray:
    out = np.zeros(directions.shape[0])
    for n, w in zip(design.points, design.weights):
        out += w * angular_profile(coeffs, n, directions, "zonal") ** power
    return out


def stability_report(bank_or_params: Union[WaveletBank, CakeParams], fine_dims: Tuple[int, int, int] = (64, 64, 64),
                     n_directions: int = 500, n_radii: int = 16) -> StabilityReport:
    """Extrema of M_ψ^d over ‖ω‖ ≤ ϱ, of N_ψ^d over ‖ω‖ ≤ ϱ_0, and the splitting audit."""
    if isinstance(bank_or_params, WaveletBank):
        if bank_or_params.kind != "dft":
            raise ParameterError("stability_report applies to DFT cake banks")
        params = CakeParams.from_dict(bank_or_params.params)
        design = bank_or_params.design
    else:
        params = bank_or_params
        design = sh.sample_sphere(params.n_orientations, params.seed) if params.n_orientations > 1 else \
            sh.SphericalDesign(np.array([[0.0, 0.0, 1.0]]), np.array([sh.FOUR_PI]))
    if any(f < k for f, k in zip(fine_dims, params.filter_dims)):
        raise ParameterError(f"Fine grid {fine_dims} is coarser than the filter grid {params.filter_dims}")
    coeffs = angular_coeffs(params.s_o, params.tol)

    # M_ψ^d and the split version on the fine grid inside the ball
    grid = FrequencyGrid(fine_dims, params.spacing)
    omega = _grid_omega(grid).reshape(-1, 3)
    rho = np.linalg.norm(omega, axis=1)
    inside = rho <= params.varrho
    omega, rho = omega[inside], rho[inside]
    m_psi = np.zeros(rho.shape)
    m_low = np.zeros(rho.shape)
    m_high = np.zeros(rho.shape)
    g_hat = gaussian_hat(rho ** 2, params.s_rho)
    for n, w in zip(design.points, design.weights):
        psi = evaluate_fourier(params, coeffs, n, omega, "zonal")
        m_psi += w * psi ** 2
        m_low += w * (g_hat * psi) ** 2
        m_high += w * ((1.0 - g_hat) * psi) ** 2
    m_split = m_low + m_high
    factor = 1.0 - 2.0 * g_hat * (1.0 - g_hat)
    split_error = float(np.max(np.abs(m_split - factor * m_psi))) if m_psi.size else 0.0
    m_min, m_max = float(m_psi.min()), float(m_psi.max())

    # N_ψ^d = g(ρ) Σ Δ_i Re h_{n_i}(ω̂) on spherical shells up to ϱ_0
    directions = sh._fibonacci_points(n_directions)
    angular = _angular_sum(coeffs.even_part(), design, directions, 1)
    radii = np.linspace(0.0, params.varrho0, n_radii)[1:]
    g_vals = radial_g(radii, params.varrho, params.sigma)
    n_vals = np.concatenate([np.outer(g_vals, angular).ravel(),
                             [radial_g(0.0, params.varrho, params.sigma) * coeffs.values[0] * np.sqrt(sh.FOUR_PI)]])
    n_min, n_max = float(n_vals.min()), float(n_vals.max())
    low, high = sum_rule_bounds(coeffs, design)

    invertible = m_min > 0.0
    if invertible:
        cond_split_sq = 2.0 * m_max / m_min
    else:
        log.warning("M_ψ^d vanishes on the sampled ball; transform is not invertible there")
        cond_split_sq = float("inf")
    cond_fast = n_max / n_min if n_min > 0 else float("inf")
    report = StabilityReport(
        m_min=m_min, m_max=m_max, n_min=n_min, n_max=n_max,
        n_bound_low=float(low), n_bound_high=float(high),
        split_identity_error=split_error,
        m_split_min=float(m_split.min()), m_split_max=float(m_split.max()),
        invertible=invertible, cond_split_sq=float(cond_split_sq), cond_fast=float(cond_fast),
    )
    log.debug(f"Stability report: {report}")
    return report


def stability_curves(params: CakeParams, s_o_values: List[float], **kwargs) -> List[dict]:
    rows = []
    for s_o in s_o_values:
        p = dataclasses.replace(params, s_o=float(s_o))
        report = stability_report(p, **kwargs)
        rows.append({"s_o": float(s_o), **report.to_dict()})
    return rows
