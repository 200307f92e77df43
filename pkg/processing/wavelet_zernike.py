"""Analytic cake wavelets in the generalized Zernike basis.

Frequencies in this module are measured in cycles: the filter is supported
on the ball of radius ``ρ_N = 0.5 / spacing`` and the spatial radial argument
is ``q = 2π ρ_N r`` (``π r`` for unit voxels). Helpers that take angular
frequencies (the DFT branch's convention) say so explicitly.
"""

import dataclasses
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy import special

from . import sphere_harmonics as sh
from .errors import ParameterError
from .volume_core import ComplexVolume
from .wavelet_dft import WaveletBank, angular_coeffs, gaussian_hat, gaussian_low_pass, radial_g, CakeParams

log = logging.getLogger(__name__)


@dataclass
class ZernikeParams:
    alpha: float = 6.0
    beta: int = 2
    n_orientations: int = 42
    s_o: float = 0.10125
    tol: float = 1e-3
    p_max: int = 12
    filter_dims: Tuple[int, int, int] = (11, 11, 11)
    seed: int = 0
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    s_rho: float = 128.0
    eps_m: float = 1e-3

    def __post_init__(self):
        self.filter_dims = tuple(int(d) for d in self.filter_dims)
        self.spacing = tuple(float(s) for s in self.spacing)
        if self.alpha <= 0:
            raise ParameterError(f"alpha must be positive, got {self.alpha}")
        if self.beta != 2:
            raise ParameterError(f"Only the β = 2 flat profile is available, got β = {self.beta}")
        if self.p_max < 0 or self.n_orientations < 1:
            raise ParameterError("p_max must be ≥ 0 and n_orientations ≥ 1")
        if self.s_o <= 0 or self.s_rho <= 0:
            raise ParameterError(f"s_o and s_rho must be positive, got {self.s_o}, {self.s_rho}")

    @property
    def nyquist_cycles(self) -> float:
        return 0.5 / min(self.spacing)

    def to_dict(self) -> dict:
        data = dataclasses.asdict(self)
        data["filter_dims"] = list(self.filter_dims)
        data["spacing"] = list(self.spacing)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "ZernikeParams":
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})


@dataclass
class ZernikeRadialSpec:
    """b̃_n^{l,α} per band l, indexed by p = (n - l)/2."""
    alpha: float
    table: np.ndarray  # (L+1, P+1)

    def __post_init__(self):
        self.table = np.asarray(self.table, dtype=np.float64)
        if self.alpha <= 0:
            raise ParameterError(f"alpha must be positive, got {self.alpha}")
        if self.table.ndim != 2 or not np.all(np.isfinite(self.table)):
            raise ParameterError("Radial coefficient table must be a finite (L+1, P+1) array")

    @property
    def l_max(self) -> int:
        return self.table.shape[0] - 1

    @property
    def p_max(self) -> int:
        return self.table.shape[1] - 1


@dataclass
class AnalyticFilterSpec:
    alpha: float
    coeffs: np.ndarray  # c_{n,l}^0 as (L+1, P+1)
    angular: sh.ZonalCoeffs = field(repr=False)
    nyquist: float = 0.5  # cycles per world unit

    @property
    def band_limit(self) -> int:
        return self.coeffs.shape[0] - 1


# --- Radial basis ---

def jacobi(p: int, a: float, b: float, x) -> np.ndarray:
    return special.eval_jacobi(p, a, b, x)


def _check_pair(n: int, l: int) -> int:
    if l < 0 or n < l or (n - l) % 2:
        raise ParameterError(f"Zernike index pair needs n - l even and ≥ 0, got n={n}, l={l}")
    return (n - l) // 2


def zernike_radial(n: int, l: int, alpha: float, rho) -> np.ndarray:
    """R_n^{l,α}(ρ) = ρ^l (1-ρ²)^α P_p^{(α, l+½)}(2ρ²-1)."""
    p = _check_pair(n, l)
    rho = np.asarray(rho, dtype=np.float64)
    if np.any(rho < 0.0) or np.any(rho > 1.0):
        raise ParameterError("Zernike radial functions are defined on 0 ≤ ρ ≤ 1")
    return rho ** l * (1.0 - rho ** 2) ** alpha * jacobi(p, alpha, l + 0.5, 2.0 * rho ** 2 - 1.0)


def zernike_normalization(n: int, l: int, alpha: float) -> float:
    p = _check_pair(n, l)
    return float(special.poch(p + 1, alpha) / special.poch(p + l + 1.5, alpha) / (2.0 * (n + alpha + 1.5)))


def zernike_fourier_radial(n: int, l: int, alpha: float, q) -> np.ndarray:
    """S_{n,l}^α(q) = ∫₀¹ R_n^{l,α}(ρ) j_l(qρ) ρ² dρ in closed form."""
    p = _check_pair(n, l)
    q = np.asarray(q, dtype=np.float64)
    out = np.zeros(q.shape)
    pos = q > 0.0
    if np.any(pos):
        qp = q[pos]
        out[pos] = (2.0 ** alpha * (-1.0) ** p * special.poch(p + 1, alpha)
                    * np.sqrt(np.pi / (2.0 * qp)) * special.jv(n + alpha + 1.5, qp) / qp ** (alpha + 1.0))
    if n == 0:
        out[~pos] = np.sqrt(np.pi) * special.gamma(1.0 + alpha) / (4.0 * special.gamma(2.5 + alpha))
    return out


# --- Flat radial profile ---

def rho_max(alpha: float, beta: float = 2.0) -> float:
    return float(np.sqrt((0.5 * beta) / (alpha + 0.5 * beta)))


def flat_taylor_coeffs(alpha: float) -> Tuple[float, float, float]:
    k = (alpha + 1.0) ** 3 / (2.0 * alpha)
    r2 = rho_max(alpha) ** 2
    return 1.0 + k * r2 ** 2, -2.0 * k * r2, k


def _b_max(alpha: float) -> float:
    r2 = rho_max(alpha) ** 2
    return (1.0 - r2) ** alpha * r2


def flat_profile(alpha: float, rho) -> np.ndarray:
    """B^flat_{α,2}(ρ), normalized to 1 at ρ_max."""
    rho = np.asarray(rho, dtype=np.float64)
    c0, c1, c2 = flat_taylor_coeffs(alpha)
    inside = np.clip(1.0 - rho ** 2, 0.0, None)
    return rho ** 2 * inside ** alpha * (c0 + c1 * rho ** 2 + c2 * rho ** 4) / _b_max(alpha)


def generalized_binom(x: float, p_max: int) -> np.ndarray:
    """C(x, p) = x(x-1)…(x-p+1)/p! for p = 0..p_max and any real x."""
    out = np.ones(p_max + 1)
    for k in range(p_max):
        out[k + 1] = out[k] * (x - k) / (k + 1)
    return out


def standard_profile_coeffs(alpha: float, beta: float, l: int, p_max: int) -> np.ndarray:
    """b_{n=l+2p}^{l,α,β} of B_{α,β}(ρ) = (1-ρ²)^α ρ^β for p = 0..p_max."""
    p = np.arange(p_max + 1)
    # upper argument is a negative integer for even l > β
    num = generalized_binom((beta - l) / 2.0, p_max)
    den = (2.0 * alpha + beta + l + 2.0 * p + 3.0) * special.binom(0.5 * (beta + l + 1.0) + alpha + p, alpha + p)
    return num / den


def flat_profile_coeffs(alpha: float, l_max: int, p_max: int = 12) -> ZernikeRadialSpec:
    if alpha <= 0:
        raise ParameterError(f"alpha must be positive, got {alpha}")
    taylor = flat_taylor_coeffs(alpha)
    table = np.zeros((l_max + 1, p_max + 1))
    for l in range(l_max + 1):
        b = sum(c * standard_profile_coeffs(alpha, 2 + 2 * i, l, p_max) for i, c in enumerate(taylor))
        norms = np.array([zernike_normalization(l + 2 * p, l, alpha) for p in range(p_max + 1)])
        table[l] = b / norms / _b_max(alpha)
    return ZernikeRadialSpec(alpha, table)


def zernike_fourier_profile(spec: ZernikeRadialSpec, l: int, rho) -> np.ndarray:
    """Σ_p b̃ R_{l+2p}^{l,α}(ρ): the band-l reconstruction of B^flat."""
    rho = np.asarray(rho, dtype=np.float64)
    out = np.zeros(rho.shape)
    for p, b in enumerate(spec.table[l]):
        out += b * zernike_radial(l + 2 * p, l, spec.alpha, rho)
    return out


# --- Analytic filters ---

def analytic_filter_spec(params: ZernikeParams) -> AnalyticFilterSpec:
    angular = angular_coeffs(params.s_o, params.tol)
    radial = flat_profile_coeffs(params.alpha, angular.band_limit, params.p_max)
    coeffs = angular.values[:, None] * radial.table
    return AnalyticFilterSpec(params.alpha, coeffs, angular, params.nyquist_cycles)


def _grid_points(dims, spacing) -> np.ndarray:
    axes = [(np.arange(n) - n // 2) * s for n, s in zip(dims, spacing)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)


def _band_selected(l: int, bands: str) -> bool:
    if bands == "all":
        return True
    if bands == "even":
        return l % 2 == 0
    if bands == "odd":
        return l % 2 == 1
    raise ParameterError(f"Unknown band selection '{bands}'")


def assemble_spatial_filter(spec: AnalyticFilterSpec, n: np.ndarray, dims: Tuple[int, int, int],
                            spacing=(1.0, 1.0, 1.0), bands: str = "all", method: str = "wigner") -> ComplexVolume:
    """ψ_{1,n}(x) = ρ_N³ Σ c_{n,l} D^l_{0,m'} 4π i^l S_{n,l}^α(2π r ρ_N) Y_l^{m'}(x̂), sampled directly."""
    if any(d % 2 == 0 for d in dims):
        raise ParameterError(f"Filter grid must have odd dims, got {tuple(dims)}")
    points = _grid_points(dims, spacing)
    r = np.linalg.norm(points, axis=1)
    directions = np.tile([0.0, 0.0, 1.0], (r.size, 1))
    nz = r > 0
    directions[nz] = points[nz] / r[nz, None]
    q = 2.0 * np.pi * spec.nyquist * r

    if method == "wigner":
        basis = sh.sh_matrix(spec.band_limit, directions)
        rows = sh.steer_zonal(sh.ZonalCoeffs(np.ones(spec.band_limit + 1)), n)
    elif method != "zonal":
        raise ParameterError(f"Unknown steering method '{method}'")
    cos_angle = directions @ (np.asarray(n, dtype=np.float64) / np.linalg.norm(n))

    out = np.zeros(r.size, dtype=np.complex128)
    for l in range(spec.band_limit + 1):
        if not _band_selected(l, bands) or not np.any(spec.coeffs[l]):
            continue
        radial = np.zeros(r.size)
        for p, c in enumerate(spec.coeffs[l]):
            if c != 0.0:
                radial += c * zernike_fourier_radial(l + 2 * p, l, spec.alpha, q)
        if method == "wigner":
            angular = (basis[:, l * l:(l + 1) * (l + 1)] @ rows[l]).real
        else:
            angular = np.sqrt((2 * l + 1) / sh.FOUR_PI) * sh.legendre(l, cos_angle)
        out += (1j ** l) * sh.FOUR_PI * radial * angular
    out *= spec.nyquist ** 3
    return ComplexVolume(out.reshape(tuple(dims)), tuple(spacing), "spatial")


def evaluate_fourier_zernike(spec: AnalyticFilterSpec, n: np.ndarray, omega: np.ndarray) -> np.ndarray:
    """ψ̂_{1,n} from the coefficient table at angular frequencies ``omega`` (..., 3)."""
    omega = np.asarray(omega, dtype=np.float64)
    rho = np.linalg.norm(omega, axis=-1) / (2.0 * np.pi * spec.nyquist)
    out = np.zeros(rho.shape)
    inside = (rho <= 1.0) & (rho > 0.0)
    if not np.any(inside):
        return out
    directions = omega[inside] / np.linalg.norm(omega[inside], axis=-1)[:, None]
    cos_angle = directions @ (np.asarray(n, dtype=np.float64) / np.linalg.norm(n))
    acc = np.zeros(directions.shape[0])
    for l in range(spec.band_limit + 1):
        radial = np.zeros(directions.shape[0])
        for p, c in enumerate(spec.coeffs[l]):
            if c != 0.0:
                radial += c * zernike_radial(l + 2 * p, l, spec.alpha, rho[inside])
        acc += radial * np.sqrt((2 * l + 1) / sh.FOUR_PI) * sh.legendre(l, cos_angle)
    out[inside] = acc
    return out


def build_zernike_bank(params: ZernikeParams, design: Optional[sh.SphericalDesign] = None,
                       workers: int = 1) -> WaveletBank:
    if any(d % 2 == 0 for d in params.filter_dims):
        raise ParameterError(f"filter_dims must be odd for a centered filter, got {params.filter_dims}")
    if design is None:
        if params.n_orientations == 1:
            design = sh.SphericalDesign(np.array([[0.0, 0.0, 1.0]]), np.array([sh.FOUR_PI]))
        else:
            design = sh.sample_sphere(params.n_orientations, seed=params.seed)
    spec = analytic_filter_spec(params)
    log.info(f"Building Zernike bank: {design.count} orientations, α={params.alpha}, "
             f"L={spec.band_limit}, P={params.p_max}, dims {params.filter_dims}")

    def _one(n):
        return assemble_spatial_filter(spec, n, params.filter_dims, params.spacing).data

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        filters = np.stack(list(pool.map(_one, design.points)))

    return WaveletBank(
        design=design,
        filters=filters,
        low_pass=gaussian_low_pass(params.filter_dims, params.spacing, params.s_rho),
        coeffs={"alpha": params.alpha, "p_max": params.p_max, "c_nl": spec.coeffs.tolist(),
                "a_l": spec.angular.values.tolist()},
        params=params.to_dict(),
        kind="zernike",
        spectral_split=False,
        spacing=params.spacing,
    )


# --- Comparison helpers ---

@dataclass
class RadialMatch:
    kappa: float
    residual: float
    correlation: float


def match_radial_profile(cake: CakeParams, zernike: ZernikeParams, n_samples: int = 1024) -> RadialMatch:
    """Least-squares fit κ·B^flat(ω/ρ_N) ≈ (1 - Ĝ)g(ω) over 0 ≤ ω ≤ ρ_N with 3D (ω²) weight."""
    omega = np.linspace(0.0, cake.nyquist, n_samples)
    target = (1.0 - gaussian_hat(omega ** 2, cake.s_rho)) * radial_g(omega, cake.varrho, cake.sigma)
    model = flat_profile(zernike.alpha, omega / cake.nyquist)
    w = omega ** 2
    kappa = float(np.sum(w * target * model) / np.sum(w * model ** 2))
    residual = float(np.sqrt(np.sum(w * (target - kappa * model) ** 2) / np.sum(w * target ** 2)))
    correlation = float(np.sum(w * target * model) / np.sqrt(np.sum(w * target ** 2) * np.sum(w * model ** 2)))
    log.info(f"Radial match: κ={kappa:.4g}, residual={residual:.3e}, correlation={correlation:.4f}")
    return RadialMatch(kappa, residual, correlation)


def harmonic_oscillator_wavelet(L: int, dims: Tuple[int, int, int], spacing=(1.0, 1.0, 1.0)) -> ComplexVolume:
    """ψ_H(x) = Σ_{l≤L} r^l e^{-r²/2} Y_l^0(θ) / √(l!), a poorly localized baseline."""
    if L < 0:
        raise ParameterError(f"L must be non-negative, got {L}")
    points = _grid_points(dims, spacing)
    r = np.linalg.norm(points, axis=1)
    cos_theta = np.ones(r.size)
    nz = r > 0
    cos_theta[nz] = points[nz, 2] / r[nz]
    out = np.zeros(r.size)
    for l in range(L + 1):
        out += (r ** l * np.exp(-0.5 * r ** 2) * np.sqrt((2 * l + 1) / sh.FOUR_PI)
                * sh.legendre(l, cos_theta) / np.sqrt(special.factorial(l)))
    return ComplexVolume(out.reshape(tuple(dims)).astype(np.complex128), tuple(spacing), "spatial")
