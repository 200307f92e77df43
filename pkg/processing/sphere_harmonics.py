"""Spherical sampling, spherical harmonics and zonal steering.

Y_l^m follows the orthonormal convention with the Condon-Shortley phase
carried by P_l^m, and ``Y_l^{-m} = (-1)^m conj(Y_l^m)``. A direction
``n(β, γ) = (sinβ cosγ, sinβ sinγ, cosβ)`` is reached from e_z by
``R = R_{e_z,γ} R_{e_y,β}``.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np
from scipy import special

from .errors import FormatError, ParameterError

log = logging.getLogger(__name__)

FOUR_PI = 4.0 * np.pi


# --- Coordinates and rotations ---

def cart_to_sph(points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Polar angle ϑ ∈ [0, π] and azimuth φ of (..., 3) vectors."""
    points = np.asarray(points, dtype=np.float64)
    x, y, z = points[..., 0], points[..., 1], points[..., 2]
    theta = np.arctan2(np.hypot(x, y), z)
    phi = np.arctan2(y, x)
    return theta, phi


def sph_to_cart(theta, phi) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    return np.stack([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)], axis=-1)


def rotation_angles(n: np.ndarray) -> Tuple[float, float]:
    """(β, γ) such that n = R_{e_z,γ} R_{e_y,β} e_z."""
    n = np.asarray(n, dtype=np.float64)
    norm = np.linalg.norm(n)
    if norm == 0:
        raise ParameterError("Orientation vector must be non-zero")
    beta, gamma = cart_to_sph(n / norm)
    return float(beta), float(gamma)


def rotation_to(n: np.ndarray) -> np.ndarray:
    beta, gamma = rotation_angles(n)
    cb, sb, cg, sg = np.cos(beta), np.sin(beta), np.cos(gamma), np.sin(gamma)
    rz = np.array([[cg, -sg, 0.0], [sg, cg, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]])
    return rz @ ry


def orthonormal_complement(n: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Deterministic {e1, e2} with (e1, e2, n) right-handed.

    e1 is Gram-Schmidt of the canonical axis least aligned with n.
    """
    n = np.asarray(n, dtype=np.float64)
    n = n / np.linalg.norm(n)
    axis = np.zeros(3)
    axis[int(np.argmin(np.abs(n)))] = 1.0
    e1 = axis - np.dot(axis, n) * n
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    return e1, e2


# --- Legendre functions and spherical harmonics ---

def legendre(l: int, x) -> np.ndarray:
    return special.eval_legendre(l, x)


def legendre_at_zero(l: int) -> float:
    """P_l(0): zero for odd l, (-1)^{l/2} (l-1)!!/l!! for even l."""
    if l % 2:
        return 0.0
    half = l // 2
    log_ratio = special.gammaln(l + 1) - 2.0 * special.gammaln(half + 1) - l * np.log(2.0)
    return float((-1) ** half * np.exp(log_ratio))


def assoc_legendre(l: int, m: int, x) -> np.ndarray:
    """P_l^m(x) with the Condon-Shortley phase, m ≥ 0."""
    return special.lpmv(m, l, x)


def _sh_norm(l: int, m: int) -> float:
    return float(np.sqrt((2 * l + 1) / FOUR_PI * np.exp(special.gammaln(l - m + 1) - special.gammaln(l + m + 1))))


def eval_sh(l: int, m: int, theta, phi) -> np.ndarray:
    if l < 0 or abs(m) > l:
        raise ParameterError(f"Invalid spherical harmonic index (l={l}, m={m})")
    theta = np.asarray(theta, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    am = abs(m)
    value = _sh_norm(l, am) * assoc_legendre(l, am, np.cos(theta)) * np.exp(1j * am * phi)
    if m < 0:
        value = (-1) ** am * np.conj(value)
    return value


def sh_index(l: int, m: int) -> int:
    return l * l + l + m


def sh_matrix(L: int, points: np.ndarray) -> np.ndarray:
    """Complex Y_l^m at each point; column sh_index(l, m)."""
    theta, phi = cart_to_sph(points)
    cos_t = np.cos(theta)
    out = np.empty(theta.shape + ((L + 1) ** 2,), dtype=np.complex128)
    for l in range(L + 1):
        for m in range(l + 1):
            pos = _sh_norm(l, m) * assoc_legendre(l, m, cos_t) * np.exp(1j * m * phi)
            out[..., sh_index(l, m)] = pos
            if m:
                out[..., sh_index(l, -m)] = (-1) ** m * np.conj(pos)
    return out


def real_sh_basis(L: int, points: np.ndarray) -> np.ndarray:
    """Real orthonormal basis with the same column layout as sh_matrix."""
    y = sh_matrix(L, points)
    out = np.empty(y.shape, dtype=np.float64)
    for l in range(L + 1):
        out[..., sh_index(l, 0)] = y[..., sh_index(l, 0)].real
        for m in range(1, l + 1):
            out[..., sh_index(l, m)] = np.sqrt(2.0) * (-1) ** m * y[..., sh_index(l, m)].real
            out[..., sh_index(l, -m)] = np.sqrt(2.0) * (-1) ** m * y[..., sh_index(l, m)].imag
    return out


# --- Spherical designs ---

@dataclass
class SphericalDesign:
    points: np.ndarray
    weights: np.ndarray
    seed: Union[int, None] = None

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        self.weights = np.asarray(self.weights, dtype=np.float64).ravel()
        if self.points.shape[1] != 3 or self.points.shape[0] != self.weights.size:
            raise ParameterError(
                f"Design needs (N,3) points and N weights, got {self.points.shape} and {self.weights.size}"
            )
        norms = np.linalg.norm(self.points, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-12):
            raise ParameterError("Design points must be unit vectors")
        if abs(self.weights.sum() - FOUR_PI) > 1e-9:
            raise ParameterError(f"Design weights must sum to 4π, got {self.weights.sum()}")

    @property
    def count(self) -> int:
        return int(self.points.shape[0])

    def min_angle(self) -> float:
        if self.count < 2:
            return np.pi
        dots = np.clip(self.points @ self.points.T, -1.0, 1.0)
        np.fill_diagonal(dots, -2.0)
        return float(np.arccos(np.clip(dots.max(), -1.0, 1.0)))

    def to_dict(self) -> dict:
        return {"points": self.points.tolist(), "weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "SphericalDesign":
        try:
            return cls(np.array(data["points"]), np.array(data["weights"]))
        except KeyError as e:
            raise FormatError(f"Design JSON is missing {e}")


def save_design(design: SphericalDesign, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(design.to_dict(), fh, indent=4)


def load_design(path: Union[str, Path]) -> SphericalDesign:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise FormatError(f"Cannot read design file {path}: {e}")
    return SphericalDesign.from_dict(data)


def _fibonacci_points(n: int) -> np.ndarray:
    i = np.arange(n)
    z = 1.0 - (2.0 * i + 1.0) / n
    phi = i * np.pi * (3.0 - np.sqrt(5.0))
    r = np.sqrt(1.0 - z * z)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q @ np.diag(np.sign(np.diag(r)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def _coulomb(points: np.ndarray) -> Tuple[float, np.ndarray]:
    diff = points[:, None, :] - points[None, :, :]
    dist = np.linalg.norm(diff, axis=-1)
    np.fill_diagonal(dist, np.inf)
    energy = 0.5 * np.sum(1.0 / dist)
    grad = -np.sum(diff / dist[..., None] ** 3, axis=1)
    return float(energy), grad


def sample_sphere(n_points: int, seed: int = 0, iterations: int = 2000,
                  grad_tol: float = 1e-10) -> SphericalDesign:
    """Electrostatic-repulsion design: projected gradient descent with step halving.

    The Fibonacci lattice is rotated by a seed-dependent random rotation before
    relaxation, so (n_points, seed) fixes the design bit for bit.
    """
    if n_points < 2:
        raise ParameterError(f"sample_sphere needs at least 2 points, got {n_points}")
    rng = np.random.default_rng(seed)
    points = _fibonacci_points(n_points) @ _random_rotation(rng).T
    energy, grad = _coulomb(points)
    step = 0.1 / n_points
    for it in range(iterations):
        tangent = grad - np.sum(grad * points, axis=1, keepdims=True) * points
        gnorm = float(np.linalg.norm(tangent))
        if gnorm < grad_tol:
            log.debug(f"sample_sphere({n_points}): converged after {it} iterations")
            break
        while step > 1e-16:
            trial = points - step * tangent
            trial /= np.linalg.norm(trial, axis=1, keepdims=True)
            trial_energy, trial_grad = _coulomb(trial)
            if trial_energy < energy:
                points, energy, grad = trial, trial_energy, trial_grad
                step *= 1.2
                break
            step *= 0.5
        else:
            break
    points /= np.linalg.norm(points, axis=1, keepdims=True)
    log.debug(f"sample_sphere({n_points}, seed={seed}): energy {energy:.10f}")
    return SphericalDesign(points, np.full(n_points, FOUR_PI / n_points), seed=seed)


def antipodal_design(design: SphericalDesign, tol: float = 1e-3) -> SphericalDesign:
    """{n_i} ∪ {-n_i} over distinct axes; point i + N is the antipode of point i.

    Points that already coincide with another point or its antipode (within
    ``tol`` in the chordal distance) share an axis and are kept once.
    """
    axes = []
    for n in design.points:
        if any(np.linalg.norm(n - a) < tol or np.linalg.norm(n + a) < tol for a in axes):
            continue
        axes.append(n)
    axes = np.asarray(axes)
    merged = design.count - axes.shape[0]
    if merged:
        log.debug(f"Antipodal design: {merged} of {design.count} points already paired by symmetry")
    points = np.concatenate([axes, -axes], axis=0)
    return SphericalDesign(points, np.full(points.shape[0], FOUR_PI / points.shape[0]), seed=design.seed)


# --- Zonal coefficients ---

@dataclass
class ZonalCoeffs:
    """a_l^0 for l = 0..L."""
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        if self.values.size == 0 or not np.all(np.isfinite(self.values)):
            raise ParameterError("Zonal coefficients must be a non-empty finite sequence")

    @property
    def band_limit(self) -> int:
        return int(self.values.size - 1)

    def even_part(self) -> "ZonalCoeffs":
        v = self.values.copy()
        v[1::2] = 0.0
        return ZonalCoeffs(v)

    def odd_part(self) -> "ZonalCoeffs":
        v = self.values.copy()
        v[0::2] = 0.0
        return ZonalCoeffs(v)


def diffusion_kernel_coeffs(s_o: float, tol: float = 1e-3) -> ZonalCoeffs:
    """Heat kernel on S² truncated at the first l with a_l/a_0 < tol."""
    if s_o <= 0:
        raise ParameterError(f"Spherical diffusion time must be positive, got {s_o}")
    if not 0.0 < tol < 1.0:
        raise ParameterError(f"Truncation tolerance must lie in (0, 1), got {tol}")
    values = [np.sqrt(1.0 / FOUR_PI)]
    l = 0
    while True:
        l += 1
        a_l = np.sqrt((2 * l + 1) / FOUR_PI) * np.exp(-l * (l + 1) * s_o)
        values.append(a_l)
        if a_l / values[0] < tol:
            break
    log.debug(f"Heat kernel s_o={s_o}: band limit L={l}")
    return ZonalCoeffs(np.array(values))


def funk_coeffs(c: ZonalCoeffs) -> ZonalCoeffs:
    return ZonalCoeffs(np.array([legendre_at_zero(l) for l in range(c.values.size)]) * c.values)


def antisymmetrize_coeffs(c: ZonalCoeffs) -> ZonalCoeffs:
    return c.odd_part()


def eval_zonal(c: ZonalCoeffs, points: np.ndarray, axis=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Σ c_l Y_l^0 evaluated after aligning the symmetry axis with ``axis``."""
    axis = np.asarray(axis, dtype=np.float64)
    cos_angle = np.asarray(points, dtype=np.float64) @ (axis / np.linalg.norm(axis))
    out = np.zeros(cos_angle.shape)
    for l, c_l in enumerate(c.values):
        if c_l != 0.0:
            out += c_l * np.sqrt((2 * l + 1) / FOUR_PI) * legendre(l, cos_angle)
    return out


# --- Steering ---

@dataclass
class SteeredCoeffs:
    """D^l_{0,m'}(γ, β, 0) for m' = -l..l (index m' + l)."""
    l: int
    values: np.ndarray = field(repr=False)

    def __getitem__(self, m: int) -> complex:
        if abs(m) > self.l:
            raise ParameterError(f"|m'|={abs(m)} exceeds l={self.l}")
        return complex(self.values[m + self.l])


def wigner_d_row(l: int, beta: float, gamma: float) -> SteeredCoeffs:
    """D^l_{0,m'}(γ,β,0) = √((l-m')!/(l+m')!) P_l^{m'}(cos β) e^{-i m' γ}."""
    if l < 0:
        raise ParameterError(f"l must be non-negative, got {l}")
    scale = np.sqrt(FOUR_PI / (2 * l + 1))
    values = np.array([scale * np.conj(eval_sh(l, m, beta, gamma)) for m in range(-l, l + 1)],
                      dtype=np.complex128)
    return SteeredCoeffs(l, values)


def steer_zonal(c: ZonalCoeffs, n: np.ndarray) -> List[np.ndarray]:
    """Per-band coefficient vectors c_l D^l_{0,m'} of the zonal function rotated onto n."""
    beta, gamma = rotation_angles(n)
    return [c_l * wigner_d_row(l, beta, gamma).values for l, c_l in enumerate(c.values)]


def eval_steered(c: ZonalCoeffs, n: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Σ_l Σ_m' c_l D^l_{0,m'} Y_l^{m'} at ``points`` (complex; imaginary part is rounding)."""
    steered = steer_zonal(c, n)
    basis = sh_matrix(c.band_limit, points)
    out = np.zeros(basis.shape[:-1], dtype=np.complex128)
    for l, coeffs in enumerate(steered):
        if c.values[l] == 0.0:
            continue
        out += basis[..., l * l:(l + 1) * (l + 1)] @ coeffs
    return out
