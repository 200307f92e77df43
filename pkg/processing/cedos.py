"""Coherence-enhancing diffusion on orientation scores.

Diffusion acts on ``W = Re U``. The spatial part per orientation channel is
``D₁₁(B₁² + B₂²) + D₃₃B₃²`` along a locally fitted frame, discretized with
trilinear stencils at ``x ± h·B_k`` and symmetrized so that the scheme is
mass conserving and, under the step bound, monotone. The angular part
``D₄₄(B₄² + B₅² + B₆²)`` is one calibrated graph Laplacian on the design.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy import linalg, ndimage
from scipy.spatial import ConvexHull

from . import sphere_harmonics as sh
from .errors import ParameterError, StabilityError
from .score_transform import OrientationScore, forward, reconstruct_sum
from .volume_core import Volume
from .wavelet_dft import WaveletBank

log = logging.getLogger(__name__)

MIN_DESIGN_POINTS = 7
MIN_SEPARATION = 1e-4  # radians


@dataclass
class DiffusionConfig:
    d44: float = 0.01
    end_time: float = 4.0
    dt: float = 0.05
    quantile: float = 0.5
    sigma_s: float = 1.0
    d11_floor: float = 0.001
    step_h: float = 1.0
    stencil_cache_mb: float = 1024.0

    def __post_init__(self):
        if self.dt <= 0:
            raise ParameterError(f"Time step must be positive, got {self.dt}")
        if self.end_time < 0 or (0 < self.end_time < self.dt):
            raise ParameterError(f"End time must be 0 or at least one step, got T={self.end_time}, dt={self.dt}")
        if self.d44 < 0:
            raise ParameterError(f"Angular diffusivity must be non-negative, got {self.d44}")
        if not 0.0 < self.quantile < 1.0:
            raise ParameterError(f"Quantile must lie in (0, 1), got {self.quantile}")
        if self.sigma_s < 0 or self.step_h <= 0:
            raise ParameterError("sigma_s must be ≥ 0 and step_h > 0")
        if not 0.0 <= self.d11_floor <= 1.0:
            raise ParameterError(f"D11 floor must lie in [0, 1], got {self.d11_floor}")


# --- Angular Laplacian ---

@dataclass
class AngularLaplacian:
    matrix: np.ndarray  # (N_o, N_o), rows sum to zero
    kappa: float
    lambda_max: float

    def apply(self, w: np.ndarray) -> np.ndarray:
        return np.tensordot(self.matrix, w, axes=(1, 0))


def _cotangent_weights(points: np.ndarray) -> np.ndarray:
    n = points.shape[0]
    weights = np.zeros((n, n))
    for tri in ConvexHull(points).simplices:
        for k in range(3):
            a, b, c = tri[k], tri[(k + 1) % 3], tri[(k + 2) % 3]
            u, v = points[a] - points[c], points[b] - points[c]
            cot = np.dot(u, v) / np.linalg.norm(np.cross(u, v))
            weights[a, b] += 0.5 * cot
            weights[b, a] += 0.5 * cot
    return np.clip(weights, 0.0, None)


def angular_laplacian(design: sh.SphericalDesign) -> AngularLaplacian:
    """Cotangent graph Laplacian on the design's spherical Delaunay triangulation.

    Scaled by the least-squares κ that best maps real Y_l (l = 1, 2) to
    -l(l+1)·Y_l.
    """
    if design.count < MIN_DESIGN_POINTS:
        raise ParameterError(f"Angular Laplacian needs at least {MIN_DESIGN_POINTS} orientations, got {design.count}")
    if design.min_angle() < MIN_SEPARATION:
        raise ParameterError(f"Design has coincident orientations (min angle {design.min_angle():.2e} rad)")
    w = _cotangent_weights(design.points)
    raw = (w - np.diag(w.sum(axis=1))) / design.weights[:, None]
    basis = sh.real_sh_basis(2, design.points)[:, 1:]
    eigen = np.array([2.0] * 3 + [6.0] * 5)
    lb = raw @ basis
    kappa = float(-np.sum(eigen * np.sum(lb * basis, axis=0)) / np.sum(lb ** 2))
    matrix = kappa * raw
    # symmetric similarity transform D^{1/2} L D^{-1/2} shares the spectrum
    root = np.sqrt(design.weights)
    sym = root[:, None] * matrix / root[None, :]
    lambda_max = float(np.max(np.abs(linalg.eigvalsh(0.5 * (sym + sym.T)))))
    log.debug(f"Angular Laplacian: κ={kappa:.4g}, λ_max={lambda_max:.4g}")
    return AngularLaplacian(matrix, kappa, lambda_max)


# --- Spatial derivatives ---

def _voxel_coords(dims) -> np.ndarray:
    return np.stack(np.meshgrid(*[np.arange(n, dtype=np.float64) for n in dims], indexing="ij"), axis=-1)


def _sample(w: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Trilinear periodic samples at voxel coordinates ``coords`` (..., 3)."""
    flat = coords.reshape(-1, 3).T
    return ndimage.map_coordinates(w, flat, order=1, mode="grid-wrap").reshape(coords.shape[:-1])


def directional_first(ws: np.ndarray, b: np.ndarray, h: float = 1.0) -> np.ndarray:
    base = _voxel_coords(ws.shape)
    b = np.broadcast_to(b, base.shape)
    return (_sample(ws, base + h * b) - _sample(ws, base - h * b)) / (2.0 * h)


def directional_second(ws: np.ndarray, b: np.ndarray, h: float = 1.0) -> np.ndarray:
    base = _voxel_coords(ws.shape)
    b = np.broadcast_to(b, base.shape)
    return (_sample(ws, base + h * b) + _sample(ws, base - h * b) - 2.0 * ws) / h ** 2


def frame_from_b3(b3: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """B₁ by Gram-Schmidt of the canonical axis least aligned with B₃; B₂ = B₃ × B₁."""
    b3 = np.asarray(b3, dtype=np.float64)
    axis = np.argmin(np.abs(b3), axis=-1)
    a = np.zeros_like(b3)
    np.put_along_axis(a, axis[..., None], 1.0, axis=-1)
    b1 = a - np.sum(a * b3, axis=-1, keepdims=True) * b3
    b1 /= np.linalg.norm(b1, axis=-1, keepdims=True)
    return b1, np.cross(b3, b1)


def _smooth(w: np.ndarray, sigma: float) -> np.ndarray:
    return ndimage.gaussian_filter(w, sigma, mode="wrap") if sigma > 0 else w


@dataclass
class DerivativeFields:
    smoothed: np.ndarray  # (N_o, X, Y, Z)
    first: np.ndarray  # (N_o, 3, X, Y, Z) along e₁(n_i), e₂(n_i), n_i
    angular: np.ndarray  # (N_o, X, Y, Z) angular Laplacian of the smoothed field


def derivatives(w: np.ndarray, design: sh.SphericalDesign, sigma_s: float = 1.0, h: float = 1.0,
                laplacian: Optional[AngularLaplacian] = None) -> DerivativeFields:
    laplacian = laplacian or angular_laplacian(design)
    smoothed = np.stack([_smooth(ch, sigma_s) for ch in w])
    first = np.empty((w.shape[0], 3) + w.shape[1:])
    for i, n in enumerate(design.points):
        e1, e2 = sh.orthonormal_complement(n)
        for k, b in enumerate((e1, e2, n)):
            first[i, k] = directional_first(smoothed[i], b, h)
    return DerivativeFields(smoothed, first, laplacian.apply(smoothed))


# --- Frame fitting and conductivities ---

@dataclass
class AdaptiveFrame:
    b3: np.ndarray  # (N_o, X, Y, Z, 3)
    confidence: np.ndarray  # s(Ũ), (N_o, X, Y, Z)
    b3_derivative: np.ndarray  # B₃Ũ, (N_o, X, Y, Z)


def _structure_tensor(ws: np.ndarray, sigma: float) -> np.ndarray:
    grad = [(np.roll(ws, -1, axis=a) - np.roll(ws, 1, axis=a)) / 2.0 for a in range(3)]
    tensor = np.empty(ws.shape + (3, 3))
    for a in range(3):
        for b in range(a, 3):
            tensor[..., a, b] = tensor[..., b, a] = _smooth(grad[a] * grad[b], sigma)
    return tensor


def fit_frame(w: np.ndarray, fields: DerivativeFields, design: sh.SphericalDesign,
              sigma_s: float = 1.0, h: float = 1.0) -> AdaptiveFrame:
    """B₃ from the smallest-eigenvalue eigenvector of the structure matrix, sign-aligned with n_i."""
    n_o = w.shape[0]
    tensors = [_structure_tensor(fields.smoothed[i], sigma_s) for i in range(n_o)]
    scale = max(float(np.max(np.trace(t, axis1=-2, axis2=-1))) for t in tensors)
    b3 = np.empty(w.shape + (3,))
    confidence = np.empty(w.shape)
    b3_derivative = np.empty(w.shape)
    degenerate = 0
    for i, n in enumerate(design.points):
        _, vecs = np.linalg.eigh(tensors[i])
        vec = vecs[..., :, 0]
        vec = np.where((vec @ n)[..., None] < 0, -vec, vec)
        flat = np.trace(tensors[i], axis1=-2, axis2=-1) <= 1e-10 * scale
        vec[flat] = n
        degenerate += int(flat.sum())
        b3[i] = vec
        b1, b2 = frame_from_b3(vec)
        ws = fields.smoothed[i]
        cross = directional_second(ws, b1, h) + directional_second(ws, b2, h)
        confidence[i] = -cross - fields.angular[i]
        b3_derivative[i] = directional_first(ws, vec, h)
    if degenerate:
        log.debug(f"Frame fit: {degenerate} degenerate voxel-orientations fell back to n_i")
    return AdaptiveFrame(b3, confidence, b3_derivative)


@dataclass
class Conductivities:
    d11: np.ndarray
    d33: np.ndarray
    c1: float
    c2: float


def _conductivity(c: float, value: np.ndarray) -> np.ndarray:
    """1 - exp(-(c/v)²) with v = 0 taken as the isotropic limit 1."""
    value = np.abs(value)
    out = np.ones(value.shape)
    nz = value > 0
    out[nz] = 1.0 - np.exp(-(c / value[nz]) ** 2)
    return out


def conductivities(frame: AdaptiveFrame, quantile: float = 0.5, d11_floor: float = 0.001) -> Conductivities:
    """c₁ is the q-quantile of the signed confidence s, c₂ that of |B₃Ũ|."""
    c1 = float(np.quantile(frame.confidence, quantile))
    c2 = float(np.quantile(np.abs(frame.b3_derivative), quantile))
    d11 = np.maximum(_conductivity(c1, frame.confidence), d11_floor)
    d33 = _conductivity(c2, frame.b3_derivative)
    return Conductivities(d11, d33, c1, c2)


# --- Spatial operator ---

class ChannelStencil:
    """Symmetrized trilinear stencil ½[A + (PᵀD - diag(colsum))] for one channel.

    A·W = D/h² (P·W - rowsum(P)·W), where P gathers the trilinear samples at
    x ± h·B_k. Rows and columns of the result sum to zero.
    """

    def __init__(self, b3: np.ndarray, d11: np.ndarray, d33: np.ndarray, h: float = 1.0):
        dims = b3.shape[:3]
        self.size = int(np.prod(dims))
        self.h2 = h * h
        b1, b2 = frame_from_b3(b3)
        base = _voxel_coords(dims).reshape(-1, 3)
        self.terms = []
        self.degree = np.zeros(self.size)
        for b, d in ((b1, d11), (b2, d11), (b3, d33)):
            b = b.reshape(-1, 3)
            d = d.ravel()
            idx, w = zip(*(self._trilinear(base + s * h * b, dims) for s in (1.0, -1.0)))
            idx, w = np.concatenate(idx, axis=1), np.concatenate(w, axis=1)
            rowsum = w.sum(axis=1)
            colsum = np.bincount(idx.ravel(), (w * d[:, None]).ravel(), minlength=self.size) / self.h2
            self.terms.append((idx, w, d, rowsum, colsum))
            self.degree += 0.5 * (rowsum * d / self.h2 + colsum)

    @staticmethod
    def _trilinear(points: np.ndarray, dims) -> Tuple[np.ndarray, np.ndarray]:
        floor = np.floor(points)
        frac = points - floor
        floor = floor.astype(np.int64)
        idx = np.empty((points.shape[0], 8), dtype=np.int64)
        w = np.empty((points.shape[0], 8))
        for c, (cx, cy, cz) in enumerate(np.ndindex(2, 2, 2)):
            ix = (floor[:, 0] + cx) % dims[0]
            iy = (floor[:, 1] + cy) % dims[1]
            iz = (floor[:, 2] + cz) % dims[2]
            idx[:, c] = (ix * dims[1] + iy) * dims[2] + iz
            w[:, c] = ((frac[:, 0] if cx else 1 - frac[:, 0])
                       * (frac[:, 1] if cy else 1 - frac[:, 1])
                       * (frac[:, 2] if cz else 1 - frac[:, 2]))
        return idx, w

    @property
    def nbytes(self) -> int:
        return sum(idx.nbytes + w.nbytes for idx, w, *_ in self.terms)

    def apply(self, w: np.ndarray) -> np.ndarray:
        flat = w.ravel()
        out = np.zeros(self.size)
        for idx, weights, d, rowsum, colsum in self.terms:
            gathered = np.sum(weights * flat[idx], axis=1)
            a = d / self.h2 * (gathered - rowsum * flat)
            scattered = np.bincount(idx.ravel(), (weights * (d * flat)[:, None]).ravel(), minlength=self.size) / self.h2
            out += 0.5 * (a + scattered - colsum * flat)
        return out.reshape(w.shape)


def stable_step(degree: float, d44: float, laplacian: Optional[AngularLaplacian]) -> float:
    """Largest Euler step keeping I + Δt·L entrywise non-negative.

    ``degree`` is the largest spatial stencil degree over voxels and channels.
    """
    angular = d44 * laplacian.lambda_max if laplacian is not None else 0.0
    total = degree + angular
    return float("inf") if total == 0 else 1.0 / total


@dataclass
class DiffusionReport:
    c1: float = 0.0
    c2: float = 0.0
    dt: float = 0.0
    dt_bound: float = 0.0
    steps: int = 0
    kappa: float = 0.0
    lambda_max: float = 0.0
    mass: List[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _mass(w: np.ndarray, weights: np.ndarray) -> float:
    return float(np.sum(weights * w.reshape(w.shape[0], -1).sum(axis=1)))


def diffuse_with_fields(w: np.ndarray, design: sh.SphericalDesign, b3: np.ndarray, d11: np.ndarray, d33: np.ndarray,
                        d44: float, dt: float, end_time: float, h: float = 1.0,
                        laplacian: Optional[AngularLaplacian] = None, cache_mb: float = 1024.0,
                        report: Optional[DiffusionReport] = None) -> np.ndarray:
    """Explicit Euler for ∂W/∂t = Σ_i spatial_i W_i + D₄₄ Δ_S W with frozen fields."""
    report = report if report is not None else DiffusionReport()
    n_o = w.shape[0]
    if d44 > 0 and laplacian is None:
        laplacian = angular_laplacian(design)
    stencils = []
    degree = 0.0
    for i in range(n_o):
        stencil = ChannelStencil(b3[i], d11[i], d33[i], h)
        degree = max(degree, float(stencil.degree.max()))
        if i == 0 and stencil.nbytes * n_o > cache_mb * 2 ** 20:
            log.info(f"Stencils exceed {cache_mb} MB; rebuilding per step")
            stencils = None
        if stencils is not None:
            stencils.append(stencil)
    bound = stable_step(degree, d44, laplacian)
    if dt > bound:
        raise StabilityError(f"Time step {dt} exceeds the stability bound {bound:.6g}")
    steps = int(np.ceil(end_time / dt - 1e-9)) if end_time > 0 else 0
    step = end_time / steps if steps else 0.0
    report.dt, report.dt_bound, report.steps = step, bound, steps
    if laplacian is not None:
        report.kappa, report.lambda_max = laplacian.kappa, laplacian.lambda_max
    report.mass = [_mass(w, design.weights)]
    current = np.array(w, dtype=np.float64)
    for k in range(steps):
        angular = laplacian.apply(current) if d44 > 0 else None
        nxt = np.empty_like(current)
        for i in range(n_o):
            stencil = stencils[i] if stencils is not None else ChannelStencil(b3[i], d11[i], d33[i], h)
            rate = stencil.apply(current[i])
            if angular is not None:
                rate += d44 * angular[i]
            nxt[i] = current[i] + step * rate
        current = nxt
        report.mass.append(_mass(current, design.weights))
        log.debug(f"Diffusion step {k + 1}/{steps}: mass {report.mass[-1]:.9g}")
    return current


def diffuse(score: OrientationScore, config: DiffusionConfig,
            laplacian: Optional[AngularLaplacian] = None) -> Tuple[OrientationScore, DiffusionReport]:
    w = score.data.real.copy()
    laplacian = laplacian or angular_laplacian(score.design)
    fields = derivatives(w, score.design, config.sigma_s, config.step_h, laplacian)
    frame = fit_frame(w, fields, score.design, config.sigma_s, config.step_h)
    cond = conductivities(frame, config.quantile, config.d11_floor)
    log.info(f"CEDOS: c1={cond.c1:.4g}, c2={cond.c2:.4g}, T={config.end_time}, dt={config.dt}, D44={config.d44}")
    report = DiffusionReport(c1=cond.c1, c2=cond.c2)
    out = diffuse_with_fields(w, score.design, frame.b3, cond.d11, cond.d33, config.d44, config.dt,
                              config.end_time, config.step_h, laplacian, config.stencil_cache_mb, report)
    diffused = OrientationScore(out.astype(np.complex128), score.design, score.low_channel, score.bank_hash,
                                score.s_rho, score.spectral_split)
    return diffused, report


def gaussian_diffusion(f: Volume, end_time: float) -> Volume:
    """Isotropic heat flow to time T, i.e. a Gaussian blur with σ² = 2T."""
    if end_time < 0:
        raise ParameterError(f"End time must be non-negative, got {end_time}")
    if end_time == 0:
        return f.copy()
    return Volume(ndimage.gaussian_filter(f.data, np.sqrt(2.0 * end_time), mode="nearest"), f.spacing)


def process_image(f: Volume, bank: WaveletBank, config: DiffusionConfig,
                  workers: int = 1) -> Tuple[Volume, DiffusionReport]:
    """forward, diffuse, then the fast reconstruction."""
    if not bank.spectral_split:
        raise ParameterError("CEDOS with the fast reconstruction needs a bank with the low/high split")
    score = forward(f, bank, workers)
    diffused, report = diffuse(score, config)
    return reconstruct_sum(diffused), report
