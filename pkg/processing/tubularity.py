"""Tubularity from opposite edge responses in the orientation score.

For a candidate axis n and radius r, the product of half-rectified edge
responses at x ± r·n⊥(θ) is smoothed over θ and r and minimized over θ.
Edge responses are the imaginary part of the score, steered to arbitrary
orientations through its SH expansion.
"""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Tuple, Union

import numpy as np
from scipy import ndimage

from . import sphere_harmonics as sh
from .errors import ParameterError
from .score_transform import OrientationScore, ShScoreExpansion, steer_eval, synthesize

log = logging.getLogger(__name__)

BLOCK_SIZE = 32768
REDUCTIONS = ("min", "mean")


@dataclass
class TubularityConfig:
    sigma_o: float = np.pi / 8
    sigma_r: float = 0.3
    theta_samples: int = 8
    r_min: float = 1.0
    r_max: float = 10.0
    r_step: float = 0.5
    reduce: str = "min"
    edge_floor: float = 1e-6
    band_limit: int = 5

    def __post_init__(self):
        if self.sigma_o <= 0 or self.sigma_r <= 0:
            raise ParameterError(f"Kernel widths must be positive, got σ_o={self.sigma_o}, σ_r={self.sigma_r}")
        if self.theta_samples < 1:
            raise ParameterError(f"Need at least one θ sample, got {self.theta_samples}")
        if self.r_min <= 0 or self.r_step <= 0:
            raise ParameterError(f"Radius grid needs r_min > 0 and step > 0, got {self.r_min}, {self.r_step}")
        if self.reduce not in REDUCTIONS:
            raise ParameterError(f"Unknown reduction '{self.reduce}', expected one of {REDUCTIONS}")
        if self.r_max < self.r_min:
            raise ParameterError(f"Empty radius grid [{self.r_min}, {self.r_max}]")

    @property
    def radii(self) -> np.ndarray:
        radii = np.arange(self.r_min, self.r_max + 0.5 * self.r_step, self.r_step)
        if radii.size == 0:
            raise ParameterError(f"Empty radius grid [{self.r_min}, {self.r_max}]")
        return radii

    @property
    def thetas(self) -> np.ndarray:
        return np.arange(self.theta_samples) * np.pi / self.theta_samples


# --- Kernels ---

def angular_kernel(n_theta: int, sigma_o: float) -> np.ndarray:
    """Wrapped Gaussian on θ ∈ [0, π) truncated at 3σ, quadrature weight included."""
    theta = np.arange(n_theta) * np.pi / n_theta
    delta = theta[:, None] - theta[None, :]
    reach = 3.0 * sigma_o
    wraps = int(np.ceil(reach / np.pi)) + 1
    kernel = np.zeros((n_theta, n_theta))
    for k in range(-wraps, wraps + 1):
        d = delta + k * np.pi
        kernel += np.where(np.abs(d) <= reach, np.exp(-d ** 2 / (2 * sigma_o ** 2)), 0.0)
    return kernel * (np.pi / n_theta) / (np.sqrt(2 * np.pi) * sigma_o)


def trapezoid_weights(radii: np.ndarray) -> np.ndarray:
    if radii.size == 1:
        return np.ones(1)
    w = np.empty(radii.size)
    w[1:-1] = 0.5 * (radii[2:] - radii[:-2])
    w[0] = 0.5 * (radii[1] - radii[0])
    w[-1] = 0.5 * (radii[-1] - radii[-2])
    return w


def radial_kernel(radii: np.ndarray, sigma_r: float) -> np.ndarray:
    """K(r, r') = exp(-log²(r/r')/2σ² - σ²/2) / (√(2π)σr'), times trapezoid weights in r'."""
    r, rp = radii[:, None], radii[None, :]
    k = np.exp(-np.log(r / rp) ** 2 / (2 * sigma_r ** 2) - sigma_r ** 2 / 2) / (np.sqrt(2 * np.pi) * sigma_r * rp)
    return k * trapezoid_weights(radii)[None, :]


def regularize(eprod: np.ndarray, k_or: np.ndarray, k_rad: np.ndarray, reduce: str = "min") -> np.ndarray:
    """(n_θ, n_r, M) edge products to (n_r, M) after both convolutions and the θ reduction."""
    smoothed = np.einsum("rb,tbm->trm", k_rad, np.tensordot(k_or, eprod, axes=(1, 0)))
    return smoothed.min(axis=0) if reduce == "min" else smoothed.mean(axis=0)


# --- Edge products ---

def perpendicular(n: np.ndarray, theta) -> np.ndarray:
    e1, e2 = sh.orthonormal_complement(np.asarray(n, dtype=np.float64))
    theta = np.asarray(theta, dtype=np.float64)
    return np.cos(theta)[..., None] * e1 + np.sin(theta)[..., None] * e2


def _inside(points: np.ndarray, dims) -> np.ndarray:
    upper = np.asarray(dims, dtype=np.float64) - 1.0
    return np.all((points >= 0.0) & (points <= upper), axis=-1)


def eprod(exp: ShScoreExpansion, x, n, r: float, theta: float) -> float:
    """Im⁺U(x + r·n⊥, n⊥) · Im⁺U(x - r·n⊥, -n⊥), zero when a sample leaves the volume."""
    x = np.asarray(x, dtype=np.float64)
    n_perp = perpendicular(n, theta)
    outer, inner = x + r * n_perp, x - r * n_perp
    if not (_inside(outer, exp.dims) and _inside(inner, exp.dims)):
        log.debug(f"Edge sample for x={x.tolist()}, r={r} leaves the volume")
        return 0.0
    a = max(0.0, steer_eval(exp, outer, n_perp).imag)
    b = max(0.0, steer_eval(exp, inner, -n_perp).imag)
    return a * b


def _edge_volumes(exp: ShScoreExpansion, n: np.ndarray, thetas: np.ndarray) -> List[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
    edges = []
    for n_perp in perpendicular(n, thetas):
        edges.append((n_perp, synthesize(exp, n_perp).imag, synthesize(exp, -n_perp).imag))
    return edges


def _eprod_block(edges, points: np.ndarray, radii: np.ndarray, dims) -> Tuple[np.ndarray, int]:
    out = np.zeros((len(edges), radii.size, points.shape[0]))
    outside = 0
    for t, (n_perp, plus, minus) in enumerate(edges):
        for j, r in enumerate(radii):
            pa, pb = points + r * n_perp, points - r * n_perp
            valid = _inside(pa, dims) & _inside(pb, dims)
            outside += int(valid.size - valid.sum())
            a = ndimage.map_coordinates(plus, pa.T, order=1, mode="constant", cval=0.0)
            b = ndimage.map_coordinates(minus, pb.T, order=1, mode="constant", cval=0.0)
            out[t, j] = np.where(valid, np.maximum(a, 0.0) * np.maximum(b, 0.0), 0.0)
    return out, outside


def _check_isotropic(exp: ShScoreExpansion) -> None:
    if not np.allclose(exp.spacing, exp.spacing[0], rtol=1e-9):
        raise ParameterError(f"Tubularity radii are in voxels and need isotropic spacing, got {exp.spacing}")


def _scan(exp: ShScoreExpansion, config: TubularityConfig, directions: np.ndarray, points: np.ndarray,
          visit: Callable[[int, slice, np.ndarray], None]) -> None:
    _check_isotropic(exp)
    radii = config.radii
    k_or = angular_kernel(config.theta_samples, config.sigma_o)
    k_rad = radial_kernel(radii, config.sigma_r)
    points = np.asarray(points, dtype=np.float64)
    outside = 0
    for i, n in enumerate(directions):
        edges = _edge_volumes(exp, n, config.thetas)
        for start in range(0, points.shape[0], BLOCK_SIZE):
            block = slice(start, min(start + BLOCK_SIZE, points.shape[0]))
            e, missed = _eprod_block(edges, points[block], radii, exp.dims)
            outside += missed
            visit(i, block, regularize(e, k_or, k_rad, config.reduce))
        log.debug(f"Tubularity: orientation {i + 1}/{len(directions)} done")
    if outside:
        log.warning(f"Tubularity: {outside} edge samples fell outside the volume and were set to 0")


# --- Fields ---

@dataclass
class VField:
    values: np.ndarray  # (N_o, n_r, M)
    points: np.ndarray  # (M, 3) voxel indices
    dims: Tuple[int, int, int]
    radii: np.ndarray
    directions: np.ndarray  # (N_o, 3)


@dataclass
class TubularityField:
    points: np.ndarray  # (M, 3)
    dims: Tuple[int, int, int]
    confidence: np.ndarray  # s^t
    direction: np.ndarray  # n*, (M, 3)
    radius: np.ndarray  # r*, voxels

    def _scatter(self, values: np.ndarray) -> np.ndarray:
        out = np.zeros(tuple(self.dims) + values.shape[1:])
        idx = tuple(self.points.T.astype(int))
        out[idx] = values
        return out

    def confidence_volume(self) -> np.ndarray:
        return self._scatter(self.confidence)

    def radius_volume(self) -> np.ndarray:
        return self._scatter(self.radius)

    def direction_volume(self) -> np.ndarray:
        return self._scatter(self.direction)


class _FeatureAccumulator:
    """Running max over orientations; ties keep the lowest orientation index and the smallest radius."""

    def __init__(self, count: int, n_radii: int):
        self.best = np.zeros(count)
        self.best_index = np.zeros(count, dtype=int)
        self.per_radius = np.zeros((n_radii, count))

    def add(self, index: int, block: slice, v: np.ndarray) -> None:
        top = v.max(axis=0)
        current = self.best[block]
        better = top > current
        current[better] = top[better]
        self.best_index[block][better] = index
        np.maximum(self.per_radius[:, block], v, out=self.per_radius[:, block])

    def field(self, points: np.ndarray, dims, radii: np.ndarray, directions: np.ndarray) -> TubularityField:
        r_index = np.argmax(self.per_radius, axis=0)
        return TubularityField(np.asarray(points), tuple(dims), self.best.copy(),
                               directions[self.best_index], radii[r_index])


def _grid_points(dims, mask: Optional[np.ndarray]) -> np.ndarray:
    if mask is None:
        mask = np.ones(dims, dtype=bool)
    return np.argwhere(mask)


def _directions(directions) -> np.ndarray:
    directions = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    return directions / np.linalg.norm(directions, axis=1, keepdims=True)


def tubularity_at(exp: ShScoreExpansion, config: TubularityConfig, directions, points) -> VField:
    directions = _directions(directions)
    points = np.atleast_2d(np.asarray(points))
    values = np.zeros((directions.shape[0], config.radii.size, points.shape[0]))

    def _store(i, block, v):
        values[i, :, block] = v

    _scan(exp, config, directions, points, _store)
    return VField(values, points, exp.dims, config.radii, directions)


def tubularity(exp: ShScoreExpansion, config: TubularityConfig, directions,
               mask: Optional[np.ndarray] = None) -> VField:
    """V for every (voxel, orientation, radius), restricted to ``mask`` when given."""
    return tubularity_at(exp, config, directions, _grid_points(exp.dims, mask))


def features(vfield: VField) -> TubularityField:
    acc = _FeatureAccumulator(vfield.points.shape[0], vfield.radii.size)
    everything = slice(None)
    for i in range(vfield.values.shape[0]):
        acc.add(i, everything, vfield.values[i])
    return acc.field(vfield.points, vfield.dims, vfield.radii, vfield.directions)


def tubularity_features(exp: ShScoreExpansion, config: TubularityConfig, directions,
                        mask: Optional[np.ndarray] = None) -> TubularityField:
    """features(tubularity(...)) without retaining V."""
    directions = _directions(directions)
    points = _grid_points(exp.dims, mask)
    acc = _FeatureAccumulator(points.shape[0], config.radii.size)
    _scan(exp, config, directions, points, acc.add)
    return acc.field(points, exp.dims, config.radii, directions)


def edge_mask(score: OrientationScore, r_max: float, floor: float = 1e-6) -> np.ndarray:
    """Voxels within r_max of a voxel whose max channel |Im U| exceeds ``floor``."""
    energy = np.max(np.abs(score.data.imag), axis=0)
    edges = energy > floor
    if not edges.any():
        return edges
    return ndimage.distance_transform_edt(~edges) <= r_max


# --- Segmentation ---

@dataclass
class Segmentation:
    distance: np.ndarray
    mask: np.ndarray
    centers: np.ndarray  # (C, 3)
    radii: np.ndarray


def _top_centers(tf: TubularityField, quantile: float) -> np.ndarray:
    if not 0.0 < quantile < 1.0:
        raise ParameterError(f"Quantile must lie in (0, 1), got {quantile}")
    positive = tf.confidence > 0
    if not positive.any():
        return np.zeros(0, dtype=int)
    threshold = np.quantile(tf.confidence[positive], 1.0 - quantile)
    selected = np.flatnonzero(positive & (tf.confidence >= threshold))
    return selected[np.argsort(-tf.confidence[selected], kind="stable")]


def segment(tf: TubularityField, quantile: float = 0.01) -> Segmentation:
    """Zero sublevel set of d(x) = min_c ‖x - c‖ - r*(c) over the top-quantile centers."""
    selected = _top_centers(tf, quantile)
    dims = tuple(tf.dims)
    if selected.size == 0:
        log.warning("Segmentation: no centers above the quantile; mask is empty")
        return Segmentation(np.full(dims, np.inf), np.zeros(dims, dtype=bool), np.zeros((0, 3)), np.zeros(0))
    centers = tf.points[selected].astype(np.float64)
    radii = tf.radius[selected]
    grid = np.argwhere(np.ones(dims, dtype=bool)).astype(np.float64)
    distance = np.empty(grid.shape[0])
    chunk = max(1, 2 ** 22 // max(1, centers.shape[0]))
    for start in range(0, grid.shape[0], chunk):
        part = grid[start:start + chunk]
        d = np.linalg.norm(part[:, None, :] - centers[None, :, :], axis=-1) - radii[None, :]
        distance[start:start + chunk] = d.min(axis=1)
    distance = distance.reshape(dims)
    mask = distance <= 0
    log.info(f"Segmentation: {centers.shape[0]} centers, {int(mask.sum())} voxels in mask")
    return Segmentation(distance, mask, centers, radii)


def write_centerline_csv(tf: TubularityField, path: Union[str, Path], quantile: float = 0.01) -> int:
    """Top-quantile centers ordered by confidence; returns the row count."""
    selected = _top_centers(tf, quantile)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "z", "confidence", "nx", "ny", "nz", "radius"])
        for k in selected:
            writer.writerow([*tf.points[k].tolist(), f"{tf.confidence[k]:.9g}",
                             *[f"{v:.6f}" for v in tf.direction[k]], f"{tf.radius[k]:.4f}"])
    return int(selected.size)
