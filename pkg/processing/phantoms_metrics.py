"""Synthetic tube, crossing and plate phantoms, CNR and the vessel-edge locator."""

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import FormatError, NumericError, ParameterError
from .sphere_harmonics import orthonormal_complement
from .volume_core import Volume

log = logging.getLogger(__name__)

CENTERLINE_STEP = 0.1  # voxels between dense centerline samples


@dataclass
class TubePhantomSpec:
    dims: Tuple[int, int, int] = (64, 64, 64)
    radius: Tuple[float, ...] = (3.0,)  # piecewise-linear over normalized arclength
    contrast: float = 1.0
    noise: float = 0.0
    seed: int = 0
    control_points: Optional[np.ndarray] = None
    n_harmonics: int = 2
    wiggle: float = 0.12  # max Fourier amplitude as a fraction of the tube length
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.radius = tuple(float(r) for r in np.atleast_1d(self.radius))
        if len(self.dims) != 3 or any(d < 4 for d in self.dims):
            raise ParameterError(f"Phantom dims must be three integers ≥ 4, got {self.dims}")
        if not self.radius or min(self.radius) <= 0:
            raise ParameterError(f"Tube radius must be positive everywhere, got {self.radius}")
        if self.noise < 0:
            raise ParameterError(f"Noise standard deviation must be non-negative, got {self.noise}")
        if self.control_points is not None:
            self.control_points = np.atleast_2d(np.asarray(self.control_points, dtype=np.float64))
            if self.control_points.shape[0] < 2 or self.control_points.shape[1] != 3:
                raise ParameterError("A centerline needs at least two 3D control points")


@dataclass
class TubeTruth:
    points: np.ndarray  # (M, 3) voxel coordinates
    radius: np.ndarray  # (M,)
    tangent: np.ndarray  # (M, 3)

    @property
    def count(self) -> int:
        return int(self.points.shape[0])


# --- Centerlines ---

def _resample_polyline(control: np.ndarray, step: float = CENTERLINE_STEP) -> np.ndarray:
    seg = np.linalg.norm(np.diff(control, axis=0), axis=1)
    arclength = np.concatenate([[0.0], np.cumsum(seg)])
    s = np.linspace(0.0, arclength[-1], max(2, int(np.ceil(arclength[-1] / step)) + 1))
    return np.stack([np.interp(s, arclength, control[:, k]) for k in range(3)], axis=1)


def _max_curvature(points: np.ndarray) -> float:
    d1 = np.gradient(points, CENTERLINE_STEP, axis=0)
    d2 = np.gradient(d1, CENTERLINE_STEP, axis=0)
    speed = np.linalg.norm(d1, axis=1)
    kappa = np.linalg.norm(np.cross(d1, d2), axis=1) / np.maximum(speed ** 3, 1e-12)
    return float(kappa[2:-2].max()) if kappa.size > 4 else 0.0


def random_centerline(spec: TubePhantomSpec, rng: np.random.Generator) -> np.ndarray:
    """Straight chord through the volume center plus a low-order Fourier wiggle.

    The amplitude is halved until the curvature radius is at least twice the
    largest tube radius.
    """
    dims = np.array(spec.dims, dtype=np.float64)
    center = (dims - 1) / 2.0
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    length = 0.7 * dims.min()
    e1, e2 = orthonormal_complement(direction)
    t = np.linspace(-0.5, 0.5, int(np.ceil(length / CENTERLINE_STEP)) + 1)
    coeffs = rng.uniform(-1.0, 1.0, size=(spec.n_harmonics, 2))
    amplitude = spec.wiggle * length
    min_radius_of_curvature = 2.0 * max(spec.radius)
    for _ in range(30):
        offset = np.zeros((t.size, 3))
        for k in range(spec.n_harmonics):
            wave = np.sin((k + 1) * np.pi * (t + 0.5)) / (k + 1) ** 2
            offset += amplitude * (coeffs[k, 0] * wave[:, None] * e1 + coeffs[k, 1] * wave[:, None] * e2)
        points = center + t[:, None] * length * direction + offset
        kappa = _max_curvature(points)
        if kappa == 0.0 or 1.0 / kappa >= min_radius_of_curvature:
            return points
        amplitude *= 0.5
    return center + t[:, None] * length * direction


def _radius_along(spec: TubePhantomSpec, count: int) -> np.ndarray:
    knots = np.linspace(0.0, 1.0, len(spec.radius))
    return np.interp(np.linspace(0.0, 1.0, count), knots, spec.radius)


def _truth_from_points(spec: TubePhantomSpec, points: np.ndarray) -> TubeTruth:
    tangent = np.gradient(points, axis=0)
    tangent /= np.maximum(np.linalg.norm(tangent, axis=1, keepdims=True), 1e-12)
    return TubeTruth(points, _radius_along(spec, points.shape[0]), tangent)


def _check_inside(points: np.ndarray, dims) -> None:
    upper = np.array(dims, dtype=np.float64) - 1.0
    if np.any(points < 0.0) or np.any(points > upper):
        raise ParameterError("Centerline leaves the volume")


def _voxel_grid(dims) -> np.ndarray:
    return np.stack(np.meshgrid(*[np.arange(n, dtype=np.float64) for n in dims], indexing="ij"), axis=-1).reshape(-1, 3)


def rasterize_tube(truth: TubeTruth, dims, contrast: float) -> np.ndarray:
    """contrast · clip(R + ½ - d, 0, 1) with d the distance to the nearest centerline sample."""
    tree = cKDTree(truth.points)
    voxels = _voxel_grid(dims)
    dist, idx = tree.query(voxels, distance_upper_bound=float(truth.radius.max()) + 1.0)
    out = np.zeros(voxels.shape[0])
    hit = np.isfinite(dist)
    out[hit] = contrast * np.clip(truth.radius[idx[hit]] + 0.5 - dist[hit], 0.0, 1.0)
    return out.reshape(tuple(dims))


def _add_noise(data: np.ndarray, spec: TubePhantomSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.noise > 0:
        data = data + rng.normal(0.0, spec.noise, size=data.shape)
    return data


def make_tube(spec: TubePhantomSpec) -> Tuple[Volume, TubeTruth]:
    rng = np.random.default_rng(spec.seed)
    if spec.control_points is not None:
        points = _resample_polyline(spec.control_points)
    else:
        points = random_centerline(spec, rng)
    _check_inside(points, spec.dims)
    truth = _truth_from_points(spec, points)
    data = _add_noise(rasterize_tube(truth, spec.dims, spec.contrast), spec, rng)
    log.debug(f"Tube phantom: {truth.count} centerline samples, radius {truth.radius.min():.2f}-{truth.radius.max():.2f}")
    return Volume(data, spec.spacing), truth


def straight_tube_points(dims, axis, through=None, margin: float = 0.0) -> np.ndarray:
    """Control points of the chord along ``axis`` through ``through`` clipped to the volume."""
    dims = np.array(dims, dtype=np.float64)
    through = (dims - 1) / 2.0 if through is None else np.asarray(through, dtype=np.float64)
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    upper = dims - 1.0 - margin
    ts = []
    for k in range(3):
        if abs(axis[k]) > 1e-12:
            ts.extend([(margin - through[k]) / axis[k], (upper[k] - through[k]) / axis[k]])
    ts = np.array(ts)
    t_lo, t_hi = ts[ts <= 0].max(), ts[ts >= 0].min()
    return np.stack([through + t_lo * axis, through + t_hi * axis])


def make_crossing(spec: TubePhantomSpec, angle_deg: float = 90.0,
                  axis: Sequence[float] = (1.0, 0.0, 0.0), normal: Sequence[float] = (0.0, 0.0, 1.0)) -> Tuple[Volume, List[TubeTruth]]:
    """Two straight tubes through the center, the second rotated by ``angle_deg`` about ``normal``."""
    rng = np.random.default_rng(spec.seed)
    a1 = np.asarray(axis, dtype=np.float64) / np.linalg.norm(axis)
    nrm = np.asarray(normal, dtype=np.float64) / np.linalg.norm(normal)
    angle = np.deg2rad(angle_deg)
    a2 = a1 * np.cos(angle) + np.cross(nrm, a1) * np.sin(angle) + nrm * np.dot(nrm, a1) * (1 - np.cos(angle))
    data = np.zeros(spec.dims)
    truths = []
    for a in (a1, a2):
        points = _resample_polyline(straight_tube_points(spec.dims, a))
        truth = _truth_from_points(spec, points)
        data = np.maximum(data, rasterize_tube(truth, spec.dims, spec.contrast))
        truths.append(truth)
    return Volume(_add_noise(data, spec, rng), spec.spacing), truths


def make_plate(spec: TubePhantomSpec, normal: Sequence[float] = (0.0, 0.0, 1.0)) -> Volume:
    """A slab of half-thickness R through the center with the same smooth falloff."""
    rng = np.random.default_rng(spec.seed)
    nrm = np.asarray(normal, dtype=np.float64) / np.linalg.norm(normal)
    center = (np.array(spec.dims, dtype=np.float64) - 1) / 2.0
    dist = np.abs((_voxel_grid(spec.dims) - center) @ nrm)
    data = spec.contrast * np.clip(spec.radius[0] + 0.5 - dist, 0.0, 1.0)
    return Volume(_add_noise(data.reshape(spec.dims), spec, rng), spec.spacing)


def write_truth_csv(truth: Union[TubeTruth, List[TubeTruth]], path: Union[str, Path]) -> None:
    truths = truth if isinstance(truth, list) else [truth]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tube", "x", "y", "z", "radius", "tx", "ty", "tz"])
        for k, t in enumerate(truths):
            for p, r, d in zip(t.points, t.radius, t.tangent):
                writer.writerow([k, *(f"{v:.4f}" for v in p), f"{r:.4f}", *(f"{v:.6f}" for v in d)])


# --- Regions and CNR ---

@dataclass
class Sphere:
    center: Tuple[float, float, float]
    radius: float

    def to_dict(self) -> dict:
        return {"c": list(self.center), "r": self.radius}


@dataclass
class RegionSpec:
    structure: List[Sphere] = field(default_factory=list)
    background: List[Sphere] = field(default_factory=list)

    def masks(self, dims) -> Tuple[np.ndarray, np.ndarray]:
        voxels = _voxel_grid(dims)

        def _union(spheres):
            mask = np.zeros(voxels.shape[0], dtype=bool)
            for s in spheres:
                mask |= np.sum((voxels - np.asarray(s.center)) ** 2, axis=1) <= s.radius ** 2
            return mask.reshape(tuple(dims))

        structure, background = _union(self.structure), _union(self.background)
        if not structure.any() or not background.any():
            raise ParameterError("Structure and background regions must both be non-empty")
        if np.any(structure & background):
            raise ParameterError("Structure and background regions overlap")
        return structure, background

    def to_dict(self) -> dict:
        return {"structure": [s.to_dict() for s in self.structure],
                "background": [s.to_dict() for s in self.background]}

    @classmethod
    def from_dict(cls, data: dict) -> "RegionSpec":
        try:
            return cls([Sphere(tuple(s["c"]), float(s["r"])) for s in data["structure"]],
                       [Sphere(tuple(s["c"]), float(s["r"])) for s in data["background"]])
        except (KeyError, TypeError) as e:
            raise FormatError(f"Invalid regions description: {e}")


def write_regions(regions: RegionSpec, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(regions.to_dict(), fh, indent=4)


def read_regions(path: Union[str, Path]) -> RegionSpec:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return RegionSpec.from_dict(json.load(fh))
    except (OSError, json.JSONDecodeError) as e:
        raise FormatError(f"Cannot read regions file {path}: {e}")


def regions_from_truth(truths: Union[TubeTruth, List[TubeTruth]], dims, n_structure: int = 8,
                       background_radius: float = 3.0, clearance: float = 3.0) -> RegionSpec:
    """Structure spheres on the centerline and background spheres away from every tube."""
    truths = truths if isinstance(truths, list) else [truths]
    structure = []
    for t in truths:
        margin = max(1, t.count // 10)
        for i in np.linspace(margin, t.count - 1 - margin, n_structure).astype(int):
            structure.append(Sphere(tuple(t.points[i]), max(0.5, 0.5 * float(t.radius[i]))))
    all_points = np.concatenate([t.points for t in truths])
    all_radius = np.concatenate([t.radius for t in truths])
    tree = cKDTree(all_points)
    dims = np.array(dims, dtype=np.float64)
    step = 2.0 * background_radius + 1.0
    axes = [np.arange(background_radius, n - background_radius, step) for n in dims]
    candidates = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    dist, idx = tree.query(candidates)
    keep = dist > all_radius[idx] + clearance + background_radius
    background = [Sphere(tuple(c), background_radius) for c in candidates[keep]]
    if not background:
        raise ParameterError("No room for background regions away from the tubes")
    return RegionSpec(structure, background)


def cnr(f: Volume, regions: RegionSpec) -> float:
    """(μ_S - μ_B) / σ_B."""
    structure, background = regions.masks(f.dims)
    sigma = float(np.std(f.data[background]))
    if sigma == 0.0:
        raise NumericError("constant background; CNR undefined")
    return float((np.mean(f.data[structure]) - np.mean(f.data[background])) / sigma)


def cnr_ground_truth(f_noisy: Volume, f_clean: Volume) -> float:
    """(max f - min f) / σ(f - f_N)."""
    sigma = float(np.std(f_clean.data - f_noisy.data))
    if sigma == 0.0:
        raise NumericError("noise-free volume; CNR undefined")
    return float((f_clean.data.max() - f_clean.data.min()) / sigma)


# --- Edge location ---

@dataclass
class EdgeEstimate:
    radius: float
    per_direction: np.ndarray  # NaN where the direction was skipped

    @property
    def used(self) -> int:
        return int(np.sum(np.isfinite(self.per_direction)))


def edge_locate(f: Volume, center, axis, sigma_d: float = 1.0, n_directions: int = 16,
                max_radius: Optional[float] = None, step: float = 0.25, floor: float = 1e-9) -> EdgeEstimate:
    """Median over in-plane rays of the first-order Gaussian-derivative minimum."""
    center = np.asarray(center, dtype=np.float64)
    upper = np.array(f.dims, dtype=np.float64) - 1.0
    if np.any(center < 0.0) or np.any(center > upper):
        raise ParameterError(f"Edge center {center.tolist()} lies outside the volume")
    e1, e2 = orthonormal_complement(np.asarray(axis, dtype=np.float64))
    max_radius = max_radius if max_radius is not None else 0.45 * min(f.dims)
    r = np.arange(0.0, max_radius + step / 2, step)
    estimates = np.full(n_directions, np.nan)
    for k in range(n_directions):
        phi = 2.0 * np.pi * k / n_directions
        d = np.cos(phi) * e1 + np.sin(phi) * e2
        coords = center[:, None] + d[:, None] * r[None, :]
        if np.any(coords < 0.0) or np.any(coords > upper[:, None]):
            log.debug(f"Edge ray {k} leaves the volume; skipped")
            continue
        profile = ndimage.map_coordinates(f.data, coords, order=1)
        derivative = ndimage.gaussian_filter1d(profile, sigma_d / step, order=1, mode="nearest")
        j = int(np.argmin(derivative))
        if derivative[j] >= -floor:
            continue
        estimates[k] = r[j]
    if not np.any(np.isfinite(estimates)):
        raise NumericError("No edge found along any radial profile")
    return EdgeEstimate(float(np.nanmedian(estimates)), estimates)
