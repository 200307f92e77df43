"""Filter comparison, round-trip error and CNR sweep runs behind the CLI tables."""

import dataclasses
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import cedos
from .errors import ParameterError
from .phantoms_metrics import RegionSpec, cnr
from .score_transform import band_limit, forward, reconstruct_exact, reconstruct_sum
from .volume_core import Volume
from .wavelet_dft import WaveletBank, high_pass_filters

log = logging.getLogger(__name__)

SWEEP_METHODS = ("cedos", "gauss")


# --- Filter comparison ---

def compare_filters(bank_a: WaveletBank, bank_b: WaveletBank) -> List[dict]:
    """Per-orientation agreement of the high-pass filters of two banks."""
    if bank_a.filter_dims != bank_b.filter_dims or bank_a.count != bank_b.count:
        raise ParameterError(
            f"Banks differ in shape: {bank_a.count}x{bank_a.filter_dims} vs {bank_b.count}x{bank_b.filter_dims}"
        )
    if not np.allclose(bank_a.design.points, bank_b.design.points, atol=1e-9):
        log.warning("Banks use different orientation designs; filters are paired by index")
    high_a, high_b = high_pass_filters(bank_a), high_pass_filters(bank_b)
    rows = []
    for i, (a, b) in enumerate(zip(high_a, high_b)):
        norm_a, norm_b = np.linalg.norm(a), np.linalg.norm(b)
        if norm_a == 0 or norm_b == 0:
            correlation, residual = 0.0, 1.0
        else:
            inner = np.vdot(b, a)
            correlation = float(abs(inner) / (norm_a * norm_b))
            # residual after the best complex rescaling of b onto a
            residual = float(np.linalg.norm(a - (inner / norm_b ** 2) * b) / norm_a)
        rows.append({
            "orientation": i,
            "nx": float(bank_a.design.points[i, 0]),
            "ny": float(bank_a.design.points[i, 1]),
            "nz": float(bank_a.design.points[i, 2]),
            "correlation": correlation,
            "residual": residual,
            "max_re_a": float(np.max(np.abs(a.real))),
            "max_im_a": float(np.max(np.abs(a.imag))),
            "max_re_b": float(np.max(np.abs(b.real))),
            "max_im_b": float(np.max(np.abs(b.imag))),
        })
    log.info(f"Filter comparison: min correlation {min(r['correlation'] for r in rows):.4f}")
    return rows


def filter_slice_rows(bank: WaveletBank, axis: int = 2) -> List[list]:
    """Center slices of every high-pass filter as (orientation, u, v, re, im) rows."""
    rows = []
    for i, psi in enumerate(high_pass_filters(bank)):
        plane = np.take(psi, psi.shape[axis] // 2, axis=axis)
        for (u, v), value in np.ndenumerate(plane):
            rows.append([i, u, v, float(value.real), float(value.imag)])
    return rows


# --- Round trip ---

@dataclass
class RoundTripResult:
    mode: str
    relative_error: float
    band_limited_error: float
    band_radius: float
    reconstruction: Volume

    def to_dict(self) -> dict:
        return {"mode": self.mode, "relative_error": self.relative_error,
                "band_limited_error": self.band_limited_error, "band_radius": self.band_radius}


def _relative_error(estimate: np.ndarray, reference: np.ndarray) -> float:
    norm = np.linalg.norm(reference)
    diff = np.linalg.norm(estimate - reference)
    if norm == 0:
        return float(diff)
    return float(diff / norm)


def bank_varrho(bank: WaveletBank) -> float:
    """Angular cutoff ϱ of the bank; Zernike banks carry no γ and use the Nyquist radius."""
    gamma = float(bank.params.get("gamma", 1.0))
    return gamma * np.pi / min(bank.spacing)


def roundtrip(f: Volume, bank: WaveletBank, mode: str = "exact", workers: int = 1,
              band_fraction: float = 0.8) -> RoundTripResult:
    if mode not in ("exact", "sum"):
        raise ParameterError(f"Round-trip mode must be 'exact' or 'sum', got '{mode}'")
    if mode == "sum" and not bank.spectral_split:
        raise ParameterError(f"Round-trip mode 'sum' needs a bank with the low/high split, got a {bank.kind} bank")
    score = forward(f, bank, workers)
    rec = reconstruct_exact(score, bank, workers) if mode == "exact" else reconstruct_sum(score)
    radius = band_fraction * bank_varrho(bank)
    result = RoundTripResult(
        mode=mode,
        relative_error=_relative_error(rec.data, f.data),
        band_limited_error=_relative_error(band_limit(rec, radius).data, band_limit(f, radius).data),
        band_radius=radius,
        reconstruction=rec,
    )
    log.info(f"Round trip ({mode}): error {result.relative_error:.3e}, "
             f"band-limited {result.band_limited_error:.3e}")
    return result


# --- CNR sweep ---

def cnr_sweep(f: Volume, bank: Optional[WaveletBank], regions: RegionSpec, times: Sequence[float],
              methods: Sequence[str] = SWEEP_METHODS, config: Optional[cedos.DiffusionConfig] = None,
              workers: int = 1) -> List[dict]:
    """CNR against diffusion time per method; T = 0 is the input itself."""
    unknown = [m for m in methods if m not in SWEEP_METHODS]
    if unknown:
        raise ParameterError(f"Unknown sweep method(s) {unknown}; choose from {SWEEP_METHODS}")
    if any(t < 0 for t in times):
        raise ParameterError(f"Sweep times must be non-negative, got {list(times)}")
    times = sorted(set(float(t) for t in times) | {0.0})
    config = config or cedos.DiffusionConfig()
    base = cnr(f, regions)

    rows: List[dict] = []
    for method in methods:
        curve = []
        if method == "cedos":
            if bank is None:
                raise ParameterError("The cedos sweep needs a wavelet bank")
            if not bank.spectral_split:
                raise ParameterError("The cedos sweep reconstructs by the fast sum and needs a bank with the low/high split")
            score = forward(f, bank, workers)
            laplacian = cedos.angular_laplacian(score.design) if config.d44 > 0 else None
        for t in times:
            if t == 0.0:
                value = base
            elif method == "gauss":
                value = cnr(cedos.gaussian_diffusion(f, t), regions)
            else:
                step_config = dataclasses.replace(config, end_time=t, dt=min(config.dt, t))
                diffused, _ = cedos.diffuse(score, step_config, laplacian)
                value = cnr(reconstruct_sum(diffused), regions)
            log.debug(f"CNR sweep {method} T={t}: {value:.4f}")
            curve.append({"method": method, "T": t, "cnr": value, "peak": False})
        peak = max(range(len(curve)), key=lambda k: curve[k]["cnr"])
        curve[peak]["peak"] = True
        rows.extend(curve)
    return rows


def sweep_summary(rows: List[dict]) -> Dict[str, dict]:
    """Peak CNR, its time, and the relative drop from the peak to the last time per method."""
    summary = {}
    for method in dict.fromkeys(r["method"] for r in rows):
        curve = [r for r in rows if r["method"] == method]
        peak = max(curve, key=lambda r: r["cnr"])
        last = curve[-1]["cnr"]
        drop = (peak["cnr"] - last) / peak["cnr"] if peak["cnr"] != 0 else 0.0
        summary[method] = {"peak_cnr": peak["cnr"], "peak_T": peak["T"], "drop_after_peak": drop}
    return summary
