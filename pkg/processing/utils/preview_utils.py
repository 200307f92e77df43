import csv
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import cv2
import numpy as np

logger = logging.getLogger(__name__)

AXIS_NAMES = ("x", "y", "z")


def center_slice(data: np.ndarray, axis: int = 2) -> np.ndarray:
    """The middle slice of a (X, Y, Z[, C]) array orthogonal to ``axis``."""
    index = data.shape[axis] // 2
    return np.take(data, index, axis=axis)


def normalize_to_uint8(image: np.ndarray) -> np.ndarray:
    """Min-max stretch to 0..255; a constant image maps to zeros."""
    data = np.asarray(image, dtype=np.float64)
    lo, hi = float(np.min(data)), float(np.max(data))
    if hi <= lo:
        return np.zeros(data.shape, dtype=np.uint8)
    return np.round((data - lo) / (hi - lo) * 255.0).astype(np.uint8)


def _upscale(image: np.ndarray, scale: int) -> np.ndarray:
    if scale <= 1:
        return image
    h, w = image.shape[:2]
    return cv2.resize(image, (w * scale, h * scale), interpolation=cv2.INTER_NEAREST)


def save_preview(
    image_path: Union[str, Path],
    volume_data: np.ndarray,
    axis: int = 2,
    scale: int = 4,
    png_compression_level: int = 6,
) -> bool:
    """
    Saves the center slice of a scalar volume as an 8-bit PNG.

    Args:
        image_path: Target .png path; parent directories are created.
        volume_data: (X, Y, Z) array. Complex data is previewed by magnitude.
        axis: Axis orthogonal to the slice.
        scale: Integer nearest-neighbour upscaling factor.

    Returns:
        True if OpenCV wrote the file, False otherwise.
    """
    data = np.abs(volume_data) if np.iscomplexobj(volume_data) else volume_data
    path_obj = Path(image_path)
    path_obj.parent.mkdir(parents=True, exist_ok=True)
    image = _upscale(normalize_to_uint8(center_slice(data, axis)), scale)
    try:
        ok = bool(cv2.imwrite(str(path_obj), image, [cv2.IMWRITE_PNG_COMPRESSION, png_compression_level]))
    except cv2.error as e:
        logger.error(f"Failed to write preview {path_obj}: {e}")
        return False
    if ok:
        logger.debug(f"Preview written: {path_obj}")
    return ok


def save_direction_preview(image_path: Union[str, Path], directions: np.ndarray, weight: Optional[np.ndarray] = None,
                           axis: int = 2, scale: int = 4) -> bool:
    """Center slice of a unit-vector field as RGB = |n|, optionally modulated by ``weight``."""
    rgb = np.abs(center_slice(directions, axis))
    if weight is not None:
        w = center_slice(weight, axis).astype(np.float64)
        peak = float(np.max(w))
        rgb = rgb * (w / peak if peak > 0 else 0.0)[..., None]
    image = np.clip(np.round(rgb * 255.0), 0, 255).astype(np.uint8)
    image = _upscale(cv2.cvtColor(image, cv2.COLOR_RGB2BGR), scale)
    path_obj = Path(image_path)
    path_obj.parent.mkdir(parents=True, exist_ok=True)
    return bool(cv2.imwrite(str(path_obj), image))


def calculate_volume_stats(volume_data: np.ndarray) -> Optional[Dict]:
    """min, max, mean and median of a real volume (complex by magnitude)."""
    if volume_data is None:
        return None
    data = np.abs(volume_data) if np.iscomplexobj(volume_data) else np.asarray(volume_data, dtype=np.float64)
    return {
        "min": float(np.min(data)),
        "max": float(np.max(data)),
        "mean": float(np.mean(data)),
        "median": float(np.median(data)),
    }


def write_csv(path: Union[str, Path], header: Sequence[str], rows: Iterable[Sequence]) -> int:
    """Writes a header and rows; floats keep 10 significant digits. Returns the row count."""
    path_obj = Path(path)
    path_obj.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path_obj, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(header))
        for row in rows:
            writer.writerow([f"{v:.10g}" if isinstance(v, (float, np.floating)) else v for v in row])
            count += 1
    logger.debug(f"CSV written: {path_obj} ({count} rows)")
    return count


def read_csv(path: Union[str, Path]) -> List[Dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
