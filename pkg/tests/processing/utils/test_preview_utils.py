import numpy as np
import pytest
import cv2
from unittest import mock

from processing.utils import preview_utils


def create_volume(dims=(6, 8, 10)):
    return np.arange(np.prod(dims), dtype=np.float64).reshape(dims)


def test_center_slice_picks_middle_index():
    volume = create_volume()
    np.testing.assert_array_equal(preview_utils.center_slice(volume, axis=2), volume[:, :, 5])
    np.testing.assert_array_equal(preview_utils.center_slice(volume, axis=0), volume[3])


def test_normalize_to_uint8_stretches_range():
    image = preview_utils.normalize_to_uint8(np.array([[-1.0, 0.0], [1.0, 3.0]]))
    assert image.dtype == np.uint8
    assert image.min() == 0 and image.max() == 255


def test_normalize_constant_image_is_zero():
    assert not preview_utils.normalize_to_uint8(np.full((3, 3), 7.0)).any()


def test_save_preview_writes_upscaled_png(tmp_path):
    path = tmp_path / "sub" / "preview.png"
    assert preview_utils.save_preview(path, create_volume(), scale=3)
    image = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    assert image.shape == (18, 24)


def test_save_preview_uses_magnitude_for_complex(tmp_path):
    path = tmp_path / "complex.png"
    volume = create_volume() * 1j
    assert preview_utils.save_preview(path, volume, scale=1)
    expected = preview_utils.normalize_to_uint8(preview_utils.center_slice(np.abs(volume)))
    np.testing.assert_array_equal(cv2.imread(str(path), cv2.IMREAD_UNCHANGED), expected)


def test_save_preview_reports_opencv_failure(tmp_path):
    with mock.patch.object(preview_utils.cv2, "imwrite", side_effect=cv2.error("boom")), \
            mock.patch.object(preview_utils.logger, "error") as error:
        assert not preview_utils.save_preview(tmp_path / "x.png", create_volume())
    error.assert_called_once()


def test_direction_preview_is_rgb(tmp_path):
    directions = np.zeros((4, 4, 4, 3))
    directions[..., 2] = 1.0
    path = tmp_path / "dir.png"
    assert preview_utils.save_direction_preview(path, directions, scale=1)
    assert cv2.imread(str(path)).shape == (4, 4, 3)


def test_volume_stats():
    stats = preview_utils.calculate_volume_stats(np.array([[[1.0, 2.0], [3.0, 6.0]]]))
    assert stats["min"] == 1.0
    assert stats["max"] == 6.0
    assert stats["mean"] == pytest.approx(3.0)
    assert preview_utils.calculate_volume_stats(None) is None


def test_csv_round_trip(tmp_path):
    path = tmp_path / "table.csv"
    count = preview_utils.write_csv(path, ["T", "cnr"], [[0.0, 1.5], [1.0, 2.25]])
    rows = preview_utils.read_csv(path)
    assert count == 2
    assert rows[1] == {"T": "1", "cnr": "2.25"}
