import csv

import pytest
import numpy as np
from unittest import mock

from processing.pipeline.run_context import RunContext
from processing.pipeline.stages import tubularity_scan
from processing.pipeline.stages.feature_export import FeatureExportStage
from processing.pipeline.stages.segmentation import SegmentationStage
from processing.pipeline.stages.tubularity_scan import TubularityStage
from processing import tubularity as tub
from processing.errors import NumericError, ParameterError
from processing.volume_core import read_volume
from configuration import Configuration


def create_mock_config(**output) -> mock.MagicMock:
    config = mock.MagicMock(spec=Configuration)
    config.tubularity_config = tub.TubularityConfig(theta_samples=4, r_min=1.0, r_max=3.0, r_step=1.0)
    config.output_settings = {"centerline_quantile": 0.5, "segment_quantile": 0.5, **output}
    return config


def create_field(dims=(8, 8, 8), entries=(((4, 4, 4), 1.0, 2.0), ((2, 2, 2), 0.2, 1.0))):
    points = np.argwhere(np.ones(dims, dtype=bool))
    confidence = np.zeros(points.shape[0])
    radius = np.ones(points.shape[0])
    direction = np.tile([0.0, 0.0, 1.0], (points.shape[0], 1))
    flat = {tuple(p): k for k, p in enumerate(points.tolist())}
    for index, value, r in entries:
        confidence[flat[tuple(index)]] = value
        radius[flat[tuple(index)]] = r
    return tub.TubularityField(points, dims, confidence, direction, radius)


def create_context(tmp_path, field=None, **config_output) -> RunContext:
    score = mock.MagicMock()
    score.spacing = (1.0, 1.0, 1.0)
    return RunContext(config_obj=create_mock_config(**config_output), output_dir=tmp_path,
                      score=score, tubularity_field=field or create_field())


# --- TubularityStage ---

def test_tubularity_stage_scans_edge_mask():
    config = create_mock_config()
    score = mock.MagicMock()
    score.count = 12
    score.design.points = np.eye(3)
    mask = np.zeros((4, 4, 4), dtype=bool)
    mask[1:3, 1:3, 1:3] = True
    field = create_field((4, 4, 4), [((1, 1, 1), 0.5, 1.0)])
    with mock.patch.object(tubularity_scan, "edge_mask", return_value=mask) as edge_mask, \
            mock.patch.object(tubularity_scan, "tubularity_features", return_value=field) as features:
        context = TubularityStage().execute(RunContext(config_obj=config, score=score, expansion=mock.MagicMock()))
    edge_mask.assert_called_once_with(score, config.tubularity_config.r_max, config.tubularity_config.edge_floor)
    assert features.call_args.kwargs["mask"] is mask
    assert context.tubularity_field is field
    assert context.stage_reports["tubularity"]["visited_voxels"] == 8
    assert context.stage_reports["tubularity"]["max_confidence"] == 0.5


def test_tubularity_stage_warns_without_edges():
    score = mock.MagicMock()
    score.count = 3
    empty = np.zeros((4, 4, 4), dtype=bool)
    field = create_field((4, 4, 4), [])
    with mock.patch.object(tubularity_scan, "edge_mask", return_value=empty), \
            mock.patch.object(tubularity_scan, "tubularity_features", return_value=field), \
            mock.patch.object(tubularity_scan.log, "warning") as warning:
        TubularityStage().execute(RunContext(config_obj=create_mock_config(), score=score, expansion=mock.MagicMock()))
    warning.assert_called_once()


def test_tubularity_stage_requires_expansion():
    with pytest.raises(ParameterError, match="expansion"):
        TubularityStage().execute(RunContext(config_obj=create_mock_config(), score=mock.MagicMock()))


# --- FeatureExportStage ---

def test_feature_export_writes_volumes_and_centerline(tmp_path):
    context = FeatureExportStage().execute(create_context(tmp_path))
    names = {p.name for p in context.outputs}
    assert names == {"confidence.f32", "radius.f32", "direction_x.f32", "direction_y.f32",
                     "direction_z.f32", "centerline.csv"}
    confidence = read_volume(tmp_path / "confidence.f32")
    assert confidence.dims == (8, 8, 8)
    assert confidence.data[4, 4, 4] == pytest.approx(1.0)
    assert read_volume(tmp_path / "direction_z.f32").data[4, 4, 4] == pytest.approx(1.0)
    with open(tmp_path / "centerline.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[1][:3] == ["4", "4", "4"]
    assert context.stage_reports["feature_export"]["centerline_rows"] == len(rows) - 1


def test_feature_export_previews(tmp_path):
    context = create_context(tmp_path)
    context.previews = True
    with mock.patch("processing.pipeline.stages.feature_export.preview_utils") as previews:
        FeatureExportStage().execute(context)
    previews.save_preview.assert_called_once()
    previews.save_direction_preview.assert_called_once()


def test_feature_export_requires_output_dir():
    context = create_context(None)
    with pytest.raises(ParameterError, match="output directory"):
        FeatureExportStage().execute(context)


# --- SegmentationStage ---

def test_segmentation_writes_mask_and_distance(tmp_path):
    context = SegmentationStage().execute(create_context(tmp_path, segment_quantile=0.5))
    mask = read_volume(tmp_path / "mask.f32").data
    distance = read_volume(tmp_path / "distance.f32").data
    assert mask[4, 4, 4] == 1.0
    assert mask[4, 4, 6] == 1.0
    assert mask[4, 4, 7] == 0.0
    assert distance[4, 4, 4] == pytest.approx(-2.0, abs=1e-5)
    assert context.stage_reports["segmentation"]["centers"] == context.segmentation.centers.shape[0]


def test_empty_segmentation_is_a_numeric_failure(tmp_path):
    context = create_context(tmp_path, field=create_field(entries=()))
    with pytest.raises(NumericError, match="empty"):
        SegmentationStage().execute(context)
    assert not (tmp_path / "mask.f32").exists()
