import logging

import numpy as np

from ..run_context import RunContext
from .base_stage import ProcessingStage
from processing.errors import NumericError
from processing.tubularity import segment
from processing.utils import preview_utils
from processing.volume_core import Volume, write_volume

log = logging.getLogger(__name__)


class SegmentationStage(ProcessingStage):
    """Builds the tube mask from the top-quantile centers and writes it with its distance map."""

    def execute(self, context: RunContext) -> RunContext:
        context.require("tubularity_field", "score")
        quantile = context.config_obj.output_settings.get("segment_quantile", 0.01)
        seg = segment(context.tubularity_field, quantile)
        if not seg.mask.any():
            raise NumericError(f"Segmentation mask is empty at quantile {quantile}")
        context.segmentation = seg

        spacing = context.score.spacing
        distance_path = context.output_path("distance.f32")
        mask_path = context.output_path("mask.f32")
        write_volume(Volume(seg.distance, spacing), distance_path)
        write_volume(Volume(seg.mask.astype(np.float64), spacing), mask_path)
        context.outputs.extend([distance_path, mask_path])
        if context.previews:
            preview_utils.save_preview(context.output_path("mask.png"), seg.mask.astype(np.float64))
        context.stage_reports["segmentation"] = {
            "quantile": quantile,
            "centers": int(seg.centers.shape[0]),
            "mask_voxels": int(seg.mask.sum()),
        }
        return context
