import logging

from ..run_context import RunContext
from .base_stage import ProcessingStage
from processing.tubularity import write_centerline_csv
from processing.utils import preview_utils
from processing.volume_core import Volume, write_volume

log = logging.getLogger(__name__)

class FeatureExportStage(ProcessingStage):
    """
    Writes the tubularity features: confidence s^t, radius r*, the three
    components of n* and the centerline candidate table.
    """

    def execute(self, context: RunContext) -> RunContext:
        context.require("tubularity_field", "score")
        field = context.tubularity_field
        spacing = context.score.spacing
        quantile = context.config_obj.output_settings.get("centerline_quantile", 0.01)

        confidence = field.confidence_volume()
        volumes = {"confidence.f32": confidence, "radius.f32": field.radius_volume()}
        direction = field.direction_volume()
        for axis, name in enumerate(preview_utils.AXIS_NAMES):
            volumes[f"direction_{name}.f32"] = direction[..., axis]
        for name, data in volumes.items():
            path = context.output_path(name)
            write_volume(Volume(data, spacing), path)
            context.outputs.append(path)

        csv_path = context.output_path("centerline.csv")
        rows = write_centerline_csv(field, csv_path, quantile)
        context.outputs.append(csv_path)
        log.info(f"Feature export: {len(volumes)} volumes and {rows} centerline candidates")

        if context.previews:
            preview_utils.save_preview(context.output_path("confidence.png"), confidence)
            preview_utils.save_direction_preview(context.output_path("direction.png"), direction, weight=confidence)
        context.stage_reports["feature_export"] = {"centerline_rows": rows, "quantile": quantile}
        return context
