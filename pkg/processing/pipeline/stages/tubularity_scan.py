import logging

from ..run_context import RunContext
from .base_stage import ProcessingStage
from processing.tubularity import edge_mask, tubularity_features

log = logging.getLogger(__name__)


class TubularityStage(ProcessingStage):
    """
    Scans the SH expansion for tubular structure. Only voxels within r_max of
    an edge response are visited; the rest keep zero confidence.
    """

    def execute(self, context: RunContext) -> RunContext:
        context.require("score", "expansion")
        config = context.config_obj.tubularity_config
        mask = edge_mask(context.score, config.r_max, config.edge_floor)
        visited = int(mask.sum())
        log.info(f"Tubularity: scanning {visited} of {mask.size} voxels over {context.score.count} orientations")
        field = tubularity_features(context.expansion, config, context.score.design.points, mask=mask)
        context.tubularity_field = field
        context.stage_reports["tubularity"] = {
            "visited_voxels": visited,
            "radii": config.radii.tolist(),
            "theta_samples": config.theta_samples,
            "reduce": config.reduce,
            "max_confidence": float(field.confidence.max()) if field.confidence.size else 0.0,
        }
        if visited == 0:
            log.warning("Tubularity: the score holds no edge response above the floor")
        return context
