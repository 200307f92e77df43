import logging

from ..run_context import RunContext
from .base_stage import ProcessingStage
from processing.score_transform import sh_expand

log = logging.getLogger(__name__)


class ShExpansionStage(ProcessingStage):
    """Fits per-voxel spherical-harmonic coefficients to the current score."""

    def execute(self, context: RunContext) -> RunContext:
        context.require("score")
        band_limit = context.config_obj.tubularity_config.band_limit
        context.expansion = sh_expand(context.score, band_limit)
        context.stage_reports["sh_expansion"] = {
            "band_limit": band_limit,
            "residual": context.expansion.residual,
        }
        if context.expansion.residual > 0.1:
            log.warning(
                f"SH expansion at L={band_limit} leaves a relative residual of "
                f"{context.expansion.residual:.3f}; steered edges will be smoothed"
            )
        return context
