import logging

from ..run_context import RunContext
from .base_stage import ProcessingStage
from processing import cedos

log = logging.getLogger(__name__)


class DiffusionStage(ProcessingStage):
    """
    Runs crossing-preserving diffusion on the current score and replaces it
    with the diffused one. The run report lands in stage_reports["diffusion"].
    """

    def execute(self, context: RunContext) -> RunContext:
        context.require("score")
        config = context.config_obj.diffusion_config
        diffused, report = cedos.diffuse(context.score, config)
        context.score = diffused
        context.stage_reports["diffusion"] = report.to_dict()
        log.info(
            f"Diffusion finished: {report.steps} steps of {report.dt:.4g} "
            f"(bound {report.dt_bound:.4g}), mass drift "
            f"{abs(report.mass[-1] - report.mass[0]):.3e}"
        )
        return context
