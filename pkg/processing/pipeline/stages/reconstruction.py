import logging

from ..run_context import RunContext
from .base_stage import ProcessingStage
from processing.errors import ParameterError
from processing.score_transform import reconstruct_exact, reconstruct_sum
from processing.utils.preview_utils import calculate_volume_stats

log = logging.getLogger(__name__)

RECONSTRUCTION_MODES = ("exact", "sum")


class ReconstructionStage(ProcessingStage):
    """Maps the current score back to a volume with the exact or the fast inverse."""

    def __init__(self, mode: str = "exact"):
        if mode not in RECONSTRUCTION_MODES:
            raise ParameterError(f"Reconstruction mode must be one of {RECONSTRUCTION_MODES}, got '{mode}'")
        self.mode = mode

    def execute(self, context: RunContext) -> RunContext:
        context.require("score")
        if self.mode == "exact":
            context.require("bank")
            volume = reconstruct_exact(context.score, context.bank, workers=context.workers)
        else:
            volume = reconstruct_sum(context.score)
        context.reconstruction = volume
        context.reconstruction_mode = self.mode
        context.stage_reports["reconstruction"] = {"mode": self.mode, **calculate_volume_stats(volume.data)}
        log.info(f"Reconstructed {volume.dims} volume ({self.mode} inverse)")
        return context
