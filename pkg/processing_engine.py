# processing_engine.py

import logging
from typing import Callable, Dict, List, Optional

from configuration import Configuration
from processing.errors import OrientationScoreError
from processing.pipeline.orchestrator import PipelineOrchestrator
from processing.pipeline.run_context import RunContext
from processing.pipeline.stages.base_stage import ProcessingStage
from processing.pipeline.stages.diffusion import DiffusionStage
from processing.pipeline.stages.feature_export import FeatureExportStage
from processing.pipeline.stages.lift import LiftStage
from processing.pipeline.stages.reconstruction import ReconstructionStage
from processing.pipeline.stages.segmentation import SegmentationStage
from processing.pipeline.stages.sh_expansion import ShExpansionStage
from processing.pipeline.stages.tubularity_scan import TubularityStage
from run_structure import RunManifest

log = logging.getLogger(__name__)


# --- Custom Exception ---
class ProcessingEngineError(Exception):
    """Custom exception for errors during processing engine operations."""
    pass


def _transform_stages(context: RunContext, mode: str) -> List[ProcessingStage]:
    return [LiftStage()]


def _reconstruct_stages(context: RunContext, mode: str) -> List[ProcessingStage]:
    return [ReconstructionStage(mode)]


def _cedos_stages(context: RunContext, mode: str) -> List[ProcessingStage]:
    stages = [] if context.score is not None else [LiftStage()]
    return stages + [DiffusionStage(), ReconstructionStage(mode)]


def _tubularity_stages(context: RunContext, mode: str) -> List[ProcessingStage]:
    stages = [] if context.score is not None else [LiftStage()]
    return stages + [ShExpansionStage(), TubularityStage(), FeatureExportStage(), SegmentationStage()]


PIPELINES: Dict[str, Callable[[RunContext, str], List[ProcessingStage]]] = {
    "transform": _transform_stages,
    "reconstruct": _reconstruct_stages,
    "cedos": _cedos_stages,
    "tubularity": _tubularity_stages,
}


# --- Processing Engine Class ---
class ProcessingEngine:
    """
    Builds the stage list for a named pipeline, runs it through the
    orchestrator and records the outcome in the run manifest.
    """
    def __init__(self, config_obj: Configuration):
        """
        Initializes the processing engine with static configuration.

        Args:
            config_obj: The loaded Configuration object.
        """
        if not isinstance(config_obj, Configuration):
            raise ProcessingEngineError("config_obj must be a valid Configuration object.")
        self.config_obj: Configuration = config_obj
        log.debug("ProcessingEngine initialized.")

    def stages_for(self, pipeline: str, context: RunContext, mode: str = "exact") -> List[ProcessingStage]:
        try:
            factory = PIPELINES[pipeline]
        except KeyError:
            raise ProcessingEngineError(f"Unknown pipeline '{pipeline}'. Known: {', '.join(sorted(PIPELINES))}")
        return factory(context, mode)

    def run(self, pipeline: str, context: RunContext, manifest: Optional[RunManifest] = None,
            mode: str = "exact") -> RunContext:
        """
        Runs ``pipeline`` on ``context``.

        Errors raised by the numerical modules propagate unchanged so the
        caller can map them to exit codes; anything else is wrapped in
        ProcessingEngineError.
        """
        stages = self.stages_for(pipeline, context, mode)
        orchestrator = PipelineOrchestrator(self.config_obj, stages)
        log.info(f"Running pipeline '{pipeline}' ({len(stages)} stages)")
        context = orchestrator.run(context)

        if manifest is not None:
            manifest.results.update(context.stage_reports)
            for path in context.outputs:
                if path.exists():
                    manifest.add_output(path.name, path)

        if context.status_flags.get("run_failed"):
            error = context.status_flags.get("run_failed_exception")
            stage = context.status_flags.get("run_failed_stage")
            if isinstance(error, OrientationScoreError):
                raise error
            raise ProcessingEngineError(
                f"Pipeline '{pipeline}' failed in stage {stage}: {context.status_flags.get('run_failed_reason')}"
            ) from error
        for name, seconds in context.status_flags.get("stage_seconds", {}).items():
            log.debug(f"  {name}: {seconds:.2f}s")
        log.info(f"Pipeline '{pipeline}' finished")
        return context
