# --- Imports ---
import logging
import time
from typing import List

from configuration import Configuration

from .run_context import RunContext
from .stages.base_stage import ProcessingStage

log = logging.getLogger(__name__)

# --- PipelineOrchestrator Class ---

class PipelineOrchestrator:
    """
    Runs a fixed sequence of processing stages over one RunContext.
    The first failing stage stops the run; its error is recorded in
    ``context.status_flags`` rather than raised.
    """

    def __init__(self, config_obj: Configuration, stages: List[ProcessingStage]):
        """
        Initializes the PipelineOrchestrator.

        Args:
            config_obj: The main configuration object.
            stages: Stages to run, in order.
        """
        self.config_obj: Configuration = config_obj
        self.stages: List[ProcessingStage] = list(stages)

    @property
    def stage_names(self) -> List[str]:
        return [stage.__class__.__name__ for stage in self.stages]

    def run(self, context: RunContext) -> RunContext:
        """Executes every stage in turn; stops at the first error."""
        context.status_flags.setdefault("run_failed", False)
        timings = context.status_flags.setdefault("stage_seconds", {})
        log.debug(f"Executing pipeline: {' -> '.join(self.stage_names)}")
        for stage in self.stages:
            stage_name = stage.__class__.__name__
            log.debug(f"Executing stage: {stage_name}")
            t0 = time.perf_counter()
            try:
                context = stage.execute(context)
            except Exception as e:
                log.error(f"Error during stage '{stage_name}': {e}", exc_info=True)
                context.status_flags["run_failed"] = True
                context.status_flags["run_failed_stage"] = stage_name
                context.status_flags["run_failed_reason"] = str(e)
                context.status_flags["run_failed_exception"] = e
                break  # Stop processing remaining stages on error
            finally:
                timings[stage_name] = time.perf_counter() - t0
        return context
