from abc import ABC, abstractmethod

from ..run_context import RunContext


class ProcessingStage(ABC):
    """
    Abstract base class for a stage in the orientation-score pipeline.
    """

    @abstractmethod
    def execute(self, context: RunContext) -> RunContext:
        """
        Executes the processing logic of this stage.

        Args:
            context: The current run context.

        Returns:
            The updated run context.
        """
        pass
