from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

from configuration import Configuration
from processing.errors import ParameterError
from processing.score_transform import OrientationScore, ShScoreExpansion
from processing.tubularity import Segmentation, TubularityField
from processing.volume_core import Volume
from processing.wavelet_dft import WaveletBank


@dataclass
class RunContext:
    """Mutable state handed from stage to stage during one pipeline run."""
    config_obj: Configuration
    output_dir: Optional[Path] = None
    workers: int = 1
    previews: bool = False

    # Inputs (either may be absent depending on the pipeline)
    volume: Optional[Volume] = None
    bank: Optional[WaveletBank] = None

    # Intermediate results
    score: Optional[OrientationScore] = None
    expansion: Optional[ShScoreExpansion] = None
    reconstruction: Optional[Volume] = None
    reconstruction_mode: str = "exact"
    tubularity_field: Optional[TubularityField] = None
    segmentation: Optional[Segmentation] = None

    # Bookkeeping
    stage_reports: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    outputs: List[Path] = field(default_factory=list)
    status_flags: Dict[str, Any] = field(default_factory=dict)

    def require(self, *names: str) -> None:
        """Raises if a stage runs before the fields it consumes were produced."""
        missing = [n for n in names if getattr(self, n) is None]
        if missing:
            raise ParameterError(f"Run context is missing {', '.join(missing)}")

    def output_path(self, name: str) -> Path:
        if self.output_dir is None:
            raise ParameterError("Run context has no output directory")
        self.output_dir.mkdir(parents=True, exist_ok=True)
        return self.output_dir / name
