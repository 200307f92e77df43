import logging
from typing import Tuple

import numpy as np

from ..run_context import RunContext
from .base_stage import ProcessingStage
from processing.errors import ParameterError
from processing.score_transform import OrientationScore, forward
from processing.volume_core import crop_volume, pad_volume

log = logging.getLogger(__name__)


def resolve_pad(setting, filter_dims: Tuple[int, int, int]) -> Tuple[int, int, int]:
    """'auto' pads by half the filter size per axis; an int pads uniformly."""
    if setting == "auto":
        return tuple(int(d) // 2 for d in filter_dims)
    if isinstance(setting, bool) or not isinstance(setting, int) or setting < 0:
        raise ParameterError(f"TRANSFORM.pad must be 'auto' or a non-negative integer, got {setting!r}")
    return (setting,) * 3


class LiftStage(ProcessingStage):
    """
    Lifts the input volume to an orientation score. The volume is padded
    with edge replication first and the score is cropped back afterwards.
    """

    def execute(self, context: RunContext) -> RunContext:
        context.require("volume", "bank")
        pad = resolve_pad(context.config_obj.transform_settings.get("pad", 0), context.bank.filter_dims)
        volume = pad_volume(context.volume, pad) if any(pad) else context.volume
        log.info(f"Lifting volume {context.volume.dims} with {context.bank.count} orientations (pad {pad})")

        score = forward(volume, context.bank, workers=context.workers)
        if any(pad):
            sl = tuple(slice(p, n - p) for p, n in zip(pad, score.dims))
            score = OrientationScore(
                data=np.ascontiguousarray(score.data[(slice(None),) + sl]),
                design=score.design,
                low_channel=crop_volume(score.low_channel, pad),
                bank_hash=score.bank_hash,
                s_rho=score.s_rho,
                spectral_split=score.spectral_split,
            )
        context.score = score
        context.stage_reports["lift"] = {
            "pad": list(pad),
            "dims": list(score.dims),
            "orientations": score.count,
            "max_abs": float(np.abs(score.data).max()) if score.data.size else 0.0,
        }
        return context
