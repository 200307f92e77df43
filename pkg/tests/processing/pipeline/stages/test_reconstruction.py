import pytest
import numpy as np
from unittest import mock

from processing.pipeline.run_context import RunContext
from processing.pipeline.stages.reconstruction import ReconstructionStage
from processing import score_transform as st
from processing import wavelet_dft as wd
from processing.errors import ParameterError, ProvenanceError
from processing.volume_core import Volume
from configuration import Configuration


@pytest.fixture(scope="module")
def bank():
    return wd.build_bank(wd.CakeParams(n_orientations=12, s_o=0.2, filter_dims=(7, 7, 7), s_rho=2.0))


@pytest.fixture(scope="module")
def score(bank):
    return st.forward(Volume(np.random.default_rng(1).normal(size=(12, 12, 12))), bank)


def create_context(**fields) -> RunContext:
    return RunContext(config_obj=mock.MagicMock(spec=Configuration), **fields)


def test_invalid_mode_is_rejected():
    with pytest.raises(ParameterError):
        ReconstructionStage("fast")


def test_sum_mode_matches_reconstruct_sum(score):
    context = ReconstructionStage("sum").execute(create_context(score=score))
    np.testing.assert_allclose(context.reconstruction.data, st.reconstruct_sum(score).data)
    assert context.reconstruction_mode == "sum"
    assert context.stage_reports["reconstruction"]["mode"] == "sum"


def test_exact_mode_matches_reconstruct_exact(score, bank):
    context = ReconstructionStage("exact").execute(create_context(score=score, bank=bank))
    np.testing.assert_allclose(context.reconstruction.data, st.reconstruct_exact(score, bank).data)


def test_exact_mode_requires_bank(score):
    with pytest.raises(ParameterError, match="bank"):
        ReconstructionStage("exact").execute(create_context(score=score))


def test_exact_mode_checks_provenance(score):
    other = wd.build_bank(wd.CakeParams(n_orientations=12, s_o=0.25, filter_dims=(7, 7, 7), s_rho=2.0))
    with pytest.raises(ProvenanceError):
        ReconstructionStage("exact").execute(create_context(score=score, bank=other))
