"""Checks against the committed reference runs of the default configuration."""

from pathlib import Path

import pytest

from mdaqa import experiment
from mdaqa.config import RunConfig

REFERENCE = Path(__file__).parent / "fixtures" / "reference_runs.json"


@pytest.fixture(scope="module")
def reference():
    if not REFERENCE.exists():
        pytest.skip("no recorded reference, run `invoke record-reference`")
    return experiment.ReferenceRuns.from_json(REFERENCE)


def test_source_dev_exact_match(reference):
    assert reference.source_dev_em >= 90


def test_adaptation_gain_on_every_seed(reference):
    assert len(reference.seeds) == 5
    assert all(s.gain >= 5 for s in reference.seeds), [s.gain for s in reference.seeds]


def test_mask_beats_ablation(reference):
    wins = sum(1 for s in reference.seeds if s.margin > 0)

    assert wins >= 4
    assert sum(s.margin for s in reference.seeds) > 0


@pytest.mark.slow
def test_reference_is_current(reference):
    assert experiment.reference_runs(RunConfig(), len(reference.seeds)) == reference
