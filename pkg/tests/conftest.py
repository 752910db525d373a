import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from rankmargin import synth  # noqa: E402


@pytest.fixture(scope="session")
def truth():
    return synth.default_truth(seed=1, country_h={"EGY": 0.05, "ENG": 0.0, "USA": 0.0})


@pytest.fixture(scope="session")
def data500(truth):
    schedule = synth.tour_schedule(500, seed=4)
    return synth.generate(truth, schedule, seed=5, discretize=True)
