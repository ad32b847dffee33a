import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import pytest

from plotbench.dataset import DatasetManifest
from plotbench.generate import generate


@pytest.fixture(scope="session")
def small_set(tmp_path_factory):
    """Two layouts at three stages plus three few-shot examples."""
    out = tmp_path_factory.mktemp("data")
    return generate(DatasetManifest(seed=11, num_layouts=2, stages=[10, 50, 90]), out)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
