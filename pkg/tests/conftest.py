import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from acceptance_log import RESULTS  # noqa: E402
from tabsae.models.base import save_checkpoint  # noqa: E402
from tabsae.models.pfn import MetaTrainConfig, PFNConfig, PFNModel, TaskPrior, meta_train  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(RESULTS, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def trained_pfn(tmp_path_factory):
    """Default-budget in-context model, meta-trained once per session and checkpointed."""
    model = PFNModel(PFNConfig(max_features=8, max_support=256), seed=42)
    t0 = time.perf_counter()
    meta_train(model, TaskPrior(), MetaTrainConfig(seed=42))
    seconds = time.perf_counter() - t0
    path = tmp_path_factory.mktemp("pfn") / "pfn.npz"
    save_checkpoint(model, path, {"steps": len(model.curve)})
    return model, path, seconds
