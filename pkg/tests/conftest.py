import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    # acceptance lines are printed; keep them visible without -s
    config.addinivalue_line("markers", "acceptance: [PRIMARY] acceptance criterion")
    sys.stdout.reconfigure(line_buffering=True)


ACCEPTANCE_LINES: list[str] = []


def record(criterion: str, passed: bool, detail: str) -> None:
    line = f"{'PASS' if passed else 'FAIL'}  {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def toy_run(tmp_path_factory):
    """The 2000-step toy training run, shared by every test that needs trained weights."""
    from sstm.checkpoint import save_checkpoint
    from sstm.training import TrainConfig, toy_model_config, train

    config = toy_model_config()
    tc = TrainConfig()
    weights, log = train(config, tc, log=lambda line: print("toy", line, flush=True))
    ckpt = tmp_path_factory.mktemp("toy") / "toy.ckpt"
    save_checkpoint(weights, config, ckpt)
    return {"config": config, "train": tc, "weights": weights, "log": log, "ckpt": ckpt}
