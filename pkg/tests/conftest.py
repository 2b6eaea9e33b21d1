import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from repunlearn import encoder  # noqa: E402
from repunlearn.datasets import MixtureConfig, generate_toy_mixture, split_class_unlearn  # noqa: E402


@pytest.fixture(scope="session")
def toy():
    """Default toy mixture, original model, retrained model and class-0 split."""
    train, test = generate_toy_mixture(MixtureConfig(seed=0))
    cfg = encoder.TrainConfig(seed=0)
    net = encoder.train_classifier(cfg, train, encoder.TOY_DIMS, np.random.default_rng(0))
    split = split_class_unlearn(train, [0])
    retrained = encoder.retrain_baseline(cfg, train.subset(split.retain_indices),
                                         encoder.TOY_DIMS, np.random.default_rng(1))
    return {"train": train, "test": test, "net": net, "split": split, "retrained": retrained}


# PASS/FAIL lines recorded by the acceptance suite, echoed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
