import numpy as np
import pytest

from msadnet.model import ModelConfig
from msadnet.tensor import Tensor

# reduced widths that keep the full topology but train in seconds per epoch
DESK_WIDTHS = dict(
    block_filters=(8, 12, 16),
    dense1_plan=(16, 16, 8, 24, 24, 24),
    dense2_plan=(24, 24, 12, 32, 32, 32),
    sam_filters=16,
)

TINY_WIDTHS = dict(
    block_filters=(2, 3, 3),
    dense1_plan=(3, 3, 2, 3, 3, 3),
    dense2_plan=(3, 3, 2, 3, 3, 3),
    sam_filters=2,
)


def desk_config(**kw) -> ModelConfig:
    base = dict(input_size=112, bn_momentum=0.9, **DESK_WIDTHS)
    base.update(kw)
    return ModelConfig(**base)


def tiny_config(**kw) -> ModelConfig:
    base = dict(input_size=32, num_classes=2, enable_sam=False, precision="float64", **TINY_WIDTHS)
    base.update(kw)
    return ModelConfig(**base)


def var(a) -> Tensor:
    return Tensor(np.array(a, dtype=np.float64), requires_grad=True)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
