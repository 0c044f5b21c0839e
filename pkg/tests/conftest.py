import warnings

import numpy as np
import pytest
import torch

from causalflow.errors import DiameterWarning


@pytest.fixture(autouse=True)
def _quiet_diameter():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DiameterWarning)
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def randomize(model, seed=0, scale=0.3):
    """Replace the (identity) initial weights by random ones."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in model.parameters():
            p.copy_(scale * torch.randn(p.shape, generator=gen, dtype=p.dtype))
    return model


# one summary line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: list[str] = []


def record(criterion: str, ok: bool, detail: str) -> bool:
    line = f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
