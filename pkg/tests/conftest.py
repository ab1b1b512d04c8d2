import numpy as np
import pytest

from partfusion import FusionWeights, SynthConfig, generate
from partfusion.protocols import learn_fusion_weights

_VERDICTS: list[str] = []


def record_verdict(line: str) -> None:
    """Collect an acceptance verdict for the end-of-run summary."""
    _VERDICTS.append(line)


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.line(line)


@pytest.fixture(scope="session")
def bench():
    """Default synthetic benchmark, shared read-only across tests."""
    return generate(SynthConfig())


@pytest.fixture(scope="session")
def uniform_weights(bench):
    return FusionWeights(np.ones(len(bench.registry.parts)))


@pytest.fixture(scope="session")
def learned_weights(bench):
    """Fusion weights learned on the validation split, clamped at zero."""
    fw, _ = learn_fusion_weights(
        bench.dataset,
        bench.features,
        bench.registry,
        split="val",
        seed=0,
        clamp_nonnegative=True,
    )
    return fw
