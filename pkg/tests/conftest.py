import numpy as np
import pytest
import torch

from rdfc.data import SynthSceneSpec, SynthBox, synth_scene


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def room_scene():
    """Room with floor, ceiling, walls and one box, camera looking along +y."""
    spec = SynthSceneSpec(boxes=(SynthBox((2.0, 3.0, 0.0), (2.8, 3.6, 0.9)),))
    return synth_scene(spec, seed=3)


ACCEPTANCE_LINES = []


@pytest.fixture
def report(capsys):
    """Print and record one pass/fail line for an acceptance criterion."""

    def _report(name, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
