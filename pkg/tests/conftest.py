from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from pcgscreen.core import DurationClass, Label, PcgRecording, Position, Segment  # noqa: E402
from pcgscreen.synth import SynthSpec, generate_array  # noqa: E402

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = (passed, detail)
    print(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def heartbeat(seconds=5.0, seed=0, **kw) -> np.ndarray:
    return generate_array(SynthSpec(seed=seed, **kw), seconds)


def make_segment(samples, duration=DurationClass.S5, label=Label.NON_CHD, pid="P0") -> Segment:
    return Segment(np.asarray(samples, dtype=float), duration, f"{pid}_MV_0", pid, label)


def make_recording(samples, pid="P0", label=Label.NON_CHD) -> PcgRecording:
    return PcgRecording(np.asarray(samples, dtype=float), 4000, pid, Position.MV, label)
