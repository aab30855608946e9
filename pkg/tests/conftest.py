import numpy as np
import pytest

from photonbuffer.config import ExperimentConfig
from photonbuffer.control import ideal_program, make_program
from photonbuffer.detection import DetectorModel
from photonbuffer.optics import BufferModel, SourceModel


@pytest.fixture
def src():
    return SourceModel()


@pytest.fixture
def buf():
    return BufferModel()


@pytest.fixture
def lossless_buf():
    return BufferModel(round_trip_loss_db=0.0, input_coupling_loss_db=0.0, output_coupling_loss_db=0.0)


@pytest.fixture
def ideal_det():
    return DetectorModel(efficiency=1.0, jitter_sigma_ps=0.0, dark_rate_hz=0.0, dead_time_ps=0.0)


@pytest.fixture
def default_cfg():
    return ExperimentConfig().resolve()


@pytest.fixture
def program_factory(src, buf):
    def factory(n, ideal=True, **kw):
        b = kw.pop("buf", buf)
        s = kw.pop("src", src)
        return ideal_program(n, b, s, **kw) if ideal else make_program(n, b, s, **kw)

    return factory


@pytest.fixture
def rng():
    return np.random.default_rng(20240101)


# -- acceptance report -------------------------------------------------------------

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion; printed after the run."""

    def report(name: str, ok: bool, detail: str = "") -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  [{detail}]" if detail else "")
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
