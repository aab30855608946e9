import numpy as np
import pytest

from photonbuffer import _accel
from photonbuffer.analysis import storage_gate
from photonbuffer.control import ideal_program, make_program
from photonbuffer.detection import DetectorModel
from photonbuffer.errors import ConfigError
from photonbuffer.optics import SourceModel
from photonbuffer.pipeline import simulate


def run(src, buf, det, n=60_000, hold=3, **kw):
    program = make_program(hold, buf, src)
    gate = storage_gate(src.pulse_epoch_ps, hold, buf.round_trip_time_ps)
    return simulate(src, buf, program, det, n, seed=17, g2_gate=gate, keep_events=True, **kw)


def same_result(a, b):
    np.testing.assert_array_equal(a.histogram.counts, b.histogram.counts)
    np.testing.assert_array_equal(a.events.time_ps, b.events.time_ps)
    np.testing.assert_array_equal(a.events.channel, b.events.channel)
    assert a.g2 == b.g2 and a.tally == b.tally


@pytest.fixture
def busy_det():
    # high dark rate and long dead time exercise the carried chunk state
    return DetectorModel(dark_rate_hz=2e5, dead_time_ps=50_000.0)


@pytest.mark.parametrize("jobs", [2, 4])
def test_worker_count_does_not_change_results(src, buf, busy_det, jobs):
    same_result(run(src, buf, busy_det, chunk_pulses=7_000),
                run(src, buf, busy_det, chunk_pulses=7_000, jobs=jobs))


@pytest.mark.parametrize("chunk", [1_000, 8_192, 59_999])
def test_chunking_does_not_change_results(src, buf, busy_det, chunk):
    same_result(run(src, buf, busy_det), run(src, buf, busy_det, chunk_pulses=chunk))


@pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba not installed")
def test_backends_agree(src, buf, busy_det):
    same_result(run(src, buf, busy_det, backend="numba"), run(src, buf, busy_det, backend="numpy"))


def test_histograms_add_up(src, buf, busy_det):
    r = run(src, buf, busy_det)
    a, b = r.channel_histograms["A"], r.channel_histograms["B"]
    np.testing.assert_array_equal(r.histogram.counts, a.counts + b.counts)
    assert r.tally.clicks == {"A": int(a.counts.sum()), "B": int(b.counts.sum())}
    assert r.tally.photons_out == sum(r.tally.by_tag.values())


def test_no_splitter_sends_all_to_a(src, buf, ideal_det):
    r = simulate(src, buf, ideal_program(2, buf, src), ideal_det, 20_000, seed=1, splitter_ratio=None,
                 g2_gate=(1150.0, 1250.0))
    assert r.tally.clicks["B"] == 0 and r.g2 is None


def test_bad_splitter_ratio(src, buf, ideal_det):
    with pytest.raises(ConfigError):
        simulate(src, buf, ideal_program(2, buf, src), ideal_det, 10, seed=1, splitter_ratio=2.0)


def test_fock_one_never_coincides(buf):
    src = SourceModel(kind="single_fock", fock_n=1)
    det = DetectorModel(dark_rate_hz=0.0, dead_time_ps=0.0)
    r = run(src, buf, det, n=50_000)
    assert r.g2.n_coincidences == 0 and r.g2.g2 == 0.0


def test_vacuum_without_dark_counts_has_undefined_g2(buf):
    src = SourceModel(mean_photon_number=0.0)
    det = DetectorModel(dark_rate_hz=0.0)
    r = run(src, buf, det, n=1000)
    assert r.g2 is None and "undefined" in r.g2_error
    assert r.histogram.counts.sum() == 0
