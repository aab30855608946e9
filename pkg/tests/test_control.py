import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from photonbuffer.analysis import exit_probabilities
from photonbuffer.control import (
    ControlProgram,
    DriveWaveform,
    GateSchedule,
    apply_bandwidth,
    apply_s21,
    build_schedule,
    ideal_program,
    make_program,
    read_s21_csv,
    switch_transmission,
    synthesize_waveform,
    validate_program,
)
from photonbuffer.errors import CapacityError, CollisionError, ConfigError, ContractError, WaveformError
from photonbuffer.optics import BufferModel, SourceModel


def rise_time_10_90(wave: DriveWaveform) -> float:
    v = wave.volts / wave.volts.max()
    t = wave.times_ps
    return float(np.interp(0.9, v, t) - np.interp(0.1, v, t))


def step(step_ps=0.5, n=400, at=20):
    t = np.arange(n) * step_ps
    return DriveWaveform(t, np.where(np.arange(n) >= at, 1.0, 0.0), 1.0, step_ps)


# -- schedules -------------------------------------------------------------------


def test_zero_hold_is_pass_through(src, buf):
    sched = build_schedule(0, buf, src)
    assert sched.release_time_ps == sched.capture_time_ps
    assert sched.gate_centers() == []
    assert sched.gate_window_ps == 50


def test_fourteen_trips_is_1400_ps(src, buf):
    sched = build_schedule(14, buf, src)
    assert sched.release_time_ps - sched.capture_time_ps == 1400


def test_capacity_and_collision(src, buf):
    with pytest.raises(CapacityError):
        build_schedule(120, buf, src)
    big = BufferModel(max_round_trips=200)
    build_schedule(14, big, src)
    with pytest.raises(CollisionError):
        build_schedule(100, big, src)
    with pytest.raises(ConfigError):
        build_schedule(-1, buf, src)


@given(st.integers(0, 14))
def test_lattice_property(n):
    src, buf = SourceModel(), BufferModel()
    sched = build_schedule(n, buf, src)
    assert math.fmod(sched.release_time_ps - sched.capture_time_ps, buf.round_trip_time_ps) == 0
    assert validate_program(make_program(n, buf, src), src, buf) == []


# -- waveform ------------------------------------------------------------------------


def test_ideal_rectangle(src, buf):
    sched = build_schedule(3, buf, src)
    wave = synthesize_waveform(sched, buf, 0.0)
    assert set(np.unique(wave.volts)) == {0.0, buf.v_pi_volts}
    on = wave.times_ps[wave.volts > 0]
    assert on.min() == pytest.approx(sched.capture_time_ps - 25)


def test_trapezoid_plateau(src, buf):
    sched = build_schedule(3, buf, src)
    wave = synthesize_waveform(sched, buf, 10.0)
    plateau = np.count_nonzero(np.isclose(wave.volts, buf.v_pi_volts)) * wave.sample_step_ps
    # two gates; each plateau spans 40 ps inclusive of both end samples
    assert plateau / 2 == pytest.approx(40.0, abs=wave.sample_step_ps)
    assert wave.is_uniform() and wave.amplitude_ok()


def test_waveform_preconditions(src, buf):
    sched = build_schedule(3, buf, src)
    with pytest.raises(WaveformError):
        synthesize_waveform(sched, buf, 60.0)
    with pytest.raises(WaveformError):
        synthesize_waveform(sched, buf, 1.0, sample_step_ps=0.5)
    with pytest.raises(WaveformError):
        synthesize_waveform(sched, buf, -1.0)


def test_bandwidth_all_pass_limit():
    wave = step()
    out = apply_bandwidth(wave, 1e6)
    np.testing.assert_allclose(out.volts, wave.volts, rtol=0, atol=1e-6)
    np.testing.assert_array_equal(out.times_ps, wave.times_ps)


def test_bandwidth_rise_time_40ghz():
    out = apply_bandwidth(step(), 40.0)
    expected = math.log(9) / (2 * math.pi * 40e9) * 1e12
    assert expected == pytest.approx(8.7425, abs=1e-4)
    assert rise_time_10_90(out) == pytest.approx(expected, rel=0.05)


def test_bandwidth_unity_dc_gain():
    t = np.arange(100) * 0.5
    wave = DriveWaveform(t, np.full(100, 3.5), 3.5, 0.5)
    np.testing.assert_allclose(apply_bandwidth(wave, 40.0).volts, 3.5)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0, 5), min_size=2, max_size=300), st.floats(1, 500))
def test_filter_never_exceeds_input_range(values, f3db):
    x = np.asarray(values)
    wave = DriveWaveform(np.arange(x.size) * 0.5, x, 5.0, 0.5)
    y = apply_bandwidth(wave, f3db).volts
    assert y.max() <= x.max() + 1e-12 and y.min() >= x.min() - 1e-12


def test_bandwidth_contract():
    bad = DriveWaveform(np.array([0.0, 1.0, 3.0]), np.zeros(3), 1.0, 1.0)
    with pytest.raises(ContractError):
        apply_bandwidth(bad, 40.0)
    with pytest.raises(ContractError):
        apply_bandwidth(step(), 0.0)


def test_s21_import_matches_single_pole(tmp_path):
    f = np.linspace(0, 400, 801)
    path = tmp_path / "s21.csv"
    path.write_text("freq_ghz,s21_db\n" + "".join(
        f"{a},{-10 * math.log10(1 + (a / 40) ** 2)}\n" for a in f.tolist()))
    freq, s21 = read_s21_csv(path)
    wave = DriveWaveform(np.arange(2000) * 0.5, np.where(np.arange(2000) % 1000 < 500, 1.0, 0.0), 1.0, 0.5)
    out = apply_s21(wave, freq, s21)
    # same magnitude response, different phase: DC level and swing are preserved
    assert out.volts.mean() == pytest.approx(wave.volts.mean(), abs=1e-9)
    assert 0.9 < out.volts.max() < 1.1
    (tmp_path / "bad.csv").write_text("f,s\n1,2\n")
    with pytest.raises(ConfigError):
        read_s21_csv(tmp_path / "bad.csv")


# -- switch ---------------------------------------------------------------------------


def test_switch_conventions():
    assert switch_transmission(0.0, 3.5) == (0.0, 1.0)
    assert switch_transmission(3.5, 3.5) == pytest.approx((1.0, 0.0))
    assert switch_transmission(1.75, 3.5) == pytest.approx((0.5, 0.5))


@given(st.floats(-100, 100), st.floats(0.1, 10), st.one_of(st.none(), st.floats(0, 60)))
def test_switch_partition(v, v_pi, ext):
    cross, bar = switch_transmission(v, v_pi, ext)
    assert cross + bar == 1.0
    if ext is not None:
        floor = min(10 ** (-ext / 10), 0.5)
        assert min(cross, bar) >= floor - 1e-12


def test_finite_extinction_floor():
    cross, bar = switch_transmission(0.0, 3.5, 20.0)
    assert cross == pytest.approx(0.01)


# -- programs and validation ------------------------------------------------------------------


def test_program_json_round_trip(src, buf):
    program = make_program(4, buf, src)
    doc = json.loads(json.dumps(program.to_json()))
    assert set(doc) == {"capture_time_ps", "hold_round_trips", "gate_window_ps", "edge_time_ps", "f3db_ghz"}
    again = ControlProgram.from_json(doc, buf, src)
    assert again == program
    with pytest.raises(ConfigError):
        ControlProgram.from_json({**doc, "extra": 1}, buf, src)


def test_waveform_csv(tmp_path, src, buf):
    wave = make_program(2, buf, src).waveform
    path = tmp_path / "w.csv"
    wave.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "time_ps,volts"
    assert len(lines) == wave.times_ps.size + 1


def _codes(program, src, buf):
    return {v.code for v in validate_program(program, src, buf)}


def test_validate_reports(src, buf):
    assert _codes(make_program(5, buf, src), src, buf) == set()
    off = GateSchedule(1000.0, 1, 50.0, 10_000.0, 100.0, release_override_ps=1150.0)
    assert "off_lattice_release" in _codes(ControlProgram(off, 3.5, 10.0, 40.0), src, buf)
    wide = GateSchedule(1000.0, 1, 120.0, 10_000.0, 100.0)
    assert "window_exceeds_round_trip" in _codes(ControlProgram(wide, 3.5, 10.0, 40.0), src, buf)
    slow = GateSchedule(1000.0, 1, 50.0, 10_000.0, 100.0)
    assert "edge_slower_than_window" in _codes(ControlProgram(slow, 3.5, 60.0, 40.0), src, buf)
    late = GateSchedule(1000.0, 100, 50.0, 10_000.0, 100.0)
    assert {"capacity", "collision"} <= _codes(ControlProgram(late, 3.5, 10.0, 40.0), src, buf)
    assert "collision" in _codes(ControlProgram(late, 3.5, 10.0, 40.0), src, BufferModel(max_round_trips=200))


@pytest.mark.parametrize("n", range(15))
def test_filtered_program_keeps_dominant_peak(n, src, buf):
    ideal = exit_probabilities(buf, ideal_program(n, buf, src), src.pulse_epoch_ps)
    real = exit_probabilities(buf, make_program(n, buf, src), src.pulse_epoch_ps)
    assert int(np.argmax(real)) == int(np.argmax(ideal)) == n


def test_default_program_switches_cleanly(src, buf):
    cross = make_program(5, buf, src).cross_fractions(buf, src.pulse_epoch_ps)
    assert cross[0] > 0.9999 and cross[5] > 0.9999
    assert np.all(np.delete(cross, [0, 5]) < 1e-9)
