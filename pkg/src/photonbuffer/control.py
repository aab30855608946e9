"""Switch gate schedules and the analog drive waveform that realises them.

Convention: 0 V holds the switch in the bar state (the loop keeps
circulating, an incoming pulse passes straight to the output); V_pi puts it
in the cross state (an incoming pulse is captured, a stored one released).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .errors import CapacityError, CollisionError, ConfigError, ContractError, WaveformError
from .optics import BufferModel, SourceModel, db_to_transmission

DEFAULT_EDGE_TIME_PS = 10.0
DEFAULT_SAMPLE_STEP_PS = 0.5
OVERSHOOT_TOLERANCE = 0.05
_LATTICE_TOL_PS = 1e-6


@dataclass(frozen=True)
class GateSchedule:
    capture_time_ps: float
    hold_round_trips: int
    gate_window_ps: float
    repetition_period_ps: float
    round_trip_time_ps: float
    release_override_ps: float | None = None

    @property
    def release_time_ps(self) -> float:
        if self.release_override_ps is not None:
            return self.release_override_ps
        return self.capture_time_ps + self.hold_round_trips * self.round_trip_time_ps

    @property
    def storage_time_ps(self) -> float:
        return self.release_time_ps - self.capture_time_ps

    def gate_centers(self) -> list[float]:
        # a zero-length hold is a capture immediately undone: the switch stays in bar
        if abs(self.storage_time_ps) < _LATTICE_TOL_PS:
            return []
        return [self.capture_time_ps, self.release_time_ps]


def build_schedule(n_trips: int, buf: BufferModel, src: SourceModel,
                   gate_window_ps: float | None = None,
                   capture_time_ps: float | None = None) -> GateSchedule:
    """Capture at the pulse arrival, hold ``n_trips`` round trips, release."""
    if n_trips < 0:
        raise ConfigError("hold_round_trips must be >= 0")
    if n_trips > buf.max_round_trips:
        raise CapacityError(
            f"hold of {n_trips} round trips exceeds max_round_trips={buf.max_round_trips}"
        )
    window = buf.round_trip_time_ps / 2 if gate_window_ps is None else float(gate_window_ps)
    if n_trips * buf.round_trip_time_ps + window >= src.repetition_period_ps:
        raise CollisionError(
            f"release gate at {n_trips * buf.round_trip_time_ps:g} ps + window {window:g} ps "
            f"reaches the next pulse ({src.repetition_period_ps:g} ps)"
        )
    capture = src.pulse_epoch_ps if capture_time_ps is None else float(capture_time_ps)
    return GateSchedule(capture, int(n_trips), window, src.repetition_period_ps,
                        buf.round_trip_time_ps)


@dataclass(frozen=True)
class DriveWaveform:
    times_ps: np.ndarray
    volts: np.ndarray
    v_pi_volts: float
    sample_step_ps: float

    def __post_init__(self):
        if self.times_ps.shape != self.volts.shape or self.times_ps.size < 2:
            raise ContractError("waveform needs matching time and voltage arrays of length >= 2")

    def is_uniform(self) -> bool:
        steps = np.diff(self.times_ps)
        return bool(np.all(steps > 0) and np.allclose(steps, self.sample_step_ps, rtol=0, atol=1e-9))

    def amplitude_ok(self, tolerance: float = OVERSHOOT_TOLERANCE) -> bool:
        return bool(self.volts.min() >= -1e-12
                    and self.volts.max() <= self.v_pi_volts * (1 + tolerance))

    @property
    def span_ps(self) -> float:
        return float(self.times_ps[-1] + self.sample_step_ps - self.times_ps[0])

    def value_at(self, t_ps) -> np.ndarray:
        """Linear interpolation, treating the waveform as periodic over its span."""
        return np.interp(t_ps, self.times_ps, self.volts, period=self.span_ps)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["time_ps", "volts"])
            for t, v in zip(self.times_ps.tolist(), self.volts.tolist()):
                writer.writerow([repr(t), repr(v)])


def _periodic_distance(t, center, period):
    d = np.abs(np.asarray(t, dtype=np.float64) - center) % period
    return np.minimum(d, period - d)


def _gate_shape(t, sched: GateSchedule, edge_time_ps: float) -> np.ndarray:
    """Fraction of full drive (0..1) from all gates at times ``t``."""
    level = np.zeros_like(np.asarray(t, dtype=np.float64))
    half = sched.gate_window_ps / 2
    for center in sched.gate_centers():
        d = _periodic_distance(t, center, sched.repetition_period_ps)
        if edge_time_ps > 0:
            g = np.clip((half + edge_time_ps / 2 - d) / edge_time_ps, 0.0, 1.0)
        else:
            g = (d <= half).astype(np.float64)
        level = np.maximum(level, g)
    return level


def synthesize_waveform(sched: GateSchedule, buf: BufferModel, edge_time_ps: float,
                        sample_step_ps: float = DEFAULT_SAMPLE_STEP_PS) -> DriveWaveform:
    """Rectangular gates at capture and release with linear edges of ``edge_time_ps``.

    Each ramp is centred on the ideal edge, so a gate keeps its full amplitude
    for ``gate_window - edge_time``. ``edge_time_ps == 0`` gives the ideal
    rectangle.
    """
    if edge_time_ps < 0:
        raise WaveformError("edge_time_ps must be >= 0")
    if edge_time_ps > 0 and sample_step_ps > edge_time_ps / 4:
        raise WaveformError(
            f"sample step {sample_step_ps} ps is coarser than edge_time/4 = {edge_time_ps / 4} ps"
        )
    if edge_time_ps >= sched.gate_window_ps:
        raise WaveformError(
            f"edge time {edge_time_ps} ps >= gate window {sched.gate_window_ps} ps: "
            "the gate never reaches full amplitude"
        )
    n = int(round(sched.repetition_period_ps / sample_step_ps))
    if not math.isclose(n * sample_step_ps, sched.repetition_period_ps):
        raise WaveformError("sample step must divide the repetition period")
    times = np.arange(n, dtype=np.float64) * sample_step_ps
    volts = buf.v_pi_volts * _gate_shape(times, sched, edge_time_ps)
    return DriveWaveform(times, volts, buf.v_pi_volts, sample_step_ps)


def apply_bandwidth(wave: DriveWaveform, f3db_ghz: float) -> DriveWaveform:
    """Single-pole low-pass (time constant 1/(2 pi f3db)) on the sampled waveform.

    Discretised as y[n] = y[n-1] + a (x[n] - y[n-1]) with a = 1 - exp(-dt/tau),
    started at rest on the first sample so DC passes with unity gain.
    """
    if not f3db_ghz > 0:
        raise ContractError("f3db_ghz must be > 0")
    if not wave.is_uniform():
        raise ContractError("bandwidth filter needs a uniform, increasing time grid")
    tau_ps = 1e3 / (2 * math.pi * f3db_ghz)
    a = -math.expm1(-wave.sample_step_ps / tau_ps)
    x = wave.volts
    y, _ = lfilter([a], [1.0, a - 1.0], x, zi=[(1.0 - a) * x[0]])
    return DriveWaveform(wave.times_ps.copy(), y, wave.v_pi_volts, wave.sample_step_ps)


def read_s21_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Measured electro-optic response as columns ``freq_ghz, s21_db``."""
    freq, s21 = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["freq_ghz", "s21_db"]:
            raise ConfigError(f"{path}: expected columns freq_ghz,s21_db")
        for row in reader:
            freq.append(float(row["freq_ghz"]))
            s21.append(float(row["s21_db"]))
    freq, s21 = np.asarray(freq), np.asarray(s21)
    if freq.size < 2 or np.any(np.diff(freq) <= 0) or freq[0] < 0:
        raise ConfigError(f"{path}: frequencies must be >= 0 and strictly increasing")
    return freq, s21


def apply_s21(wave: DriveWaveform, freq_ghz, s21_db) -> DriveWaveform:
    """Shape the (periodic) waveform by a measured |S21|, zero phase.

    The response is normalised to its lowest-frequency value so DC passes
    unchanged, and held at its last value beyond the measured band. Being
    zero-phase it can ring; ``validate_program`` reports any overshoot.
    """
    if not wave.is_uniform():
        raise ContractError("S21 shaping needs a uniform, increasing time grid")
    freq_ghz = np.asarray(freq_ghz, dtype=np.float64)
    gain_db = np.asarray(s21_db, dtype=np.float64)
    gain_db = gain_db - gain_db[0]
    spectrum = np.fft.rfft(wave.volts)
    f = np.fft.rfftfreq(wave.volts.size, d=wave.sample_step_ps * 1e-3)  # GHz
    spectrum *= 10.0 ** (np.interp(f, freq_ghz, gain_db) / 20.0)
    volts = np.fft.irfft(spectrum, n=wave.volts.size)
    return DriveWaveform(wave.times_ps.copy(), volts, wave.v_pi_volts, wave.sample_step_ps)


def switch_transmission(v, v_pi: float, extinction_db: float | None = None):
    """(cross, bar) routing fractions of a push-pull Mach-Zehnder switch.

    The ideal response sin^2(pi v / 2 v_pi) is squeezed into [eps, 1 - eps]
    with eps = 10**(-extinction/10) (capped at 1/2); cross + bar == 1.
    """
    if not v_pi > 0:
        raise ValueError("v_pi must be > 0")
    ideal = np.sin(np.pi * np.asarray(v, dtype=np.float64) / (2 * v_pi)) ** 2
    if extinction_db is None or math.isinf(extinction_db):
        eps = 0.0
    else:
        eps = min(db_to_transmission(extinction_db), 0.5)
    cross = eps + (1 - 2 * eps) * ideal
    bar = 1.0 - cross
    if cross.ndim == 0:
        return float(cross), float(bar)
    return cross, bar


@dataclass(frozen=True)
class ControlProgram:
    """A gate schedule plus the electrical chain that drives the switch.

    ``edge_time_ps == 0`` and ``f3db_ghz is None`` describe ideal
    rectangular gating; anything else goes through a synthesised waveform.
    """

    schedule: GateSchedule
    v_pi_volts: float
    edge_time_ps: float = DEFAULT_EDGE_TIME_PS
    f3db_ghz: float | None = None
    sample_step_ps: float = DEFAULT_SAMPLE_STEP_PS

    @property
    def is_ideal(self) -> bool:
        return self.edge_time_ps == 0 and self.f3db_ghz is None

    @cached_property
    def waveform(self) -> DriveWaveform:
        buf_like = _VPi(self.v_pi_volts)
        wave = synthesize_waveform(self.schedule, buf_like, self.edge_time_ps, self.sample_step_ps)
        if self.f3db_ghz is not None:
            wave = apply_bandwidth(wave, self.f3db_ghz)
        return wave

    def voltage_at(self, t_ps) -> np.ndarray:
        t = np.asarray(t_ps, dtype=np.float64)
        if self.is_ideal:
            return self.v_pi_volts * _gate_shape(t, self.schedule, 0.0)
        return self.waveform.value_at(t)

    def cross_fractions(self, buf: BufferModel, entry_time_ps: float) -> np.ndarray:
        """Cross-state fraction at each switch encounter k = 0 .. max_round_trips."""
        times = entry_time_ps + np.arange(buf.max_round_trips + 1) * buf.round_trip_time_ps
        cross, _ = switch_transmission(self.voltage_at(times), self.v_pi_volts,
                                       buf.switch_extinction_db)
        return np.atleast_1d(np.asarray(cross, dtype=np.float64))

    def to_json(self) -> dict:
        doc = {
            "capture_time_ps": self.schedule.capture_time_ps,
            "hold_round_trips": self.schedule.hold_round_trips,
            "gate_window_ps": self.schedule.gate_window_ps,
            "edge_time_ps": self.edge_time_ps,
            "f3db_ghz": self.f3db_ghz,
        }
        if self.schedule.release_override_ps is not None:
            doc["release_time_ps"] = self.schedule.release_override_ps
        return doc

    @classmethod
    def from_json(cls, doc: dict, buf: BufferModel, src: SourceModel,
                  sample_step_ps: float = DEFAULT_SAMPLE_STEP_PS) -> ControlProgram:
        allowed = {"capture_time_ps", "hold_round_trips", "gate_window_ps", "edge_time_ps",
                   "f3db_ghz", "release_time_ps"}
        unknown = set(doc) - allowed
        if unknown:
            raise ConfigError(f"unknown control program keys: {sorted(unknown)}")
        sched = GateSchedule(
            capture_time_ps=float(doc["capture_time_ps"]),
            hold_round_trips=int(doc["hold_round_trips"]),
            gate_window_ps=float(doc["gate_window_ps"]),
            repetition_period_ps=src.repetition_period_ps,
            round_trip_time_ps=buf.round_trip_time_ps,
            release_override_ps=doc.get("release_time_ps"),
        )
        f3db = doc.get("f3db_ghz")
        return cls(sched, buf.v_pi_volts, float(doc.get("edge_time_ps", 0.0)),
                   None if f3db is None else float(f3db), sample_step_ps)


@dataclass(frozen=True)
class _VPi:
    v_pi_volts: float


def make_program(n_trips: int, buf: BufferModel, src: SourceModel, *,
                 edge_time_ps: float = DEFAULT_EDGE_TIME_PS, bandwidth: bool = True,
                 gate_window_ps: float | None = None, capture_time_ps: float | None = None,
                 sample_step_ps: float = DEFAULT_SAMPLE_STEP_PS) -> ControlProgram:
    """Schedule plus default electrical chain (ramped edges, EO bandwidth of ``buf``)."""
    sched = build_schedule(n_trips, buf, src, gate_window_ps, capture_time_ps)
    return ControlProgram(sched, buf.v_pi_volts, edge_time_ps,
                          buf.eo_bandwidth_ghz if bandwidth else None, sample_step_ps)


def ideal_program(n_trips: int, buf: BufferModel, src: SourceModel, **kwargs) -> ControlProgram:
    return make_program(n_trips, buf, src, edge_time_ps=0.0, bandwidth=False, **kwargs)


@dataclass(frozen=True)
class Violation:
    code: str
    message: str

    def __str__(self) -> str:
        return f"{self.code}: {self.message}"


def validate_program(program: ControlProgram, src: SourceModel, buf: BufferModel) -> list[Violation]:
    """All reasons the program cannot run with this source and buffer; empty if runnable."""
    sched = program.schedule
    report: list[Violation] = []

    def add(code, message):
        report.append(Violation(code, message))

    if not math.isclose(sched.repetition_period_ps, src.repetition_period_ps):
        add("period_mismatch", f"program period {sched.repetition_period_ps:g} ps != source period "
                               f"{src.repetition_period_ps:g} ps")
    if not math.isclose(sched.round_trip_time_ps, buf.round_trip_time_ps):
        add("round_trip_mismatch", "program round trip differs from the buffer's")
    if buf.round_trip_time_ps >= src.repetition_period_ps:
        add("round_trip_exceeds_period", "loop round trip is not shorter than the repetition period")
    if sched.hold_round_trips < 0:
        add("negative_hold", "hold_round_trips must be >= 0")
    if sched.hold_round_trips > buf.max_round_trips:
        add("capacity", f"hold of {sched.hold_round_trips} round trips exceeds max_round_trips="
                        f"{buf.max_round_trips}")
    if sched.gate_window_ps >= buf.round_trip_time_ps:
        add("window_exceeds_round_trip", f"gate window {sched.gate_window_ps:g} ps >= round trip "
                                         f"{buf.round_trip_time_ps:g} ps: the photon escapes on its "
                                         "first return")
    if sched.gate_window_ps <= 0:
        add("empty_window", "gate window must be > 0")
    if sched.storage_time_ps + sched.gate_window_ps >= src.repetition_period_ps:
        add("collision", "release gate overlaps the next pulse's capture")
    ratio = sched.storage_time_ps / buf.round_trip_time_ps
    if abs(ratio - round(ratio)) * buf.round_trip_time_ps > _LATTICE_TOL_PS or sched.storage_time_ps < 0:
        add("off_lattice_release", f"release {sched.storage_time_ps:g} ps after capture is not a "
                                   f"multiple of the {buf.round_trip_time_ps:g} ps round trip")
    elif round(ratio) != sched.hold_round_trips:
        add("hold_mismatch", "release time disagrees with hold_round_trips")
    offset = (sched.capture_time_ps - src.pulse_epoch_ps) % src.repetition_period_ps
    if min(offset, src.repetition_period_ps - offset) > _LATTICE_TOL_PS:
        add("capture_misaligned", f"capture gate at {sched.capture_time_ps:g} ps misses the pulse "
                                  f"arrival at {src.pulse_epoch_ps:g} ps")
    if program.edge_time_ps < 0:
        add("negative_edge", "edge_time_ps must be >= 0")
    elif program.edge_time_ps >= sched.gate_window_ps:
        add("edge_slower_than_window", f"edge time {program.edge_time_ps:g} ps >= gate window "
                                       f"{sched.gate_window_ps:g} ps")
    elif program.edge_time_ps > 0 and program.sample_step_ps > program.edge_time_ps / 4:
        add("grid_too_coarse", "waveform sample step exceeds edge_time/4")
    if program.f3db_ghz is not None and not program.f3db_ghz > 0:
        add("bandwidth", "f3db_ghz must be > 0")
    if not report and not program.is_ideal:
        wave = program.waveform
        if not wave.amplitude_ok():
            add("overshoot", "drive waveform leaves [0, v_pi * (1 + 5%)]")
    return report
