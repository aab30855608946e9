"""Source and buffer models, and Monte Carlo propagation to the chip output."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterator

import numpy as np

from . import kernels
from .errors import ConfigError, ContractError, PhysicsValidationError
from .rng import RngStream, Stream, stream_key

MAX_MEAN_PHOTON_NUMBER = 100.0
DEFAULT_CHUNK_PULSES = 1 << 20


def db_to_transmission(loss_db):
    """Power transmission ``10**(-loss_db/10)`` for a non-negative loss in dB."""
    arr = np.asarray(loss_db, dtype=np.float64)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise ValueError(f"loss must be finite and >= 0 dB, got {loss_db!r}")
    out = np.power(10.0, -arr / 10.0)
    return float(out) if out.ndim == 0 else out


class SourceKind(str, Enum):
    WEAK_COHERENT = "weak_coherent"
    SINGLE_FOCK = "single_fock"


@dataclass(frozen=True)
class SourceModel:
    kind: SourceKind = SourceKind.WEAK_COHERENT
    mean_photon_number: float = 0.1
    fock_n: int = 1
    repetition_period_ps: float = 10_000.0
    pulse_epoch_ps: float = 1_000.0
    wavelength_nm: float = 1550.0

    def __post_init__(self):
        object.__setattr__(self, "kind", SourceKind(self.kind))
        if not self.repetition_period_ps > 0:
            raise ConfigError("repetition_period_ps must be > 0")
        if not 0 <= self.mean_photon_number <= MAX_MEAN_PHOTON_NUMBER:
            raise ConfigError(
                f"mean_photon_number must lie in [0, {MAX_MEAN_PHOTON_NUMBER}]"
            )
        if self.fock_n < 0:
            raise ConfigError("fock_n must be >= 0")
        if not 0 <= self.pulse_epoch_ps < self.repetition_period_ps:
            raise ConfigError("pulse_epoch_ps must lie in [0, repetition_period_ps)")
        if self.kind is SourceKind.WEAK_COHERENT and self.mean_photon_number > 1:
            warnings.warn(
                f"mean photon number {self.mean_photon_number} is outside the weak (<= 1) regime",
                stacklevel=3,
            )

    @property
    def mean_photons(self) -> float:
        if self.kind is SourceKind.SINGLE_FOCK:
            return float(self.fock_n)
        return self.mean_photon_number

    def _kernel_args(self):
        code = kernels.KIND_FOCK if self.kind is SourceKind.SINGLE_FOCK else kernels.KIND_COHERENT
        return code, float(self.mean_photon_number), int(self.fock_n)


@dataclass(frozen=True)
class BufferModel:
    round_trip_time_ps: float = 100.0
    round_trip_loss_db: float = 0.74
    input_coupling_loss_db: float = 2.73
    output_coupling_loss_db: float = 2.73
    insertion_loss_budget_db: float = 6.2
    v_pi_volts: float = 3.5
    switch_extinction_db: float | None = None  # None: ideal switch
    eo_bandwidth_ghz: float = 40.0
    max_round_trips: int = 14

    def __post_init__(self):
        for name in ("round_trip_loss_db", "input_coupling_loss_db", "output_coupling_loss_db",
                     "insertion_loss_budget_db"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ConfigError(f"{name} must be finite and >= 0, got {value}")
        if not self.round_trip_time_ps > 0:
            raise ConfigError("round_trip_time_ps must be > 0")
        if not self.v_pi_volts > 0:
            raise ConfigError("v_pi_volts must be > 0")
        if not self.eo_bandwidth_ghz > 0:
            raise ConfigError("eo_bandwidth_ghz must be > 0")
        if self.switch_extinction_db is not None and not self.switch_extinction_db >= 0:
            raise ConfigError("switch_extinction_db must be >= 0 (or null for an ideal switch)")
        if self.max_round_trips < 0:
            raise ConfigError("max_round_trips must be >= 0")

    @property
    def input_transmission(self) -> float:
        return db_to_transmission(self.input_coupling_loss_db)

    @property
    def round_trip_transmission(self) -> float:
        return db_to_transmission(self.round_trip_loss_db)

    @property
    def output_transmission(self) -> float:
        return db_to_transmission(self.output_coupling_loss_db)

    @property
    def switch_leakage(self) -> float:
        """Minimum routing fraction of either switch port, capped at 1/2."""
        if self.switch_extinction_db is None:
            return 0.0
        return min(db_to_transmission(self.switch_extinction_db), 0.5)

    @property
    def switch_transit_loss_db(self) -> float:
        """Part of the insertion-loss budget not taken by the two couplers."""
        return self.insertion_loss_budget_db - self.input_coupling_loss_db - self.output_coupling_loss_db

    def budget_violations(self) -> list[str]:
        coupling = self.input_coupling_loss_db + self.output_coupling_loss_db
        if coupling > self.insertion_loss_budget_db + 1e-12:
            return [
                f"insertion-loss budget exceeded: coupling losses sum to {coupling:g} dB "
                f"against a {self.insertion_loss_budget_db:g} dB budget"
            ]
        return []

    def source_violations(self, src: SourceModel) -> list[str]:
        issues = []
        if self.round_trip_time_ps >= src.repetition_period_ps:
            issues.append(
                f"round trip {self.round_trip_time_ps:g} ps is not shorter than the "
                f"repetition period {src.repetition_period_ps:g} ps"
            )
        return issues


class PathTag(str, Enum):
    STORED = "Stored"
    LEAKED = "Leaked"
    DIRECT_PASS = "DirectPass"


_TAG_FROM_CODE = {
    kernels.STORED: PathTag.STORED,
    kernels.LEAKED: PathTag.LEAKED,
    kernels.DIRECT_PASS: PathTag.DIRECT_PASS,
}


@dataclass(frozen=True)
class PhotonRecord:
    origin_pulse_index: int
    exit_time_ps: float
    round_trips_completed: int
    path_tag: PathTag
    photon_index: int = 0


@dataclass(frozen=True)
class LostPhoton:
    overflow: bool = False


@dataclass
class PhotonRecords:
    """Column store for a stream of exit records, ordered by pulse then photon."""

    pulse_index: np.ndarray
    photon_index: np.ndarray
    exit_time_ps: np.ndarray
    round_trips: np.ndarray
    path_tag: np.ndarray
    n_lost: int = 0
    n_overflow: int = 0

    @classmethod
    def empty(cls) -> PhotonRecords:
        return cls(
            np.empty(0, np.int64), np.empty(0, np.int32), np.empty(0, np.float64),
            np.empty(0, np.int16), np.empty(0, np.int8),
        )

    @classmethod
    def concat(cls, parts) -> PhotonRecords:
        parts = list(parts)
        if not parts:
            return cls.empty()
        return cls(
            np.concatenate([p.pulse_index for p in parts]),
            np.concatenate([p.photon_index for p in parts]),
            np.concatenate([p.exit_time_ps for p in parts]),
            np.concatenate([p.round_trips for p in parts]),
            np.concatenate([p.path_tag for p in parts]),
            n_lost=sum(p.n_lost for p in parts),
            n_overflow=sum(p.n_overflow for p in parts),
        )

    def __len__(self) -> int:
        return int(self.pulse_index.shape[0])

    def __iter__(self) -> Iterator[PhotonRecord]:
        for i in range(len(self)):
            yield PhotonRecord(
                int(self.pulse_index[i]), float(self.exit_time_ps[i]), int(self.round_trips[i]),
                _TAG_FROM_CODE[int(self.path_tag[i])], int(self.photon_index[i]),
            )

    def take(self, index) -> PhotonRecords:
        return PhotonRecords(
            self.pulse_index[index], self.photon_index[index], self.exit_time_ps[index],
            self.round_trips[index], self.path_tag[index],
        )

    def exits_per_pulse(self, n_pulses: int) -> np.ndarray:
        return np.bincount(self.pulse_index, minlength=n_pulses)

    def write_csv(self, path: str | Path) -> None:
        """Debug dump: pulse_index, exit_time_ps, round_trips, path_tag."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["pulse_index", "exit_time_ps", "round_trips", "path_tag"])
            for rec in self:
                writer.writerow([rec.origin_pulse_index, repr(rec.exit_time_ps),
                                 rec.round_trips_completed, rec.path_tag.value])


def sample_pulse_photons(src: SourceModel, pulse_index: int, rng: RngStream) -> int:
    """Photon number of one pulse: Poisson(mu) for coherent input, fock_n for Fock."""
    kind, mu, fock_n = src._kernel_args()
    return int(kernels.photon_numbers(rng.key, int(pulse_index), 1, kind, mu, fock_n)[0])


def _check_entry(program, entry_time_ps: float) -> None:
    span = program.schedule.repetition_period_ps
    if not 0 <= entry_time_ps < span:
        raise ContractError(
            f"entry time {entry_time_ps} ps lies outside the program span [0, {span})"
        )


def propagate_photon(buf: BufferModel, program, entry_time_ps: float, rng: RngStream,
                     pulse_index: int = 0, photon_index: int = 0) -> PhotonRecord | LostPhoton:
    """Follow one photon entering the chip at ``entry_time_ps`` within the program period.

    Routing at each switch encounter uses the drive voltage at the photon's
    arrival time; losses are Bernoulli survivals per coupler and per loop.
    """
    _check_entry(program, entry_time_ps)
    cross = program.cross_fractions(buf, entry_time_ps)
    pulse, photon, trips, tag = _propagate_one(buf, program, cross, rng.key, pulse_index, photon_index)
    if tag < 0:
        return LostPhoton(overflow=tag == kernels.OVERFLOW)
    return PhotonRecord(pulse, entry_time_ps + trips * buf.round_trip_time_ps, trips,
                        _TAG_FROM_CODE[tag], photon)


def _propagate_one(buf, program, cross, key, pulse_index, photon_index):
    counts = np.zeros(1, dtype=np.int32)
    counts[0] = photon_index + 1
    pulse, photon, trips, tag = kernels.propagate(
        key, np.int64(pulse_index), counts, cross, buf.input_transmission,
        buf.round_trip_transmission, buf.output_transmission, program.schedule.hold_round_trips,
    )
    return int(pulse[-1]), int(photon[-1]), int(trips[-1]), int(tag[-1])


@dataclass
class Propagator:
    """Chunk-level engine shared by ``run_experiment`` and the pipeline."""

    src: SourceModel
    buf: BufferModel
    program: object
    seed: int
    backend: dict = field(default=None, repr=False)

    def __post_init__(self):
        if self.backend is None:
            self.backend = {
                "photon_numbers": kernels.photon_numbers,
                "propagate": kernels.propagate,
            }
        self.cross = np.ascontiguousarray(self.program.cross_fractions(self.buf, self.src.pulse_epoch_ps))
        self.source_key = stream_key(self.seed, Stream.SOURCE)
        self.loop_key = stream_key(self.seed, Stream.LOOP)

    def run_chunk(self, start: int, count: int) -> PhotonRecords:
        kind, mu, fock_n = self.src._kernel_args()
        counts = self.backend["photon_numbers"](self.source_key, np.int64(start), count, kind, mu, fock_n)
        pulse, photon, trips, tag = self.backend["propagate"](
            self.loop_key, np.int64(start), counts, self.cross,
            self.buf.input_transmission, self.buf.round_trip_transmission,
            self.buf.output_transmission, self.program.schedule.hold_round_trips,
        )
        out = tag >= 0
        exit_time = (self.src.pulse_epoch_ps + pulse[out] * self.src.repetition_period_ps
                     + trips[out] * self.buf.round_trip_time_ps)
        return PhotonRecords(
            pulse[out], photon[out], exit_time.astype(np.float64), trips[out], tag[out],
            n_lost=int(np.count_nonzero(tag == kernels.LOST)),
            n_overflow=int(np.count_nonzero(tag == kernels.OVERFLOW)),
        )


def check_run(src: SourceModel, buf: BufferModel, program, n_pulses: int) -> None:
    if n_pulses < 1:
        raise ConfigError("n_pulses must be >= 1")
    period = program.schedule.repetition_period_ps
    if not math.isclose(period, src.repetition_period_ps):
        raise ConfigError(
            f"program period {period} ps does not match source period {src.repetition_period_ps} ps"
        )
    issues = buf.source_violations(src)
    if issues:
        raise PhysicsValidationError("; ".join(issues))


def run_experiment(src: SourceModel, buf: BufferModel, program, n_pulses: int, seed: int,
                   chunk_pulses: int = DEFAULT_CHUNK_PULSES) -> PhotonRecords:
    """Simulate ``n_pulses`` pulses and return every photon reaching the output port.

    Each pulse draws from its own counter-keyed stream, so the result does not
    depend on ``chunk_pulses`` or on the order chunks are evaluated in.
    """
    check_run(src, buf, program, n_pulses)
    engine = Propagator(src, buf, program, seed)
    parts = [engine.run_chunk(start, min(chunk_pulses, n_pulses - start))
             for start in range(0, n_pulses, chunk_pulses)]
    return PhotonRecords.concat(parts)
