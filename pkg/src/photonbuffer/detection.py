"""Measurement back end: HBT beamsplitter, SNSPD clicks and time-tag histograms."""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ConfigError
from .optics import PhotonRecords
from .rng import RngStream, Stream, stream_key

PS_PER_S = 1e12
_DARK_BLOCK_PS = 1e7
_MAX_DARK_PER_BLOCK = 20.0


class Channel(IntEnum):
    A = 0
    B = 1


_CLICK_STREAM = {Channel.A: Stream.DETECT_A, Channel.B: Stream.DETECT_B}
_DARK_STREAM = {Channel.A: Stream.DARK_A, Channel.B: Stream.DARK_B}


@dataclass(frozen=True)
class DetectorModel:
    efficiency: float = 0.8
    jitter_sigma_ps: float = 15.0
    dark_rate_hz: float = 100.0
    dead_time_ps: float = 50_000.0

    def __post_init__(self):
        if not 0 <= self.efficiency <= 1:
            raise ConfigError("efficiency must lie in [0, 1]")
        for name in ("jitter_sigma_ps", "dark_rate_hz", "dead_time_ps"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ConfigError(f"{name} must be finite and >= 0")

    def jitter_warnings(self, round_trip_time_ps: float) -> list[str]:
        if self.jitter_sigma_ps > round_trip_time_ps / 3:
            return [f"jitter sigma {self.jitter_sigma_ps:g} ps exceeds a third of the "
                    f"{round_trip_time_ps:g} ps round trip; storage peaks will merge"]
        return []

    @property
    def dark_block_ps(self) -> float:
        rate = self.dark_rate_hz / PS_PER_S
        if rate * _DARK_BLOCK_PS <= _MAX_DARK_PER_BLOCK:
            return _DARK_BLOCK_PS
        return _MAX_DARK_PER_BLOCK / rate


@dataclass
class DetectionEvents:
    channel: np.ndarray  # int8, Channel values
    time_ps: np.ndarray

    @classmethod
    def empty(cls) -> DetectionEvents:
        return cls(np.empty(0, np.int8), np.empty(0, np.float64))

    @classmethod
    def merge(cls, parts) -> DetectionEvents:
        """Time-ordered union; ties are broken by channel."""
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty()
        ch = np.concatenate([p.channel for p in parts])
        t = np.concatenate([p.time_ps for p in parts])
        order = np.lexsort((ch, t))
        return cls(ch[order], t[order])

    def __len__(self) -> int:
        return int(self.time_ps.shape[0])

    def on(self, channel: Channel) -> np.ndarray:
        return self.time_ps[self.channel == int(channel)]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["channel", "time_ps"])
            for c, t in zip(self.channel.tolist(), self.time_ps.tolist()):
                writer.writerow([Channel(c).name, repr(t)])

    @classmethod
    def read_csv(cls, path: str | Path) -> DetectionEvents:
        channels, times = [], []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != ["channel", "time_ps"]:
                raise ConfigError(f"{path}: expected columns channel,time_ps")
            for row in reader:
                channels.append(int(Channel[row["channel"]]))
                times.append(float(row["time_ps"]))
        return cls(np.asarray(channels, dtype=np.int8), np.asarray(times, dtype=np.float64))


def beamsplit(records: PhotonRecords, ratio: float, rng: RngStream) -> tuple[PhotonRecords, PhotonRecords]:
    """Route each photon to A with probability ``ratio``, else to B."""
    if not 0 <= ratio <= 1:
        raise ConfigError("splitter ratio must lie in [0, 1]")
    to_a = kernels.split(rng.key, records.pulse_index, records.photon_index, float(ratio))
    return records.take(to_a), records.take(~to_a)


class DetectorChannel:
    """One SNSPD channel fed in time-ordered batches.

    Clicks and dark counts are keyed by photon identity and dark block index,
    so the raw event set does not depend on batching; the dead-time state is
    carried across batches.
    """

    def __init__(self, det: DetectorModel, seed: int, channel: Channel = Channel.A, backend=None):
        self.det = det
        self.channel = Channel(channel)
        self.click_key = stream_key(seed, _CLICK_STREAM[self.channel])
        self.dark_key = stream_key(seed, _DARK_STREAM[self.channel])
        self.last_kept = -math.inf
        self._click = kernels.click if backend is None else backend["click"]
        self._dark = kernels.dark_counts if backend is None else backend["dark_counts"]
        self._dead = kernels.dead_time if backend is None else backend["dead_time"]

    def raw_events(self, photons: PhotonRecords, t_start_ps: float, t_end_ps: float) -> np.ndarray:
        """Sorted click and dark-count times for one span, before dead time."""
        det = self.det
        times = np.empty(0, dtype=np.float64)
        if len(photons) and det.efficiency > 0:
            mask, jittered = self._click(self.click_key, photons.pulse_index, photons.photon_index,
                                         photons.exit_time_ps, det.efficiency, det.jitter_sigma_ps)
            times = jittered[mask]
        if det.dark_rate_hz > 0 and t_end_ps > t_start_ps:
            block = det.dark_block_ps
            first = int(math.floor(t_start_ps / block))
            last = int(math.ceil(t_end_ps / block))
            lam = det.dark_rate_hz / PS_PER_S * block
            dark = self._dark(self.dark_key, np.int64(first), last - first, block, lam)
            dark = dark[(dark >= t_start_ps) & (dark < t_end_ps)]
            times = np.concatenate((times, dark))
        times = times[times >= 0]
        return np.sort(times, kind="stable")

    def apply_dead_time(self, sorted_times: np.ndarray) -> np.ndarray:
        if self.det.dead_time_ps <= 0:
            return sorted_times
        keep, self.last_kept = self._dead(sorted_times, float(self.det.dead_time_ps), self.last_kept)
        return sorted_times[keep]


def detect(photons: PhotonRecords, det: DetectorModel, acquisition_span_ps: float, seed: int,
           channel: Channel = Channel.A) -> np.ndarray:
    """Sorted click times of one channel over ``[0, acquisition_span_ps)``.

    Efficiency thinning, Gaussian jitter, homogeneous dark counts, then
    non-paralysable dead time on the time-sorted stream.
    """
    ch = DetectorChannel(det, seed, channel)
    return ch.apply_dead_time(ch.raw_events(photons, 0.0, acquisition_span_ps))


@dataclass
class Histogram:
    bin_width_ps: float
    t0_ps: float
    counts: np.ndarray
    n_triggers: int

    @property
    def n_bins(self) -> int:
        return int(self.counts.shape[0])

    @property
    def t1_ps(self) -> float:
        return self.t0_ps + self.n_bins * self.bin_width_ps

    @property
    def bin_starts(self) -> np.ndarray:
        return self.t0_ps + np.arange(self.n_bins) * self.bin_width_ps

    @property
    def bin_centers(self) -> np.ndarray:
        return self.bin_starts + self.bin_width_ps / 2

    def __add__(self, other: Histogram) -> Histogram:
        if (self.bin_width_ps, self.t0_ps, self.n_bins) != (other.bin_width_ps, other.t0_ps, other.n_bins):
            raise ConfigError("cannot merge histograms on different bin grids")
        return Histogram(self.bin_width_ps, self.t0_ps, self.counts + other.counts,
                         self.n_triggers + other.n_triggers)

    def header(self) -> dict:
        return {"bin_width_ps": self.bin_width_ps, "n_triggers": int(self.n_triggers),
                "t0_ps": self.t0_ps}

    def write_csv(self, path: str | Path, header_path: str | Path | None = None) -> list[Path]:
        """CSV of (bin_start_ps, count) plus a JSON header next to it."""
        path = Path(path)
        header_path = Path(header_path) if header_path else header_path_for(path)
        integral = np.issubdtype(self.counts.dtype, np.integer)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["bin_start_ps", "count"])
            for start, count in zip(self.bin_starts.tolist(), self.counts.tolist()):
                writer.writerow([repr(start), int(count) if integral else repr(count)])
        header_path.write_text(json.dumps(self.header(), sort_keys=True, indent=2) + "\n")
        return [path, header_path]

    def write_json(self, path: str | Path) -> list[Path]:
        doc = dict(self.header())
        doc["bin_start_ps"] = self.bin_starts.tolist()
        doc["counts"] = self.counts.tolist()
        Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")
        return [Path(path)]

    @classmethod
    def read(cls, path: str | Path) -> Histogram:
        path = Path(path)
        try:
            if path.suffix == ".json":
                doc = json.loads(path.read_text())
                return cls(float(doc["bin_width_ps"]), float(doc["t0_ps"]),
                           _as_counts(doc["counts"]), int(doc["n_triggers"]))
            header = json.loads(header_path_for(path).read_text())
            counts = []
            with open(path, newline="") as fh:
                reader = csv.DictReader(fh)
                if reader.fieldnames != ["bin_start_ps", "count"]:
                    raise ConfigError(f"{path}: expected columns bin_start_ps,count")
                for row in reader:
                    counts.append(float(row["count"]))
            return cls(float(header["bin_width_ps"]), float(header["t0_ps"]),
                       _as_counts(counts), int(header["n_triggers"]))
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"{path}: not a histogram file ({exc!r})") from None


def _as_counts(values) -> np.ndarray:
    counts = np.asarray(values, dtype=np.float64)
    if np.all(counts == np.round(counts)):
        return counts.astype(np.int64)
    return counts


def header_path_for(csv_path: str | Path) -> Path:
    """``hist.csv`` -> ``hist_header.json``."""
    csv_path = Path(csv_path)
    return csv_path.with_name(csv_path.stem + "_header.json")


def _check_window(trigger_period_ps: float, bin_width_ps: float, window) -> tuple[float, float, int]:
    t0, t1 = float(window[0]), float(window[1])
    if not trigger_period_ps > 0:
        raise ConfigError("trigger period must be > 0")
    if not bin_width_ps > 0:
        raise ConfigError("bin width must be > 0")
    if not t1 > t0:
        raise ConfigError("histogram window must have t1 > t0")
    if t1 - t0 > trigger_period_ps + 1e-9:
        raise ConfigError("histogram window is longer than the trigger period")
    n_bins = int(round((t1 - t0) / bin_width_ps))
    if not math.isclose(n_bins * bin_width_ps, t1 - t0, rel_tol=0, abs_tol=1e-9):
        raise ConfigError(f"bin width {bin_width_ps} ps does not divide window [{t0}, {t1})")
    return t0, t1, n_bins


def fold_into_bins(times_ps: np.ndarray, trigger_period_ps: float, bin_width_ps: float,
                   t0_ps: float, n_bins: int) -> np.ndarray:
    """Bin index of each event folded onto the trigger period, -1 when outside the window."""
    offset = np.mod(np.asarray(times_ps, dtype=np.float64) - t0_ps, trigger_period_ps)
    idx = np.floor(offset / bin_width_ps).astype(np.int64)
    idx[(idx < 0) | (idx >= n_bins)] = -1
    return idx


def build_histogram(events, trigger_period_ps: float, bin_width_ps: float, window,
                    n_triggers: int | None = None) -> Histogram:
    """Fold event times modulo the trigger period and bin them inside ``window``.

    ``events`` may be a time array or a ``DetectionEvents`` (all channels).
    ``n_triggers`` defaults to the number of periods the events span.
    """
    times = events.time_ps if isinstance(events, DetectionEvents) else np.asarray(events, np.float64)
    t0, _, n_bins = _check_window(trigger_period_ps, bin_width_ps, window)
    idx = fold_into_bins(times, trigger_period_ps, bin_width_ps, t0, n_bins)
    counts = np.bincount(idx[idx >= 0], minlength=n_bins).astype(np.int64)
    if n_triggers is None:
        n_triggers = int(times.max() // trigger_period_ps) + 1 if times.size else 0
    return Histogram(float(bin_width_ps), t0, counts, int(n_triggers))


class HistogramAccumulator:
    """Adds folded events batch by batch; merges by elementwise addition."""

    def __init__(self, trigger_period_ps: float, bin_width_ps: float, window):
        self.period = float(trigger_period_ps)
        self.bin_width = float(bin_width_ps)
        self.t0, _, self.n_bins = _check_window(trigger_period_ps, bin_width_ps, window)
        self.counts = np.zeros(self.n_bins, dtype=np.int64)

    def add(self, times_ps: np.ndarray) -> None:
        idx = fold_into_bins(times_ps, self.period, self.bin_width, self.t0, self.n_bins)
        self.counts += np.bincount(idx[idx >= 0], minlength=self.n_bins)

    def histogram(self, n_triggers: int) -> Histogram:
        return Histogram(self.bin_width, self.t0, self.counts.copy(), int(n_triggers))


def warn_jitter(det: DetectorModel, round_trip_time_ps: float) -> None:
    for message in det.jitter_warnings(round_trip_time_ps):
        warnings.warn(message, stacklevel=2)
