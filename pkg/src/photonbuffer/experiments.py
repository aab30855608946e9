"""Batch runs behind the command line: simulate, storage sweeps and re-analysis.

Every run writes its outputs first and then a ``manifest.json`` holding the
resolved config, tool version, timestamps and a sha256 per output file. The
manifest is written through a temporary file and renamed, so its presence
means the run finished.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import re
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path

import numpy as np

from . import _accel
from .analysis import (
    G2Accumulator,
    PeakSeries,
    fit_loss,
    peak_rates,
    storage_gate,
)
from .config import ExperimentConfig, validate_config
from .control import Violation
from .detection import Channel, DetectionEvents, Histogram
from .errors import AnalysisError, ConfigError, PhysicsValidationError
from .pipeline import DEFAULT_CHUNK_PULSES, SimulationResult, simulate

SEED_DERIVATION = ("SplitMix64 counter streams: each draw is keyed by "
                   "(master_seed, stream, pulse or dark block index, photon index, slot)")
FORMATS = ("csv", "json")


def tool_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:  # pragma: no cover - running from a checkout
        return "0+unknown"


def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    now = datetime.fromtimestamp(int(epoch), timezone.utc) if epoch else datetime.now(timezone.utc)
    return now.isoformat(timespec="seconds").replace("+00:00", "Z")


def sha256_of(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def write_json_atomic(path: str | Path, doc: dict) -> Path:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(json.dumps(doc, sort_keys=True, indent=2) + "\n")
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path


def _write_json(path: Path, doc) -> Path:
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    return path


@dataclass
class RunManifest:
    command: str
    config: ExperimentConfig
    started_utc: str
    outputs: list[Path] = field(default_factory=list)
    results: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)

    def to_json(self, out_dir: Path) -> dict:
        cfg = self.config.resolve()
        return {
            "tool": "photonbuffer",
            "version": tool_version(),
            "command": self.command,
            "started_utc": self.started_utc,
            "finished_utc": _timestamp(),
            "master_seed": cfg.master_seed,
            "seed_derivation": SEED_DERIVATION,
            "backend": _accel.backend_name(),
            "config": cfg.to_dict(),
            "config_sha256": hashlib.sha256(cfg.canonical_json().encode()).hexdigest(),
            "outputs": {p.relative_to(out_dir).as_posix(): sha256_of(p) for p in self.outputs},
            "results": self.results,
            "errors": self.errors,
        }

    def write(self, out_dir: Path) -> Path:
        return write_json_atomic(out_dir / "manifest.json", self.to_json(out_dir))


def verify_manifest(path: str | Path) -> list[str]:
    """Names of outputs whose checksum no longer matches (or that are missing)."""
    path = Path(path)
    doc = json.loads(path.read_text())
    bad = []
    for name, digest in doc["outputs"].items():
        target = path.parent / name
        if not target.is_file() or sha256_of(target) != digest:
            bad.append(name)
    return bad


# -- validation -----------------------------------------------------------------


def require_valid(cfg: ExperimentConfig, holds=None) -> list[str]:
    """Raise ``PhysicsValidationError`` listing every violation; return warnings."""
    violations, notes = validate_config(cfg, holds)
    if violations:
        raise PhysicsValidationError("\n".join(str(v) for v in violations))
    return notes


def validation_report(cfg: ExperimentConfig) -> tuple[list[Violation], list[str]]:
    holds = sorted({cfg.control.hold_round_trips, *cfg.analysis.sweep_k})
    violations, notes = validate_config(cfg)
    # sweep values are checked too, but only reported when the hold itself is fine
    extra, _ = validate_config(cfg, holds)
    seen = {(v.code, v.message) for v in violations}
    for v in extra:
        if v.code == "capacity" and (v.code, v.message) not in seen:
            violations.append(Violation("sweep_k", v.message))
    return violations, notes


# -- one simulation ---------------------------------------------------------------


def run_config(cfg: ExperimentConfig, hold: int | None = None, *, jobs: int = 1,
               keep_records: bool = False, keep_events: bool = False,
               chunk_pulses: int = DEFAULT_CHUNK_PULSES) -> SimulationResult:
    cfg = cfg.resolve()
    n = cfg.control.hold_round_trips if hold is None else hold
    return simulate(
        cfg.source_model(), cfg.buffer_model(), cfg.program(hold), cfg.detector_model(),
        cfg.n_pulses, cfg.master_seed,
        splitter_ratio=cfg.detector.splitter_ratio,
        bin_width_ps=cfg.histogram.bin_width_ps,
        window=cfg.window,
        g2_gate=storage_gate(cfg.control.capture_time_ps, n, cfg.buffer.round_trip_time_ps,
                             cfg.analysis.gate_half_width_ps),
        keep_records=keep_records, keep_events=keep_events,
        chunk_pulses=chunk_pulses, jobs=jobs,
    )


def _dead_time(cfg: ExperimentConfig) -> float:
    return cfg.detector.dead_time_ps if cfg.analysis.dead_time_correction else 0.0


def storage_peak(cfg: ExperimentConfig, result: SimulationResult, k: int) -> tuple[int, float]:
    """Raw counts and dead-time corrected rate of the peak after ``k`` round trips.

    Dead time acts per detector, so each channel is corrected on its own
    histogram and the rates are summed.
    """
    cfg = cfg.resolve()
    center = cfg.control.capture_time_ps + k * cfg.buffer.round_trip_time_ps
    raw, rate = 0, 0.0
    for h in result.channel_histograms.values():
        if not h.counts.sum():
            continue
        r, q = peak_rates(h, [center], cfg.analysis.gate_half_width_ps,
                          cfg.source.repetition_period_ps, _dead_time(cfg))
        raw += int(r[0])
        rate += float(q[0])
    return raw, rate


def _write_histogram(h: Histogram, base: Path, fmt: str) -> list[Path]:
    if fmt == "json":
        return h.write_json(base.with_suffix(".json"))
    return h.write_csv(base.with_suffix(".csv"))


def _g2_doc(result: SimulationResult) -> dict:
    if result.g2 is not None:
        return result.g2.to_json()
    return {"error": result.g2_error or "no beamsplitter configured; g2 not measured"}


def cmd_simulate(cfg: ExperimentConfig, out_dir: str | Path, *, fmt: str = "csv",
                 jobs: int = 1) -> Path:
    """Full chain for the configured hold; returns the manifest path."""
    started = _timestamp()
    cfg = cfg.resolve()
    notes = require_valid(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = run_config(cfg, jobs=jobs, keep_records=True, keep_events=True)
    program = cfg.program()

    outputs = _write_histogram(result.histogram, out / "histogram", fmt)
    for name, h in result.channel_histograms.items():
        outputs += _write_histogram(h, out / f"histogram_{name}", fmt)
    events_path = out / "events.csv"
    result.events.write_csv(events_path)
    records_path = out / "records.csv"
    result.records.write_csv(records_path)
    waveform_path = out / "waveform.csv"
    program.waveform.write_csv(waveform_path)
    outputs += [events_path, records_path, waveform_path,
                _write_json(out / "control_program.json", program.to_json()),
                _write_json(out / "g2.json", _g2_doc(result))]

    manifest = RunManifest("simulate", cfg, started, outputs)
    manifest.results = {"tally": result.tally.to_json(), "g2": _g2_doc(result), "warnings": notes}
    return manifest.write(out)


# -- storage sweep ----------------------------------------------------------------


def parse_k_list(text: str) -> list[int]:
    """``"1..5"``, ``"1,2,7"`` or a mix such as ``"0,3..5"``."""
    ks: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        m = re.fullmatch(r"(\d+)\s*\.\.\s*(\d+)", part)
        try:
            if m:
                lo, hi = int(m.group(1)), int(m.group(2))
                if hi < lo:
                    raise ConfigError(f"empty range {part!r}")
                ks.extend(range(lo, hi + 1))
            else:
                ks.append(int(part))
        except ValueError:
            raise ConfigError(f"bad k list entry {part!r}") from None
    if not ks:
        raise ConfigError("k list is empty")
    if any(k < 0 for k in ks):
        raise ConfigError("k values must be >= 0")
    if len(set(ks)) != len(ks):
        raise ConfigError("k list has duplicates")
    return sorted(ks)


@dataclass
class SweepResult:
    ks: list[int]
    histograms: dict
    peaks: PeakSeries
    loss_fit: object | None
    loss_fit_error: str | None
    g2_rows: list[dict]


def sweep(cfg: ExperimentConfig, ks, *, jobs: int = 1) -> tuple[SweepResult, dict]:
    """One simulation per storage time; validates every k before running any."""
    cfg = cfg.resolve()
    ks = sorted(ks)
    require_valid(cfg, ks)
    histograms, raw, rate, g2_rows, tallies = {}, [], [], [], {}
    for k in ks:
        result = run_config(cfg, k, jobs=jobs)
        histograms[k] = result
        r, q = storage_peak(cfg, result, k)
        raw.append(r)
        rate.append(q)
        row = {"k": k, "storage_time_ps": k * cfg.buffer.round_trip_time_ps}
        if result.g2 is not None:
            row.update(result.g2.to_json())
        else:
            row["error"] = result.g2_error or "no beamsplitter configured"
        g2_rows.append(row)
        tallies[str(k)] = result.tally.to_json()
    try:
        peaks = PeakSeries.from_rates(ks, raw, rate, cfg.analysis.normalization)
    except AnalysisError as exc:
        raise AnalysisError(f"storage sweep: {exc}") from None
    fit, fit_error = None, None
    try:
        fit = fit_loss(peaks, cfg.analysis.fit_k_min, cfg.analysis.weighted_fit)
    except AnalysisError as exc:
        fit_error = str(exc)
    return SweepResult(ks, histograms, peaks, fit, fit_error, g2_rows), tallies


G2_COLUMNS = ["k", "storage_time_ps", "g2", "stderr", "n_coincidences", "n_a", "n_b", "n_triggers"]


def _write_g2_table(path: Path, rows: list[dict]) -> Path:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(G2_COLUMNS)
        for row in rows:
            writer.writerow([repr(row[c]) if isinstance(row.get(c), float) else row.get(c, "")
                             for c in G2_COLUMNS])
    return path


def _write_normalized(path: Path, sweep_result: SweepResult) -> Path:
    """Merged histograms of every k on one grid, scaled so the tallest bin is 1."""
    hists = [sweep_result.histograms[k].histogram for k in sweep_result.ks]
    scale = max(float(h.counts.max()) for h in hists) or 1.0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["bin_start_ps"] + [f"k{k}" for k in sweep_result.ks])
        columns = [h.counts / scale for h in hists]
        for i, start in enumerate(hists[0].bin_starts.tolist()):
            writer.writerow([repr(start)] + [repr(float(c[i])) for c in columns])
    return path


def cmd_sweep_storage(cfg: ExperimentConfig, ks, out_dir: str | Path, *, fmt: str = "csv",
                      jobs: int = 1) -> Path:
    started = _timestamp()
    cfg = cfg.resolve()
    res, tallies = sweep(cfg, ks, jobs=jobs)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    for k in res.ks:
        outputs += _write_histogram(res.histograms[k].histogram, out / f"fig2a_hist_k{k}", fmt)
    outputs.append(_write_normalized(out / "fig2a_normalized.csv", res))
    peaks_path = out / "fig2b_peaks.csv"
    res.peaks.write_csv(peaks_path)
    outputs.append(peaks_path)
    manifest = RunManifest("sweep-storage", cfg, started)
    if res.loss_fit is not None:
        doc = res.loss_fit.to_json()
        doc["k_min"] = cfg.analysis.fit_k_min
        doc["normalization"] = cfg.analysis.normalization.value
        doc["dead_time_corrected"] = bool(_dead_time(cfg))
        outputs.append(_write_json(out / "fig2b_lossfit.json", doc))
        manifest.results["loss_fit"] = doc
    else:
        manifest.errors["loss_fit"] = res.loss_fit_error
    outputs.append(_write_g2_table(out / "fig2c_g2.csv", res.g2_rows))
    manifest.outputs = outputs
    manifest.results.update({"k": res.ks, "g2": res.g2_rows, "tally": tallies,
                             "g2_error_model": "poisson-propagation"})
    return manifest.write(out)


# -- re-analysis of existing files --------------------------------------------------


def reanalyze_g2(cfg: ExperimentConfig, events_path: str | Path, hold: int | None = None,
                 n_triggers: int | None = None):
    cfg = cfg.resolve()
    events = DetectionEvents.read_csv(events_path)
    n = cfg.control.hold_round_trips if hold is None else hold
    gate = storage_gate(cfg.control.capture_time_ps, n, cfg.buffer.round_trip_time_ps,
                        cfg.analysis.gate_half_width_ps)
    acc = G2Accumulator(cfg.source.repetition_period_ps, gate)
    acc.add(events.on(Channel.A), events.on(Channel.B))
    return acc.result(cfg.n_pulses if n_triggers is None else n_triggers)


_K_IN_NAME = re.compile(r"k(\d+)")


def _k_from_name(path: Path) -> int:
    found = _K_IN_NAME.findall(path.stem)
    if not found:
        raise ConfigError(f"cannot infer k from file name {path.name}; pass --k")
    return int(found[-1])


def reanalyze_loss(cfg: ExperimentConfig, paths, ks=None):
    """Loss fit from one saved histogram per storage time; peak k is taken from file k.

    Saved histograms are merged over both channels, so the dead-time
    correction assumes two identical detectors when a splitter is configured.
    """
    cfg = cfg.resolve()
    paths = [Path(p) for p in paths]
    ks = [_k_from_name(p) for p in paths] if ks is None else list(ks)
    if len(ks) != len(paths):
        raise ConfigError(f"{len(paths)} histogram files but {len(ks)} k values")
    if len(set(ks)) != len(ks):
        raise ConfigError("each histogram needs a distinct k")
    channels = 1 if cfg.detector.splitter_ratio is None else 2
    round_trip = cfg.buffer.round_trip_time_ps
    raw, rate = [], []
    order = np.argsort(ks)
    for i in order:
        h = Histogram.read(paths[i])
        r, q = peak_rates(h, [cfg.control.capture_time_ps + ks[i] * round_trip],
                          cfg.analysis.gate_half_width_ps, cfg.source.repetition_period_ps,
                          _dead_time(cfg), channels)
        raw.append(int(r[0]))
        rate.append(float(q[0]))
    series = PeakSeries.from_rates([ks[i] for i in order], raw, rate, cfg.analysis.normalization)
    return series, fit_loss(series, cfg.analysis.fit_k_min, cfg.analysis.weighted_fit)
