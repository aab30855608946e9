"""Experiment configuration: strict schema, explicit defaults, provenance-friendly.

A config file is YAML (or JSON, by extension). Unknown keys are rejected and
every schema error is reported with the file line it came from. ``resolve``
fills every implicit default (capture time, gate window, filter bandwidth,
histogram window) so the snapshot stored in a run manifest shows each
parameter the run actually used; resolving twice is a no-op.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .analysis import Normalization
from .control import ControlProgram, GateSchedule, Violation, validate_program
from .detection import DetectorModel, _check_window
from .errors import ConfigError
from .optics import BufferModel, SourceModel


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SourceSection(_Section):
    kind: Literal["weak_coherent", "single_fock"] = "weak_coherent"
    mean_photon_number: float = Field(0.1, ge=0, le=100)
    fock_n: int = Field(1, ge=0)
    repetition_period_ps: float = Field(10_000.0, gt=0)
    pulse_epoch_ps: float = Field(1_000.0, ge=0)
    wavelength_nm: float = Field(1550.0, gt=0)


class BufferSection(_Section):
    round_trip_time_ps: float = Field(100.0, gt=0)
    round_trip_loss_db: float = Field(0.74, ge=0)
    input_coupling_loss_db: float = Field(2.73, ge=0)
    output_coupling_loss_db: float = Field(2.73, ge=0)
    insertion_loss_budget_db: float = Field(6.2, ge=0)
    v_pi_volts: float = Field(3.5, gt=0)
    switch_extinction_db: float | None = Field(None, ge=0)
    eo_bandwidth_ghz: float = Field(40.0, gt=0)
    max_round_trips: int = Field(14, ge=0)


class ControlSection(_Section):
    hold_round_trips: int = Field(5, ge=0)
    capture_time_ps: float | None = None
    gate_window_ps: float | None = Field(None, gt=0)
    release_time_ps: float | None = None
    edge_time_ps: float = Field(10.0, ge=0)
    bandwidth_filter: bool = True
    f3db_ghz: float | None = Field(None, gt=0)
    sample_step_ps: float = Field(0.5, gt=0)


class DetectorSection(_Section):
    efficiency: float = Field(0.8, ge=0, le=1)
    jitter_sigma_ps: float = Field(15.0, ge=0)
    dark_rate_hz: float = Field(100.0, ge=0)
    dead_time_ps: float = Field(50_000.0, ge=0)
    splitter_ratio: float | None = Field(0.5, ge=0, le=1)


class HistogramSection(_Section):
    bin_width_ps: float = Field(1.0, gt=0)
    t0_ps: float = 0.0
    t1_ps: float | None = None


class AnalysisSection(_Section):
    gate_half_width_ps: float = Field(45.0, gt=0)
    normalization: Normalization = Normalization.MAX_PEAK
    fit_k_min: int = Field(1, ge=0)
    weighted_fit: bool = False
    dead_time_correction: bool = True
    sweep_k: list[int] = Field(default_factory=lambda: [1, 2, 3, 4, 5])


class ExperimentConfig(_Section):
    n_pulses: int = Field(1_000_000, ge=1)
    master_seed: int = Field(12345, ge=0, lt=2**63)
    output_dir: str = "out"
    source: SourceSection = SourceSection()
    buffer: BufferSection = BufferSection()
    control: ControlSection = ControlSection()
    detector: DetectorSection = DetectorSection()
    histogram: HistogramSection = HistogramSection()
    analysis: AnalysisSection = AnalysisSection()

    # -- resolution --------------------------------------------------------

    def resolve(self) -> ExperimentConfig:
        ctl = self.control
        updates = {}
        if ctl.capture_time_ps is None:
            updates["capture_time_ps"] = self.source.pulse_epoch_ps
        if ctl.gate_window_ps is None:
            updates["gate_window_ps"] = self.buffer.round_trip_time_ps / 2
        if ctl.bandwidth_filter and ctl.f3db_ghz is None:
            updates["f3db_ghz"] = self.buffer.eo_bandwidth_ghz
        hist = self.histogram
        hist_updates = {}
        if hist.t1_ps is None:
            hist_updates["t1_ps"] = hist.t0_ps + self.source.repetition_period_ps
        return self.model_copy(update={
            "control": ctl.model_copy(update=updates),
            "histogram": hist.model_copy(update=hist_updates),
        })

    def to_dict(self) -> dict:
        return self.model_dump(mode="json")

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def with_overrides(self, seed: int | None = None, output_dir: str | None = None,
                       hold: int | None = None) -> ExperimentConfig:
        update = {}
        if seed is not None:
            update["master_seed"] = seed
        if output_dir is not None:
            update["output_dir"] = str(output_dir)
        cfg = self.model_copy(update=update)
        if hold is not None:
            cfg = cfg.model_copy(update={"control": cfg.control.model_copy(
                update={"hold_round_trips": hold})})
        return cfg

    # -- domain objects ----------------------------------------------------

    def source_model(self) -> SourceModel:
        return SourceModel(**self.source.model_dump())

    def buffer_model(self) -> BufferModel:
        return BufferModel(**self.buffer.model_dump())

    def detector_model(self) -> DetectorModel:
        d = self.detector
        return DetectorModel(d.efficiency, d.jitter_sigma_ps, d.dark_rate_hz, d.dead_time_ps)

    def program(self, hold: int | None = None) -> ControlProgram:
        """Program for ``hold`` round trips (default: the configured hold)."""
        cfg = self.resolve()
        ctl = cfg.control
        n = ctl.hold_round_trips if hold is None else hold
        sched = GateSchedule(
            capture_time_ps=ctl.capture_time_ps,
            hold_round_trips=n,
            gate_window_ps=ctl.gate_window_ps,
            repetition_period_ps=cfg.source.repetition_period_ps,
            round_trip_time_ps=cfg.buffer.round_trip_time_ps,
            release_override_ps=ctl.release_time_ps if hold is None else None,
        )
        f3db = ctl.f3db_ghz if ctl.bandwidth_filter else None
        return ControlProgram(sched, cfg.buffer.v_pi_volts, ctl.edge_time_ps, f3db, ctl.sample_step_ps)

    @property
    def window(self) -> tuple[float, float]:
        h = self.resolve().histogram
        return h.t0_ps, h.t1_ps


def validate_config(cfg: ExperimentConfig, holds=None) -> tuple[list[Violation], list[str]]:
    """Cross-section physics checks. Returns (violations, warnings)."""
    cfg = cfg.resolve()
    violations: list[Violation] = []
    notes: list[str] = []
    try:
        src, buf, det = cfg.source_model(), cfg.buffer_model(), cfg.detector_model()
    except ConfigError as exc:
        return [Violation("invalid_parameter", str(exc))], notes
    violations += [Violation("budget", m) for m in buf.budget_violations()]
    violations += [Violation("round_trip_exceeds_period", m) for m in buf.source_violations(src)]
    holds = [cfg.control.hold_round_trips] if holds is None else list(holds)
    seen = set()
    for n in holds:
        program = cfg.program(None if n == cfg.control.hold_round_trips else n)
        for v in validate_program(program, src, buf):
            if v.code == "round_trip_exceeds_period" or (v.code, v.message) in seen:
                continue
            seen.add((v.code, v.message))
            violations.append(Violation(v.code, f"hold {n}: {v.message}" if len(holds) > 1 else v.message))
    if cfg.analysis.gate_half_width_ps >= buf.round_trip_time_ps / 2:
        violations.append(Violation("gate_overlap", "analysis gate half width must be < round_trip/2"))
    try:
        _check_window(src.repetition_period_ps, cfg.histogram.bin_width_ps, cfg.window)
    except ConfigError as exc:
        violations.append(Violation("histogram_window", str(exc)))
    if cfg.source.pulse_epoch_ps >= cfg.source.repetition_period_ps:
        violations.append(Violation("pulse_epoch", "pulse_epoch_ps must be < repetition_period_ps"))
    notes += det.jitter_warnings(buf.round_trip_time_ps)
    if src.kind.value == "weak_coherent" and src.mean_photon_number > 1:
        notes.append(f"mean photon number {src.mean_photon_number} is outside the weak (<= 1) regime")
    return violations, notes


# -- loading -------------------------------------------------------------------


def _node_line(root, loc) -> int | None:
    """1-based line of the YAML node at ``loc`` (or of its deepest existing parent)."""
    node, line = root, None
    if node is not None:
        line = node.start_mark.line + 1
    for part in loc:
        if isinstance(node, yaml.MappingNode):
            for key, value in node.value:
                if key.value == str(part):
                    node, line = value, key.start_mark.line + 1
                    break
            else:
                break
        elif isinstance(node, yaml.SequenceNode) and isinstance(part, int) and part < len(node.value):
            node = node.value[part]
            line = node.start_mark.line + 1
        else:
            break
    return line


def parse_config(text: str, source: str = "<config>", fmt: str = "yaml") -> ExperimentConfig:
    try:
        data = json.loads(text) if fmt == "json" else yaml.safe_load(text)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{source}: cannot parse: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        root = None
        try:
            root = yaml.compose(text)
        except yaml.YAMLError:
            pass
        lines = []
        for err in exc.errors():
            loc = [p for p in err["loc"]]
            line = _node_line(root, loc)
            where = f"{source}:{line}" if line else source
            field = ".".join(str(p) for p in loc) or "<root>"
            lines.append(f"{where}: {field}: {err['msg']}")
        raise ConfigError("\n".join(lines)) from None


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    fmt = "json" if path.suffix.lower() == ".json" else "yaml"
    return parse_config(text, str(path), fmt)


def default_config_yaml() -> str:
    return yaml.safe_dump(ExperimentConfig().resolve().to_dict(), sort_keys=False)
