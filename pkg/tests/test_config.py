import json

import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from photonbuffer.config import ExperimentConfig, default_config_yaml, load_config, parse_config, validate_config
from photonbuffer.errors import ConfigError


def test_resolve_fills_every_default():
    cfg = ExperimentConfig().resolve()
    assert cfg.control.capture_time_ps == 1000.0
    assert cfg.control.gate_window_ps == 50.0
    assert cfg.control.f3db_ghz == 40.0
    assert cfg.window == (0.0, 10_000.0)


def test_resolve_is_a_fixed_point():
    once = ExperimentConfig().resolve()
    assert once.resolve() == once
    again = parse_config(json.dumps(once.to_dict()), fmt="json").resolve()
    assert again.canonical_json() == once.canonical_json()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 14), st.floats(0, 1), st.floats(50, 150), st.booleans())
def test_round_trip_through_yaml(hold, mu, rt, filt):
    doc = {"source": {"mean_photon_number": mu}, "buffer": {"round_trip_time_ps": rt},
           "control": {"hold_round_trips": hold, "bandwidth_filter": filt}}
    cfg = parse_config(yaml.safe_dump(doc)).resolve()
    back = parse_config(yaml.safe_dump(cfg.to_dict())).resolve()
    assert back == cfg


def test_unknown_keys_rejected_with_line():
    text = "n_pulses: 10\nsource:\n  mean_photon_number: 0.1\n  colour: red\n"
    with pytest.raises(ConfigError) as info:
        parse_config(text, "cfg.yaml")
    assert "cfg.yaml:4: source.colour" in str(info.value)


def test_type_errors_report_each_field():
    text = "n_pulses: many\ndetector:\n  efficiency: 2\n"
    with pytest.raises(ConfigError) as info:
        parse_config(text, "x.yaml")
    msg = str(info.value)
    assert "x.yaml:1: n_pulses" in msg and "x.yaml:3: detector.efficiency" in msg


@pytest.mark.parametrize("text", ["[1, 2]", "a: [", "7"])
def test_malformed_documents(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_empty_file_is_all_defaults():
    assert parse_config("") == ExperimentConfig()


def test_load_by_extension(tmp_path):
    (tmp_path / "c.json").write_text('{"n_pulses": 7}')
    assert load_config(tmp_path / "c.json").n_pulses == 7
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


def test_overrides():
    cfg = ExperimentConfig().with_overrides(seed=9, output_dir="o", hold=3)
    assert (cfg.master_seed, cfg.output_dir, cfg.control.hold_round_trips) == (9, "o", 3)


def test_default_config_text_loads_back():
    assert parse_config(default_config_yaml()) == ExperimentConfig().resolve()


def test_shipped_configs(request):
    root = request.config.rootpath / "configs"
    assert validate_config(load_config(root / "defaults.yaml")) == ([], [])
    window, _ = validate_config(load_config(root / "invalid_window.yaml"))
    assert "window_exceeds_round_trip" in {v.code for v in window}
    budget, _ = validate_config(load_config(root / "invalid_budget.yaml"))
    assert [v.code for v in budget] == ["budget"]
    for name in ("fock_single.yaml", "long_storage.yaml", "vacuum.yaml"):
        assert validate_config(load_config(root / name))[0] == []


def test_validation_flags_gate_overlap_and_bad_window():
    cfg = parse_config("analysis:\n  gate_half_width_ps: 50\nhistogram:\n  bin_width_ps: 3\n")
    codes = {v.code for v in validate_config(cfg)[0]}
    assert {"gate_overlap", "histogram_window"} <= codes


def test_strong_source_is_a_warning_not_an_error():
    with pytest.warns(UserWarning):
        violations, notes = validate_config(parse_config("source:\n  mean_photon_number: 2\n"))
    assert violations == [] and any("weak" in n for n in notes)
