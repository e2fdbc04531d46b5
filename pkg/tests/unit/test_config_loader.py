import json
import logging
import os
from dataclasses import replace
from pathlib import Path

import pytest

from builders import DEFAULT_CONFIG, DRONE_CONFIG, NUSCENES_CONFIG
from config_loader import (
    config_hash, config_to_dict, dump_config, load_config, merge_config, parse_config, reset_base_dir,
    resolve_max_threads,
)
from config_types import (
    Lifetime, Metric, OcclusionPolicy, OracleConfig, Polygon2D, Sector, TransformKind,
)
from custom_types import ConfigParseError, ConfigSchemaError


@pytest.fixture(autouse=True)
def _restore_base_dir():
    yield
    reset_base_dir()


SQUARE = [[0, 0], [10, 0], [10, 10], [0, 10]]


# ---------------------------------------------------------------------------
# load_config
# ---------------------------------------------------------------------------

class TestLoadConfig:
    def test_shipped_default_matches_documented_defaults(self):
        assert load_config(DEFAULT_CONFIG) == OracleConfig(name="default")

    @pytest.mark.parametrize("path, lifetime", [
        (NUSCENES_CONFIG, Lifetime.SUBSEQUENCE),
        (DRONE_CONFIG, Lifetime.TRACK),
    ])
    def test_shipped_examples_load(self, path, lifetime):
        cfg = load_config(path)
        assert cfg.assignment.lifetime == lifetime
        assert cfg.distance.metric == Metric.CENTER2D

    def test_missing_file_raises(self, tmp_path: Path):
        with pytest.raises(FileNotFoundError):
            load_config(tmp_path / "nope.json")

    def test_empty_file_yields_defaults(self, tmp_path: Path):
        path = tmp_path / "empty.json"
        path.write_text("  \n")
        assert load_config(path) == OracleConfig()

    def test_malformed_json_raises_parse_error(self, tmp_path: Path):
        path = tmp_path / "bad.json"
        path.write_text("{ not json")
        with pytest.raises(ConfigParseError):
            load_config(path)

    def test_polygon_file_resolves_next_to_config(self, tmp_path: Path):
        (tmp_path / "zones").mkdir()
        (tmp_path / "zones" / "square.json").write_text(json.dumps({"vertices": SQUARE}))
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"areas": {"include": [{"file": "zones/square.json"}]}}))
        cfg = load_config(path)
        assert cfg.areas.include[0].vertices[2] == (10.0, 10.0)

    def test_missing_polygon_file_raises(self, tmp_path: Path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"areas": {"exclude": [{"file": "missing.json"}]}}))
        with pytest.raises(ConfigSchemaError, match="non-existent polygon file"):
            load_config(path)


# ---------------------------------------------------------------------------
# parse_config: schema
# ---------------------------------------------------------------------------

class TestParseConfig:
    def test_empty_document_is_fully_defaulted(self):
        cfg = parse_config({})
        assert cfg.distance.threshold == 2.0
        assert cfg.occlusion.visibility_bins == (0.4, 0.6, 0.8)
        assert cfg.alignment.transform.kind == TransformKind.IDENTITY

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigSchemaError, match="Unknown key"):
            parse_config({"colour": "red"})

    def test_unknown_section_key(self):
        with pytest.raises(ConfigSchemaError, match="'distance'"):
            parse_config({"distance": {"treshold": 1.0}})

    def test_unknown_enum_value_lists_choices(self):
        with pytest.raises(ConfigSchemaError, match="Valid values"):
            parse_config({"distance": {"metric": "chebyshev"}})

    @pytest.mark.parametrize("section", [
        {"distance": {"threshold": 0.0}},
        {"distance": {"threshold": "2"}},
        {"occlusion": {"theta": 1.5}},
        {"probabilistic": {"tau_exist": -0.1}},
        {"probabilistic": {"sweep_thresholds": 0}},
        {"assignment": {"max_gap_frames": True}},
        {"corner_cases": {"margin_m": -1.0}},
    ])
    def test_out_of_range_or_mistyped_values(self, section):
        with pytest.raises(ConfigSchemaError):
            parse_config(section)

    def test_filter_order_is_fixed(self):
        with pytest.raises(ConfigSchemaError, match="filter_order"):
            parse_config({"filter_order": ["areas", "aov", "occlusion", "confidence"]})

    def test_visibility_bins_must_increase(self):
        with pytest.raises(ConfigSchemaError, match="strictly increasing"):
            parse_config({"occlusion": {"visibility_bins": [0.6, 0.4]}})

    def test_sector_region(self):
        cfg = parse_config({"aov": {"sut_aov": {"sector": {"origin": [0, 0], "range_m": 30, "fov_rad": 1.5}}}})
        assert cfg.aov.sut_aov == Sector(origin=(0.0, 0.0), range_m=30.0, fov_rad=1.5)

    def test_region_needs_exactly_one_shape(self):
        with pytest.raises(ConfigSchemaError):
            parse_config({"aov": {"res_aov": {"polygon": SQUARE, "sector": {}}}})

    def test_self_intersecting_polygon_rejected(self):
        bowtie = [[0, 0], [10, 10], [10, 0], [0, 10]]
        with pytest.raises(ConfigSchemaError, match="simple polygon"):
            parse_config({"areas": {"include": [bowtie]}})

    def test_class_allow_is_sorted(self):
        cfg = parse_config({"areas": {"class_allow": ["truck", "car"]}})
        assert cfg.areas.class_allow == ("car", "truck")

    def test_prob_curve_must_not_rise_with_range(self):
        curve = {"points": [[0, 0.5], [10, 0.9]]}
        with pytest.raises(ConfigSchemaError, match="non-increasing"):
            parse_config({"aov": {"prob_map": {"sut": curve}}})

    def test_poly3_needs_ten_coefficients(self):
        with pytest.raises(ConfigSchemaError, match="10 coefficients"):
            parse_config({"alignment": {"transform": {"kind": "poly3", "cx": [0, 1], "cy": [0, 0, 1]}}})

    def test_latency_series(self):
        cfg = parse_config({"temporal": {"basis": "availability", "sut_latency_s": [[0, 0.1], [1, 0.2]]}})
        assert cfg.temporal.sut_latency_s == ((0.0, 0.1), (1.0, 0.2))

    def test_latency_series_must_increase(self):
        with pytest.raises(ConfigSchemaError, match="strictly increasing"):
            parse_config({"temporal": {"sut_latency_s": [[1, 0.1], [0, 0.2]]}})


# ---------------------------------------------------------------------------
# parse_config: cross-field rules
# ---------------------------------------------------------------------------

class TestCrossFieldRules:
    def test_sticky_requires_subsequence(self):
        with pytest.raises(ConfigSchemaError, match="sticky"):
            parse_config({"assignment": {"sticky": True}})

    def test_track_lifetime_requires_threshold(self):
        with pytest.raises(ConfigSchemaError, match="track_threshold_mean_m"):
            parse_config({"assignment": {"lifetime": "track"}})

    def test_track_threshold_only_with_track_lifetime(self):
        with pytest.raises(ConfigSchemaError, match="only valid"):
            parse_config({"assignment": {"track_threshold_mean_m": 1.0}})

    def test_fuzzy_rescue_requires_margin(self):
        with pytest.raises(ConfigSchemaError, match="margin_m"):
            parse_config({"corner_cases": {"border": "fuzzy_rescue"}})

    def test_threshold_overhang_requires_dt_max(self):
        with pytest.raises(ConfigSchemaError, match="dt_max_s"):
            parse_config({"temporal": {"overhang": "threshold"}})

    def test_n_n_cardinality_warns(self, caplog):
        with caplog.at_level(logging.WARNING):
            parse_config({"assignment": {"cardinality": "n_n"}})
        assert "double-count" in caplog.text

    def test_effective_threshold_inflation(self):
        cfg = parse_config({
            "alignment": {"reported_error_m": 0.3, "inflate_threshold": True},
            "temporal": {"sync_accuracy_loss_m": 0.2, "inflate_threshold": True},
        })
        assert cfg.effective_threshold == pytest.approx(2.5)


# ---------------------------------------------------------------------------
# Serialization, merging and hashing
# ---------------------------------------------------------------------------

class TestSerialization:
    def test_dump_and_reload(self, tmp_path: Path):
        cfg = parse_config({
            "name": "round",
            "aov": {"res_aov": {"polygon": SQUARE}},
            "occlusion": {"policy": "exclude_if_occluded", "theta": 0.7},
            "alignment": {"transform": {"kind": "rigid2d", "tx": 1.0, "theta": 0.1}},
        })
        path = tmp_path / "out" / "cfg.json"
        dump_config(cfg, path)
        assert load_config(path) == cfg

    def test_dump_has_every_section(self):
        doc = config_to_dict(OracleConfig())
        assert {"aov", "occlusion", "distance", "temporal", "threading"} <= set(doc)
        assert doc["distance"]["metric"] == "center2d"

    def test_merge_overrides_only_named_fields(self):
        base = load_config(NUSCENES_CONFIG)
        merged = merge_config(base, {"occlusion": {"policy": "ignore"}})
        assert merged.occlusion.policy == OcclusionPolicy.IGNORE
        assert merged.assignment == base.assignment
        assert merged.name == base.name

    def test_merge_revalidates(self):
        with pytest.raises(ConfigSchemaError):
            merge_config(OracleConfig(), {"distance": {"threshold": -1}})

    def test_hash_is_stable_and_sensitive(self):
        cfg = OracleConfig()
        assert config_hash(cfg) == config_hash(parse_config({}))
        changed = replace(cfg, areas=replace(cfg.areas, include=(Polygon2D(tuple(map(tuple, SQUARE))),)))
        assert config_hash(changed) != config_hash(cfg)


# ---------------------------------------------------------------------------
# resolve_max_threads
# ---------------------------------------------------------------------------

class TestResolveMaxThreads:
    def test_zero_uses_cpu_cap(self, monkeypatch):
        monkeypatch.setattr(os, "cpu_count", lambda: 8)
        assert resolve_max_threads(0, 100) == 7

    def test_capped_by_work_units(self, monkeypatch):
        monkeypatch.setattr(os, "cpu_count", lambda: 8)
        assert resolve_max_threads(4, 2) == 2

    def test_above_cap_warns(self, monkeypatch, caplog):
        monkeypatch.setattr(os, "cpu_count", lambda: 4)
        with caplog.at_level(logging.WARNING):
            assert resolve_max_threads(99, 100) == 3
        assert "exceeds logical CPU count" in caplog.text

    def test_cpu_count_none_treated_as_one(self, monkeypatch):
        monkeypatch.setattr(os, "cpu_count", lambda: None)
        assert resolve_max_threads(9999, 10) == 1

    def test_never_below_one(self):
        assert resolve_max_threads(3, 0) == 1
