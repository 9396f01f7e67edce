"""Experiment driver tests: config validation, target building, report
aggregation, serialization, and the determinism contract."""

from __future__ import annotations

import copy
import json
import math

import numpy as np
import pytest

from conftest import PORTFOLIO_TARGET, TOY_TARGET, scrub_report
from dris import ConfigError
from dris.experiments import (
    CSV_HEADER,
    ExperimentConfig,
    build_target,
    csv_lines,
    emit_report,
    format_table,
    load_config,
    load_report,
    oracle_report,
    run_experiment,
    worker_count,
)
from dris.geometry import min_norm_point

TINY = {
    "target": TOY_TARGET,
    "delta": 0.001,
    "r_values": [2.0],
    "methods": ["MC", "ET", "DRIS"],
    "n_samples": 4000,
    "n_macroreps": 2,
    "seed": 99,
}


def tiny_config(**overrides) -> ExperimentConfig:
    raw = copy.deepcopy(TINY)
    raw.update(overrides)
    return ExperimentConfig.from_dict(raw)


class TestConfigValidation:
    def test_roundtrip_preserves_everything(self):
        cfg = tiny_config()
        again = ExperimentConfig.from_dict(cfg.to_dict())
        assert again == cfg
        assert again.sha256() == cfg.sha256()

    def test_sha_tracks_content(self):
        assert tiny_config().sha256() != tiny_config(seed=100).sha256()

    @pytest.mark.parametrize(
        "patch",
        [
            {"delta": 0.0},
            {"delta": -1.0},
            {"r_values": []},
            {"r_values": [3.0, 2.0]},  # not increasing
            {"r_values": [2.0, 2.0]},
            {"r_values": [-1.0]},
            {"methods": []},
            {"methods": ["DRIS", "DRIS"]},
            {"methods": ["SMC"]},
            {"n_samples": 1},
            {"n_macroreps": 1},
            {"seed": -1},
            {"seed": 2**64},
        ],
    )
    def test_bad_fields_rejected(self, patch):
        with pytest.raises(ConfigError):
            tiny_config(**patch)

    def test_unknown_top_level_key_rejected(self):
        raw = copy.deepcopy(TINY)
        raw["samples"] = 100
        with pytest.raises(ConfigError, match="unknown"):
            ExperimentConfig.from_dict(raw)

    def test_missing_key_rejected(self):
        raw = copy.deepcopy(TINY)
        del raw["delta"]
        with pytest.raises(ConfigError, match="delta"):
            ExperimentConfig.from_dict(raw)

    def test_target_keys_checked(self):
        with pytest.raises(ConfigError):
            tiny_config(target={"kind": "polyhedron", "a": [[1.0, 0.0]]})  # missing b
        with pytest.raises(ConfigError):
            tiny_config(target={**TOY_TARGET, "radius": 1.0})
        with pytest.raises(ConfigError):
            tiny_config(target={"kind": "ball", "radius": 1.0})

    def test_portfolio_position_keys_checked(self):
        bad = copy.deepcopy(PORTFOLIO_TARGET)
        bad["positions"][0]["vega"] = 1.0
        with pytest.raises(ConfigError):
            tiny_config(target=bad)

    def test_degenerate_target_fails_fast(self):
        with pytest.raises(ConfigError):
            tiny_config(
                target={"kind": "polyhedron", "a": [[1.0, 0.0]], "b": [-1.0]}
            )  # contains the origin

    def test_load_config_reads_json(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(TINY))
        assert load_config(str(path)) == tiny_config()


class TestBuildTarget:
    def test_polyhedron_min_norm_is_r(self):
        t = build_target(TOY_TARGET, 3.0)
        assert np.linalg.norm(min_norm_point(t)) == pytest.approx(3.0, rel=1e-9)

    def test_quadratic_min_norm_is_r(self):
        cfg = {
            "kind": "quadratic",
            "a": -0.5,
            "b": [2.0, 1.0],
            "c": [-0.5, -0.25],
            "threshold": 0.0,
        }
        t = build_target(cfg, 2.5)
        assert np.linalg.norm(min_norm_point(t)) == pytest.approx(2.5, rel=1e-9)

    def test_portfolio_min_norm_scales_linearly(self):
        # r divides the shock inside the loss quadratic, so the standardized
        # set is exactly r times the r=1 set.
        base = np.linalg.norm(min_norm_point(build_target(PORTFOLIO_TARGET, 1.0)))
        for r in (2.0, 3.0, 4.0):
            x1 = np.linalg.norm(min_norm_point(build_target(PORTFOLIO_TARGET, r)))
            assert x1 == pytest.approx(r * base, rel=1e-9)

    def test_portfolio_convention_changes_geometry(self):
        per_day = copy.deepcopy(PORTFOLIO_TARGET)
        per_day["convention"] = "per_day"
        a = np.linalg.norm(min_norm_point(build_target(PORTFOLIO_TARGET, 2.0)))
        b = np.linalg.norm(min_norm_point(build_target(per_day, 2.0)))
        assert not math.isclose(a, b, rel_tol=1e-3)

    def test_polyhedron_shape_mismatch(self):
        with pytest.raises(ConfigError):
            build_target({"kind": "polyhedron", "a": [[1.0, 0.0]], "b": [1.0, 2.0]}, 2.0)


class TestRunExperiment:
    def test_rows_and_replicates(self):
        report = run_experiment(tiny_config())
        assert [(row.method, row.r) for row in report.rows] == [
            ("MC", 2.0),
            ("ET", 2.0),
            ("DRIS", 2.0),
        ]
        for row in report.rows:
            assert row.error is None
            assert len(row.replicates["u_hat"]) == 2
            assert len(row.replicates["p_hat"]) == 2
            assert row.x1_star == pytest.approx(2.0, rel=1e-9)
            # published u is the square of the distance-unit replicates
            assert row.u_mean == pytest.approx(
                np.mean(np.square(row.replicates["u_hat"])), rel=1e-12
            )
            assert row.time_sec > 0.0
        mc, et, dris = report.rows
        assert mc.vr == 1.0 and mc.er == 1.0
        assert et.vr > 0.0 and dris.vr > 0.0
        assert report.metadata["u_units"] == "squared_distance"
        assert report.metadata["config_sha256"] == tiny_config().sha256()

    def test_emit_oracle_prepends_reference_rows(self):
        cfg = tiny_config(
            emit_oracle=True, methods=["DRIS"], n_samples=2000, n_macroreps=2
        )
        report = run_experiment(cfg)
        assert report.rows[0].method == "ORACLE"
        assert report.rows[0].u_mean == pytest.approx(0.052157495408**2, rel=1e-6)
        assert report.rows[0].p_mean == pytest.approx(2.403845974270e-03, rel=1e-6)

    def test_unreachable_delta_recorded_not_raised(self):
        report = run_experiment(tiny_config(delta=50.0))
        for row in report.rows:
            assert row.error is not None
            assert "Bracketing" in row.error
            assert math.isnan(row.u_mean)
        assert "failed" in format_table(report)

    def test_determinism_across_worker_counts(self, monkeypatch):
        monkeypatch.delenv("DRIS_WORKERS", raising=False)
        first = run_experiment(tiny_config())
        second = run_experiment(tiny_config())
        assert scrub_report(first) == scrub_report(second)
        monkeypatch.setenv("DRIS_WORKERS", "2")
        parallel = run_experiment(tiny_config())
        assert scrub_report(first) == scrub_report(parallel)

    def test_worker_count_parsing(self, monkeypatch):
        monkeypatch.setenv("DRIS_WORKERS", "3")
        assert worker_count() == 3
        monkeypatch.setenv("DRIS_WORKERS", "zero")
        with pytest.raises(ConfigError):
            worker_count()
        monkeypatch.setenv("DRIS_WORKERS", "0")
        with pytest.raises(ConfigError):
            worker_count()


class TestSerialization:
    def test_csv_header_and_rows(self):
        report = run_experiment(tiny_config())
        lines = csv_lines(report)
        assert lines[0] == "method,r,u_mean,u_relerr95,p_mean,p_relerr95,time_sec,vr,er"
        assert lines[0] == ",".join(CSV_HEADER)
        assert len(lines) == 1 + len(report.rows)
        first = lines[1].split(",")
        assert first[0] == "MC"
        assert float(first[1]) == 2.0
        assert float(first[8]) == 1.0  # MC er is the numeric baseline in files

    def test_emit_and_load_csv(self, tmp_path):
        report = run_experiment(tiny_config())
        path = tmp_path / "out.csv"
        emit_report(report, str(path), "csv")
        rows = load_report(str(path))
        assert [r["method"] for r in rows] == ["MC", "ET", "DRIS"]
        assert float(rows[2]["p_mean"]) == pytest.approx(
            report.rows[2].p_mean, rel=1e-15
        )

    def test_emit_and_load_json(self, tmp_path):
        report = run_experiment(tiny_config())
        path = tmp_path / "out.json"
        emit_report(report, str(path), "json")
        loaded = load_report(str(path))
        assert loaded["metadata"]["seed"] == 99
        assert loaded["rows"][2]["replicates"]["u_hat"] == list(
            report.rows[2].replicates["u_hat"]
        )

    def test_emit_rejects_bad_format_and_empty(self, tmp_path):
        report = run_experiment(tiny_config())
        with pytest.raises(ValueError):
            emit_report(report, str(tmp_path / "x.yaml"), "yaml")
        report.rows = []
        with pytest.raises(ValueError):
            emit_report(report, str(tmp_path / "x.csv"), "csv")

    def test_format_table_marks_baseline_columns(self):
        table = format_table(run_experiment(tiny_config()))
        mc_line = next(line for line in table.splitlines() if line.lstrip().startswith("MC"))
        assert "-" in mc_line


class TestOracleReport:
    def test_toy_rows(self):
        cfg = tiny_config(methods=["DRIS"])
        report = oracle_report(cfg)
        assert [row.method for row in report.rows] == ["ORACLE"]
        assert report.rows[0].u_mean == pytest.approx(0.052157495408**2, rel=1e-6)

    def test_portfolio_rejected(self):
        cfg = tiny_config(target=PORTFOLIO_TARGET, delta=0.01)
        with pytest.raises(ConfigError, match="2-D"):
            oracle_report(cfg)
