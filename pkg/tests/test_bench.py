"""Benchmark harness: report schema, scoring, artifact output."""

import json

import pytest

from gifuse import checkpoint as ckpt
from gifuse.bench import (
    build_procedural_benchmark,
    load_report,
    run_benchmark,
    validate_report,
    write_report,
)
from gifuse.errors import ValidationError


def base_report():
    return {
        "scenes": [
            {"scene": "a", "metrics": {"psnr": 30.0}, "runtime_seconds": 0.1},
            {"scene": "b", "metrics": {"psnr": 20.0}, "runtime_seconds": 0.1},
        ],
        "aggregates": {"psnr": 25.0},
        "warnings": [],
        "config": {},
        "version": "0.1.0",
    }


class TestValidateReport:
    def test_accepts_valid(self):
        validate_report(base_report())

    def test_missing_key(self):
        rep = base_report()
        del rep["aggregates"]
        with pytest.raises(ValidationError):
            validate_report(rep)

    def test_duplicate_scene(self):
        rep = base_report()
        rep["scenes"][1]["scene"] = "a"
        with pytest.raises(ValidationError):
            validate_report(rep)

    def test_non_numeric_metric(self):
        rep = base_report()
        rep["scenes"][0]["metrics"]["psnr"] = "high"
        with pytest.raises(ValidationError):
            validate_report(rep)

    def test_inf_sentinel_allowed(self):
        rep = base_report()
        rep["scenes"][0]["metrics"]["psnr"] = "inf"
        rep["aggregates"]["psnr"] = 20.0  # mean over the numeric scene only
        validate_report(rep)

    def test_aggregate_must_match_mean(self):
        rep = base_report()
        rep["aggregates"]["psnr"] = 99.0
        with pytest.raises(ValidationError):
            validate_report(rep)


@pytest.fixture(scope="module")
def bundle(tiny_setup):
    _, bundle_path = tiny_setup
    return ckpt.load_bundle(bundle_path)


class TestRunBenchmark:
    def test_procedural_scenes_end_to_end(self, bundle, tmp_path):
        pairs = tmp_path / "pairs"
        build_procedural_benchmark(pairs, count=2, seed=0, size=32)
        out = tmp_path / "out"
        report = run_benchmark(pairs, bundle, out, steps=2, seed=0)
        assert len(report.scenes) == 2
        assert not report.warnings
        assert "mef_ssim" in report.aggregates
        assert "psnr" in report.aggregates  # gt.png present
        assert (out / "report.jsonl").exists()
        assert (out / "summary.json").exists()
        assert (out / "plot_mef_ssim.png").exists()
        for rec in report.scenes:
            scene_out = out / rec["scene"]
            assert (scene_out / "fused.png").exists()
            assert (scene_out / "mask.png").exists()

    def test_malformed_scene_warned_not_fatal(self, bundle, tmp_path):
        pairs = tmp_path / "pairs"
        build_procedural_benchmark(pairs, count=1, seed=1, size=32)
        (pairs / "broken").mkdir()  # no ue/oe images
        report = run_benchmark(pairs, bundle, tmp_path / "out", steps=2)
        assert len(report.scenes) == 1
        assert len(report.warnings) == 1
        assert report.warnings[0]["scene"] == "broken"

    def test_report_round_trip(self, bundle, tmp_path):
        pairs = tmp_path / "pairs"
        build_procedural_benchmark(pairs, count=1, seed=2, size=32)
        out = tmp_path / "out"
        report = run_benchmark(pairs, bundle, out, steps=2)
        loaded = load_report(out)
        assert loaded["scenes"] == json.loads(
            json.dumps(report.to_dict(), sort_keys=True)
        )["scenes"]

    def test_rerender(self, bundle, tmp_path):
        pairs = tmp_path / "pairs"
        build_procedural_benchmark(pairs, count=1, seed=3, size=32)
        out = tmp_path / "out"
        run_benchmark(pairs, bundle, out, steps=2)
        redo = tmp_path / "redo"
        redo.mkdir()
        write_report(load_report(out), redo)
        assert (redo / "summary.json").exists()

    def test_load_report_missing(self, tmp_path):
        with pytest.raises(ValidationError):
            load_report(tmp_path)
