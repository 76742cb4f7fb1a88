import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from einfuse.cli import main

from cascades import FIG8


@pytest.fixture
def runner():
    return CliRunner()


def invoke(runner, *args):
    return runner.invoke(main, list(args), catch_exceptions=False)


class TestValidate:
    def test_builtin_ok(self, runner):
        r = invoke(runner, "validate", "--builtin", "mamba1", "--tiny")
        assert r.exit_code == 0 and "OK" in r.output

    def test_bad_source_exits_1(self, runner, tmp_path):
        f = tmp_path / "bad.cas"
        f.write_text("einsum 1: Z[m] = A[q]\n")
        r = runner.invoke(main, ["validate", "--cascade", str(f)])
        assert r.exit_code == 1

    def test_usage_error_exits_2(self, runner):
        r = runner.invoke(main, ["validate", "--params", "B"])
        assert r.exit_code == 2


class TestStitch:
    def test_ri_reports_12_groups(self, runner):
        r = invoke(runner, "stitch", "--builtin", "mamba1", "--tiny", "--policy", "ri")
        assert r.exit_code == 0
        assert "groups: 12" in r.output

    def test_plan_written(self, runner, tmp_path):
        out = tmp_path / "o"
        r = invoke(runner, "stitch", "--tiny", "--policy", "fully-fused", "--out", str(out))
        assert r.exit_code == 0
        plan = json.loads((out / "fusion-plan-fully-fused.json").read_text())
        assert plan["group_count"] == 1


class TestLower:
    def test_pretty_to_stdout(self, runner, tmp_path):
        f = tmp_path / "fig8.cas"
        f.write_text(FIG8)
        r = invoke(runner, "lower", "--cascade", str(f), "--policy", "fully-fused")
        assert r.exit_code == 0
        assert "for n in range(3):" in r.output

    def test_files_written(self, runner, tmp_path):
        out = tmp_path / "o"
        r = invoke(runner, "lower", "--tiny", "--policy", "ri", "--out", str(out))
        assert r.exit_code == 0
        assert (out / "schedule-ri.txt").exists()
        assert (out / "schedule-ri.json").exists()


class TestRun:
    def test_equivalence_verdict(self, runner):
        r = invoke(runner, "run", "--tiny", "--policy", "fully-fused", "--seed", "5")
        assert r.exit_code == 0
        assert "EQUIVALENT" in r.output

    def test_trace_written(self, runner, tmp_path):
        out = tmp_path / "o"
        invoke(runner, "run", "--tiny", "--policy", "ri", "--out", str(out))
        assert (out / "trace-ri.csv").read_text().startswith("counter,")


class TestCost:
    def test_stdout_totals(self, runner):
        r = invoke(runner, "cost", "--tiny", "--policy", "unfused")
        assert r.exit_code == 0 and "latency" in r.output

    def test_csvs_written(self, runner, tmp_path):
        out = tmp_path / "o"
        invoke(runner, "cost", "--tiny", "--policy", "ri", "--out", str(out))
        assert (out / "cost-ri-prefill.csv").exists()
        assert (out / "util-ri-prefill.csv").exists()

    def test_hw_file(self, runner, tmp_path):
        hw = tmp_path / "hw.cfg"
        hw.write_text("bandwidth=1e9\nclock=1.75e9\n")
        r = invoke(runner, "cost", "--tiny", "--policy", "unfused", "--hw", str(hw), "--json")
        assert r.exit_code == 0


class TestCompareAndReplay:
    def test_compare_table(self, runner, tmp_path):
        out = tmp_path / "o"
        r = invoke(
            runner,
            "compare",
            "--tiny",
            "--variants",
            "unfused,ri,fully-fused",
            "--scenarios",
            "s:8:2",
            "--out",
            str(out),
        )
        assert r.exit_code == 0
        assert (out / "e2e.csv").exists()
        assert (out / "compare-summary.json").exists()
        assert "fully-fused" in r.output

    def test_manifest_replay_is_byte_identical(self, runner, tmp_path):
        out = tmp_path / "o"
        invoke(runner, "run", "--tiny", "--policy", "ri", "--seed", "9", "--out", str(out))
        first = (out / "trace-ri.csv").read_bytes()
        manifest = out / "run-manifest.json"
        assert manifest.exists()
        (out / "trace-ri.csv").unlink()
        r = invoke(runner, "replay", "--manifest", str(manifest))
        assert r.exit_code == 0
        assert (out / "trace-ri.csv").read_bytes() == first
