import csv
import json
from pathlib import Path

import pytest

from skygrab.cli import main
from skygrab.logs import SimLog

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
NOMINAL = str(CONFIGS / "nominal_static.yaml")


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("runs")
    code = main(["run", "--config", NOMINAL, "--out", str(out)])
    assert code == 0
    return out / "nominal_static-seed1"


class TestRun:
    def test_artifacts_present(self, run_dir):
        assert (run_dir / "log.jsonl").exists()
        assert (run_dir / "summary.json").exists()
        assert (run_dir / "timeseries.csv").exists()
        summary = json.loads((run_dir / "summary.json").read_text())
        assert summary["verdict"] == "captured"

    def test_timeseries_columns(self, run_dir):
        with open(run_dir / "timeseries.csv") as fh:
            rows = list(csv.reader(fh))
        header, data = rows[0], rows[1:]
        assert header[0] == "t"
        assert "grabber_phase" in header
        assert "grabber_ball_range" in header
        assert len(data) > 100
        assert all(len(r) == len(header) for r in data)

    def test_missing_config_exits_1(self, tmp_path, capsys):
        assert main(["run", "--config", str(tmp_path / "nope.yaml"), "--out", str(tmp_path)]) == 1
        assert "no such config" in capsys.readouterr().err

    def test_malformed_config_exits_1_with_field(self, tmp_path, capsys):
        bad = tmp_path / "bad.yaml"
        bad.write_text("world:\n  rod_length: -2.0\n")
        assert main(["run", "--config", str(bad), "--out", str(tmp_path)]) == 1
        assert "world.rod_length" in capsys.readouterr().err

    def test_too_short_duration_exits_2(self, tmp_path):
        cfgp = tmp_path / "short.yaml"
        cfgp.write_text(
            (CONFIGS / "nominal_static.yaml").read_text().replace("duration: 60.0", "duration: 5.0")
        )
        assert main(["run", "--config", str(cfgp), "--out", str(tmp_path / "o")]) == 2
        summary = json.loads((tmp_path / "o" / "short-seed1" / "summary.json").read_text())
        assert summary["verdict"] == "timeout"

    def test_seed_override_changes_output_dir_and_log(self, tmp_path):
        assert main(["run", "--config", NOMINAL, "--seed", "9", "--out", str(tmp_path)]) == 0
        log = SimLog.read(tmp_path / "nominal_static-seed9" / "log.jsonl")
        assert log.header["config"]["seed"] == 9


class TestMonteCarlo:
    def test_verdict_table_rows_and_seeds(self, tmp_path):
        out = tmp_path / "mc"
        code = main(["mc", "--config", NOMINAL, "--runs", "3", "--seed-base", "5",
                     "--out", str(out)])
        assert code == 0
        with open(out / "verdicts.csv") as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 4
        assert [r[0] for r in rows[1:]] == ["5", "6", "7"]
        summary = json.loads((out / "mc_summary.json").read_text())
        assert summary["n_runs"] == 3

    def test_repeat_invocation_identical(self, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        for out in (out1, out2):
            assert main(["mc", "--config", NOMINAL, "--runs", "2", "--seed-base", "3",
                         "--out", str(out)]) == 0
        assert (out1 / "mc_summary.json").read_bytes() == (out2 / "mc_summary.json").read_bytes()
        assert (out1 / "verdicts.csv").read_bytes() == (out2 / "verdicts.csv").read_bytes()


class TestPlot:
    @pytest.mark.parametrize("kind", ["depth_profile", "trajectory_3d", "pixel_error", "phase_timeline"])
    def test_each_kind_writes_svg_and_sidecar(self, run_dir, tmp_path, kind):
        out = tmp_path / f"{kind}.svg"
        code = main(["plot", "--kind", kind, "--log", str(run_dir / "log.jsonl"),
                     "--out", str(out)])
        assert code == 0
        assert out.exists()
        sidecar = out.with_suffix(".csv")
        assert sidecar.exists()
        body = out.read_text()
        assert body.startswith("<svg") and body.rstrip().endswith("</svg>")

    def test_depth_profile_ends_at_capture(self, run_dir, tmp_path):
        out = tmp_path / "depth.svg"
        assert main(["plot", "--kind", "depth_profile", "--log", str(run_dir / "log.jsonl"),
                     "--out", str(out)]) == 0
        log = SimLog.read(run_dir / "log.jsonl")
        t_cap = log.verdict_record["t_capture"]
        with open(tmp_path / "depth.csv") as fh:
            rows = list(csv.reader(fh))[1:]
        assert float(rows[-1][0]) <= t_cap + 1e-9

    def test_plot_outputs_deterministic(self, run_dir, tmp_path):
        a, b = tmp_path / "a.svg", tmp_path / "b.svg"
        for out in (a, b):
            assert main(["plot", "--kind", "trajectory_3d", "--log", str(run_dir / "log.jsonl"),
                         "--out", str(out)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_missing_stream_exits_1_naming_kind(self, run_dir, tmp_path, capsys):
        log = SimLog.read(run_dir / "log.jsonl")
        stripped = SimLog(
            header=log.header,
            records=[r for r in log.records if r["kind"] != "vision"],
        )
        p = tmp_path / "stripped.jsonl"
        stripped.write(p)
        code = main(["plot", "--kind", "pixel_error", "--log", str(p),
                     "--out", str(tmp_path / "x.svg")])
        assert code == 1
        assert "vision" in capsys.readouterr().err

    def test_missing_log_file_exits_1(self, tmp_path):
        assert main(["plot", "--kind", "depth_profile", "--log", str(tmp_path / "none.jsonl"),
                     "--out", str(tmp_path / "x.svg")]) == 1


class TestCheck:
    def test_valid_config_exits_0(self, capsys):
        assert main(["check", "--config", NOMINAL]) == 0
        assert "ok:" in capsys.readouterr().out

    def test_invalid_config_exits_1(self, tmp_path, capsys):
        bad = tmp_path / "bad.yaml"
        bad.write_text("rates:\n  control: 800.0\n")
        assert main(["check", "--config", str(bad)]) == 1
        assert "rates.control" in capsys.readouterr().err
