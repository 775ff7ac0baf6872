"""Test suite for the bclab command line"""
import json
import sys
from pathlib import Path

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

import pytest

from backend.reporting.plotting import PlotSpec
from backend.reporting.report_generator import ReportGenerator
from backend.services.experiment_runner import (
    EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION, ExperimentRunner, RunOutcome, Subcommand,
)
from frontend.main import run

from tests.conftest import CONFIG_DIR, tiny_config_dict


def _write_config(tmp_path, **sections):
    path = tmp_path / "tiny.json"
    with open(path, "w", encoding="utf-8") as f:
        json.dump(tiny_config_dict(**sections), f, indent=2)
    return path


class TestArguments:
    """Test argument parsing"""

    def test_subcommand_names(self):
        """Test the subcommand list"""
        assert Subcommand.names() == ["forward", "lambda-norm", "blago-check", "control", "cost", "go-check",
                                      "reconstruct", "sweep", "check"]

    def test_unknown_subcommand(self, tmp_path):
        """Test argparse rejects unknown subcommands"""
        with pytest.raises(SystemExit):
            run(["backward", "--config", str(_write_config(tmp_path))])

    def test_config_is_required(self):
        """Test --config is mandatory"""
        with pytest.raises(SystemExit):
            run(["forward"])


class TestValidationExit:
    """Test exit code 2 and the issue lines"""

    def test_invalid_value_names_field(self, tmp_path, capsys):
        """Test an odd step count reports file, line and field"""
        path = _write_config(tmp_path, time={"horizon": 3.24})
        code = run(["forward", "--config", str(path), "--out", str(tmp_path / "out")])
        assert code == EXIT_VALIDATION
        err = capsys.readouterr().err
        assert f"{path}:" in err
        assert "time.horizon" in err
        assert not (tmp_path / "out" / "forward.csv").exists()

    def test_unknown_key_names_field(self, tmp_path, capsys):
        """Test unknown keys are reported with their path"""
        path = _write_config(tmp_path, control={"alpha": [1e-3]})
        assert run(["control", "--config", str(path)]) == EXIT_VALIDATION
        assert "control.alpha: unknown key" in capsys.readouterr().err

    @pytest.mark.parametrize("sections, field", [
        ({"time": {"horizon": "8.0"}}, "time.horizon"),
        ({"control": {"alphas": 0.01}}, "control.alphas"),
    ])
    def test_wrong_type_names_field_and_line(self, tmp_path, capsys, sections, field):
        """Test a wrongly typed value exits 2 with the file line of its key"""
        data = tiny_config_dict()
        for name, values in sections.items():
            data[name].update(values)
        path = tmp_path / "typed.json"
        text = json.dumps(data, indent=2)
        path.write_text(text)
        assert run(["check", "--config", str(path), "--out", str(tmp_path / "out")]) == EXIT_VALIDATION
        err = capsys.readouterr().err
        key = field.split(".")[1]
        line = next(i for i, row in enumerate(text.splitlines(), 1) if f'"{key}":' in row)
        assert f"{path}:{line}: {field}: expected" in err

    def test_missing_config_file(self, tmp_path):
        """Test a config path that does not exist"""
        assert run(["forward", "--config", str(tmp_path / "absent.json")]) == EXIT_VALIDATION


class TestSubcommands:
    """Test artifacts written by the subcommands"""

    def test_forward(self, tmp_path):
        """Test the forward table, plot, summary and snapshot dump"""
        out = tmp_path / "out"
        assert run(["forward", "--config", str(_write_config(tmp_path)), "--out", str(out)]) == EXIT_OK
        for name in ("forward.csv", "forward.svg", "forward.json", "forward.bcsnap"):
            assert (out / name).exists(), name
        lines = (out / "forward.csv").read_text().splitlines()
        assert lines[0] == "step,time,l2_norm,energy"
        # stored steps 0, 10, 20, 30, 40, 60
        assert len(lines) == 7
        summary = json.loads((out / "forward.json").read_text())
        assert summary["metadata"]["subcommand"] == "forward"
        assert summary["result"]["steps"] == 80

    def test_sweep(self, tmp_path):
        """Test one CSV row per amplitude"""
        out = tmp_path / "out"
        code = run(["sweep", "--config", str(_write_config(tmp_path)), "--out", str(out), "--threads", "2"])
        assert code == EXIT_OK
        lines = (out / "sweep.csv").read_text().splitlines()
        assert len(lines) == 4
        assert lines[0].startswith("pair_id,lambda_diff,q_diff")
        assert [line.split(",")[0] for line in lines[1:]] == ["a=0.5", "a=1", "a=2"]

    def test_blago_check(self, tmp_path):
        """Test the identity residual table"""
        out = tmp_path / "out"
        code = run(["blago-check", "--config", str(_write_config(tmp_path)), "--out", str(out)])
        assert code == EXIT_OK
        summary = json.loads((out / "blago-check.json").read_text())
        assert summary["result"]["flagged"] == []
        assert set(summary["result"]["max_residual"]) == {"adjoint", "blago", "correlation", "translated"}

    def test_go_check_writes_artifacts(self, tmp_path):
        """Test the remainder table is written whether or not rows are flagged"""
        out = tmp_path / "out"
        code = run(["go-check", "--config", str(_write_config(tmp_path)), "--out", str(out)])
        assert code in (EXIT_OK, EXIT_NUMERICAL)
        lines = (out / "go-check.csv").read_text().splitlines()
        # four sigmas at orders 0 and 1
        assert len(lines) == 9
        summary = json.loads((out / "go-check.json").read_text())
        assert (code == EXIT_NUMERICAL) == bool(summary["result"]["flagged"])


class TestEmit:
    """Test the CSV, SVG and JSON triple written for every subcommand"""

    def test_rows_are_plotted(self, tiny_experiment, tmp_path):
        """Test a nonempty table gives all three files and no flag"""
        runner = ExperimentRunner(tiny_experiment, ReportGenerator(str(tmp_path), "forward"))
        outcome = RunOutcome("forward")
        rows = [{"time": 0.0, "l2_norm": 0.0}, {"time": 0.4, "l2_norm": 1.5}]
        runner._emit(outcome, rows, PlotSpec("time", "l2_norm"))
        assert outcome.exit_code == EXIT_OK
        for name in ("forward.csv", "forward.svg", "forward.json"):
            assert (tmp_path / name).exists(), name

    def test_empty_plot_is_flagged(self, tiny_experiment, tmp_path):
        """Test a missing plot sets exit code 3 and is named in the summary"""
        runner = ExperimentRunner(tiny_experiment, ReportGenerator(str(tmp_path), "check"))
        outcome = RunOutcome("check")
        rows = [{"invariant": "x", "status": "info"}]
        runner._emit(outcome, rows, PlotSpec("index", "measured_over_budget"), plot_rows=[])
        assert outcome.exit_code == EXIT_NUMERICAL
        assert not (tmp_path / "check.svg").exists()
        assert (tmp_path / "check.csv").exists()
        summary = json.loads((tmp_path / "check.json").read_text())
        assert any("check.svg" in message for message in summary["result"]["flagged"])


class TestShippedConfig:
    """Test the acceptance run of the shipped 1D experiment"""

    @pytest.mark.slow
    def test_default_1d_check(self, tmp_path):
        """Test every judged row of check passes on default_1d.json"""
        out = tmp_path / "out"
        code = run(["check", "--config", str(CONFIG_DIR / "default_1d.json"), "--out", str(out)])
        summary = json.loads((out / "check.json").read_text())
        assert code == EXIT_OK, summary["result"]["flagged"]
        assert summary["result"]["failed"] == 0
        assert (out / "check.svg").exists()


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
