"""Command-line surface: standalone file mode and run-directory mode."""

import json

import pytest
from click.testing import CliRunner

from conftest import GRAPHS_DIR
from xtcbench.cli import main


@pytest.fixture
def runner():
    return CliRunner()


def write_config(tmp_path, **overrides):
    config = {
        "graphs_dir": str(GRAPHS_DIR),
        "run_root": str(tmp_path / "runs"),
        "run_id": "cli-run",
    }
    config.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config), encoding="utf-8")
    return path


class TestStandalone:
    def test_match_prints_result_json(self, runner):
        gt = str(GRAPHS_DIR / "kitchen.json")
        result = runner.invoke(main, ["match", "--gt", gt, "--pred", gt])
        assert result.exit_code == 0
        doc = json.loads(result.output)
        assert {p["gt_id"] for p in doc["node_pairs"]} == {"n1", "n2", "n3", "n4"}
        assert doc["unmatched_gt"] == []

    def test_stats_prints_table_row(self, runner):
        result = runner.invoke(main, ["stats", "--graphs", str(GRAPHS_DIR)])
        assert result.exit_code == 0
        row = json.loads(result.output)
        assert row["Total Images"] == 3
        assert "Total Facts (|F|)" in row

    def test_stats_empty_dir_fails(self, runner, tmp_path):
        result = runner.invoke(main, ["stats", "--graphs", str(tmp_path)])
        assert result.exit_code == 1

    def test_qagen_prints_prompt_and_items(self, runner):
        result = runner.invoke(
            main, ["qagen", "--graph", str(GRAPHS_DIR / "park.json")]
        )
        assert result.exit_code == 0
        doc = json.loads(result.output)
        assert "the person is sitting on the bench" in doc["prompt"]
        assert len(doc["qa"]) == 6

    def test_refine_standalone(self, runner, tmp_path):
        preds = tmp_path / "preds.json"
        preds.write_text(
            json.dumps(
                {
                    "predictions": [
                        {
                            "source": "n1",
                            "target": "n2",
                            "scores": {"NR": 0.1, "sitting on": 0.9},
                        }
                    ]
                }
            ),
            encoding="utf-8",
        )
        result = runner.invoke(
            main,
            [
                "refine",
                "--graph",
                str(GRAPHS_DIR / "park.json"),
                "--preds",
                str(preds),
            ],
        )
        assert result.exit_code == 0
        doc = json.loads(result.output)
        assert len(doc["edges"]) == 1


class TestRunDirectory:
    def test_pipeline_reports_all_ones(self, runner, tmp_path):
        config = write_config(tmp_path)
        result = runner.invoke(main, ["pipeline", "--config", str(config)])
        assert result.exit_code == 0
        doc = json.loads(result.output)
        assert doc["generation"]["Overall Gen."] == 1.0
        assert doc["understanding"]["Overall Und."] == 1.0

    def test_chained_subcommands_equal_pipeline(self, runner, tmp_path):
        chained = write_config(tmp_path, run_id="chained")
        for command in ("refine", "qagen", "match", "score"):
            result = runner.invoke(main, [command, "--config", str(chained)])
            assert result.exit_code == 0, result.output
        chained_report = runner.invoke(main, ["report", "--config", str(chained)])
        assert chained_report.exit_code == 0

        piped = write_config(tmp_path, run_id="piped")
        piped_report = runner.invoke(main, ["pipeline", "--config", str(piped)])
        assert piped_report.exit_code == 0
        assert chained_report.output == piped_report.output

        run_root = tmp_path / "runs"
        chained_bytes = (run_root / "chained" / "report" / "report.json").read_bytes()
        piped_bytes = (run_root / "piped" / "report" / "report.json").read_bytes()
        assert chained_bytes == piped_bytes

    def test_partial_run_exits_two(self, runner, tmp_path):
        graphs = tmp_path / "graphs"
        graphs.mkdir()
        (graphs / "ok.json").write_text(
            (GRAPHS_DIR / "park.json").read_text("utf-8"), encoding="utf-8"
        )
        (graphs / "broken.json").write_text("{oops", encoding="utf-8")
        config = write_config(tmp_path, graphs_dir=str(graphs))
        result = runner.invoke(main, ["pipeline", "--config", str(config)])
        assert result.exit_code == 2

    def test_missing_graphs_dir_exits_one(self, runner, tmp_path):
        config = write_config(tmp_path, graphs_dir=str(tmp_path / "nowhere"))
        result = runner.invoke(main, ["pipeline", "--config", str(config)])
        assert result.exit_code == 1

    def test_flag_overrides_config(self, runner, tmp_path):
        config = write_config(tmp_path)
        result = runner.invoke(
            main,
            ["pipeline", "--config", str(config), "--run-id", "override"],
        )
        assert result.exit_code == 0
        assert (tmp_path / "runs" / "override" / "manifest.json").exists()

    def test_resume_flag_targets_existing_run(self, runner, tmp_path):
        config = write_config(tmp_path, run_id="first")
        assert runner.invoke(main, ["pipeline", "--config", str(config)]).exit_code == 0
        result = runner.invoke(
            main, ["pipeline", "--config", str(config), "--resume", "first"]
        )
        assert result.exit_code == 0

    def test_subcommand_list(self, runner):
        result = runner.invoke(main, ["--help"])
        for command in ("refine", "qagen", "match", "score", "report", "pipeline", "stats"):
            assert command in result.output
