import os
import sys

sys.path.append(os.path.dirname(os.path.dirname(__file__)))
from backend.report_logger import ReportLogger
from backend.stat_checks import SummaryReport
from data.view_reports import format_number, format_report, load_summaries, main


def write_run(root, experiment, statistic):
    logger = ReportLogger(str(root), experiment, {"seed": 3, "N": 10})
    logger.add_report(
        SummaryReport(
            id=f"{experiment}/check", config={"seed": 3}, n=10, estimate=0.5, ci=(0.4, 0.6),
            reference=0.5, statistic_name="z_score", statistic=statistic, threshold=3.0,
        )
    )
    logger.save_summary()


def test_empty_output_dir(tmp_path, capsys):
    assert main(str(tmp_path)) == 1
    assert "No runs found yet." in capsys.readouterr().out


def test_prints_every_run(tmp_path, capsys):
    write_run(tmp_path, "peel-hit", 1.0)
    write_run(tmp_path, "tail", 1.0)
    assert [s["experiment"] for s in load_summaries(str(tmp_path))] == ["peel-hit", "tail"]
    assert main(str(tmp_path)) == 0
    out = capsys.readouterr().out
    assert "PEEL-HIT" in out and "tail/check" in out
    assert "All checked reports passed." in out


def test_failed_report_sets_status(tmp_path, capsys):
    write_run(tmp_path, "tail", 5.0)
    assert main(str(tmp_path)) == 1
    assert "1 report(s) failed" in capsys.readouterr().out


def test_formatting():
    assert format_number(None) == "n/a"
    assert format_number(float("nan")) == "n/a"
    assert format_number(0.25) == "0.25"
    line = format_report({"id": "x", "verdict": "info", "estimate": 1.0, "reference": None, "n": 3,
                          "statistic_name": "ks", "statistic": 0.1, "threshold": None})
    assert line.strip().startswith("· x")
    assert "<=" not in line
