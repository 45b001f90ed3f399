import csv
import json
import os
import sys

import pytest

sys.path.append(os.path.dirname(os.path.dirname(__file__)))
from app import experiment_runner
from app.experiment_config import ExperimentConfig
from app.experiment_runner import ExperimentRunner


def run(tmp_path, **fields):
    config = ExperimentConfig(output_dir=str(tmp_path), n_jobs=1, **fields).validate()
    status = ExperimentRunner(config).run()
    with open(tmp_path / config.experiment / "summary.json", encoding="utf-8") as f:
        summary = json.load(f)
    return status, summary


def reports_by_id(summary):
    return {r["id"]: r for r in summary["reports"]}


def rows(tmp_path, experiment, name):
    with open(tmp_path / experiment / name, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def test_verify_exact_identities_pass(tmp_path):
    status, summary = run(tmp_path, experiment="verify-exact")
    reports = reports_by_id(summary)
    for report_id in (
        "verify-exact/z1-series",
        "verify-exact/z1-at-one",
        "verify-exact/q-inf-stochastic",
        "verify-exact/h-transform",
        "verify-exact/z2-ratio",
        "verify-exact/hit-integral/a=1,b=1",
        "verify-exact/convolution/a=4,y=1",
        "verify-exact/normalization",
        "verify-exact/scale-laplace",
        "verify-exact/length-occupation",
        "verify-exact/length-symmetry-scaling",
    ):
        assert reports[report_id]["verdict"] == "pass", report_id
    assert reports["verify-exact/cemetery-asymptote/L=100"]["verdict"] == "info"
    assert status == (1 if any(r["verdict"] == "fail" for r in summary["reports"]) else 0)
    assert os.path.exists(tmp_path / "verify-exact" / "run.log")


def test_peel_hit_small_run(tmp_path):
    status, summary = run(tmp_path, experiment="peel-hit", L_list=[5, 10], N=200)
    reports = reports_by_id(summary)
    assert reports["peel-hit/L=5"]["verdict"] == "info"
    assert reports["peel-hit/L=10"]["threshold"] == 3.0
    assert reports["peel-hit/L=10"]["reference"] == 0.5
    assert "peel-hit/exact/L=5" in reports
    assert "peel-hit/trend" in reports
    assert summary["config"]["N"] == 200
    assert all(r["config"]["seed"] == 42 for r in summary["reports"])
    assert [r["L"] for r in rows(tmp_path, "peel-hit", "samples.csv")] == ["5", "10"]
    assert status in (0, 1)


def test_peel_hit_is_reproducible(tmp_path):
    first = run(tmp_path / "one", experiment="peel-hit", L_list=[5], N=100)[1]
    second = run(tmp_path / "two", experiment="peel-hit", L_list=[5], N=100)[1]
    for summary in (first, second):
        summary["config"].pop("output_dir")
        for report in summary["reports"]:
            report["config"].pop("output_dir")
    assert first == second


def test_peel_height_exports_traces(tmp_path):
    _, summary = run(tmp_path, experiment="peel-height", L_list=[8, 16], N=40, export_limit=2)
    reports = reports_by_id(summary)
    assert reports["peel-height/L=8"]["verdict"] == "info"
    assert "peel-height/trend" in reports
    assert len(rows(tmp_path, "peel-height", "samples.csv")) == 80
    replicates = {r["replicate"] for r in rows(tmp_path, "peel-height", "traces.csv")}
    assert replicates == {"0", "1"}


def test_csbp_length_small_run(tmp_path):
    _, summary = run(tmp_path, experiment="csbp-length", N=60, dt=1e-2, horizon=20.0, export_limit=3)
    reports = reports_by_id(summary)
    assert reports["csbp-length/visit"]["reference"] == 0.5
    assert reports["csbp-length/levy-never-hits"]["reference"] == pytest.approx(0.8)
    assert len(rows(tmp_path, "csbp-length", "samples.csv")) == 60
    assert {r["replicate"] for r in rows(tmp_path, "csbp-length", "paths.csv")} == {"0", "1", "2"}


def test_csbp_length_mean_uses_censored_paths(tmp_path):
    _, summary = run(tmp_path, experiment="csbp-length", N=80, dt=1e-2, horizon=1.0, export_limit=0)
    mean = reports_by_id(summary)["csbp-length/mean"]
    assert mean["reference"] == pytest.approx(2.54325, abs=1e-5)
    samples = rows(tmp_path, "csbp-length", "samples.csv")
    censored = [r for r in samples if r["extinction_time"] == ""]
    assert censored
    assert all(float(r["length_moment"]) > 0 for r in censored)
    for r in samples:
        if r["visits"] == "1":
            assert float(r["visit_weight"]) == 1.0
    weights = sum(float(r["visit_weight"]) for r in samples)
    moments = sum(float(r["length_moment"]) for r in samples)
    assert mean["estimate"] == pytest.approx(moments / weights, rel=1e-9)


def test_csbp_extinction_small_run(tmp_path, monkeypatch):
    monkeypatch.setattr(experiment_runner, "LAPLACE_DRAWS", 20000)
    _, summary = run(tmp_path, experiment="csbp-extinction", N=50, dt=1e-2, horizon=20.0, x_list=[1.0])
    reports = reports_by_id(summary)
    assert reports["csbp-extinction/x=1.0"]["statistic_name"] == "ks"
    assert "csbp-extinction/exact-sampler/x=1.0" in reports
    assert reports["csbp-extinction/stable-laplace"]["n"] == 20000


def test_perimeter_law_and_occupation_small_runs(tmp_path):
    _, summary = run(tmp_path, experiment="perimeter-law", N=80, dt=1e-2, horizon=20.0, bins=5)
    assert "perimeter-law/mass" in reports_by_id(summary)
    _, summary = run(tmp_path, experiment="occupation", N=40, dt=1e-2, horizon=20.0)
    assert reports_by_id(summary)["occupation/y-exp-y"]["statistic_name"] == "relative_error"


def test_tail_small_run(tmp_path):
    _, summary = run(tmp_path, experiment="tail", N=1000, u_grid=[10.0, 20.0])
    reports = reports_by_id(summary)
    assert reports["tail/u=10.0"]["reference"] == 6.0
    assert reports["tail/exponent"]["verdict"] == "info"
