"""End-to-end command-line runs via subprocess: artifacts and exit codes."""
import json
import subprocess
import sys

import numpy as np
import pytest

from cutboot import zoo
from cutboot.sampler import SampleSet


def run_cli(*args):
    return subprocess.run([sys.executable, "-m", "cutboot", *args],
                          capture_output=True, text=True, timeout=300)


@pytest.fixture(scope="module")
def toy_fit_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("toyfit")
    proc = run_cli("fit", "--model", "toy", "--method", "pbmi_s1",
                   "--n", "100", "--N", "150", "--seed", "5",
                   "--out", str(out))
    assert proc.returncode == 0, proc.stderr
    return out


class TestSimulate:
    def test_artifacts_and_reproducibility(self, tmp_path):
        args = ("simulate", "--model", "toy", "--seed", "3", "--n", "50",
                "--rho", "0.5")
        first = run_cli(*args, "--out", str(tmp_path / "a"))
        second = run_cli(*args, "--out", str(tmp_path / "b"))
        assert first.returncode == 0 and second.returncode == 0
        assert first.stdout.strip().endswith("toy_data.csv")
        csv_a = (tmp_path / "a" / "toy_data.csv").read_bytes()
        assert csv_a == (tmp_path / "b" / "toy_data.csv").read_bytes()
        manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
        assert manifest["artifact"] == "dataset"
        assert manifest["model_id"] == "toy"
        assert manifest["seed"] == 3
        assert manifest["n1"] == 50 and manifest["n2"] == 50
        assert manifest["knobs"] == {"n": 50, "rho": 0.5}
        data = zoo.load_dataset_csv("toy", tmp_path / "a" / "toy_data.csv")
        assert manifest["data_digest"] == data.digest()

    def test_invalid_generator_knob_exits_2(self, tmp_path):
        proc = run_cli("simulate", "--model", "toy", "--rho", "1.5",
                       "--out", str(tmp_path))
        assert proc.returncode == 2
        assert "covariance not positive definite" in proc.stderr

    def test_missing_model_exits_2(self, tmp_path):
        proc = run_cli("simulate", "--out", str(tmp_path))
        assert proc.returncode == 2
        assert "--model is required" in proc.stderr


class TestFit:
    def test_sampler_artifacts(self, toy_fit_dir):
        summary = json.loads((toy_fit_dir / "summary.json").read_text())
        assert summary["scenario"] == "S1"
        assert summary["method"] == "pbmi_s1"
        assert summary["n_draws"] == 150
        assert summary["failure_rate"] == 0.0
        assert set(summary["mean"]) == {"theta1_1", "theta2_1"}
        assert set(summary["quantiles"]["theta2_1"]) == {
            "2.5", "25.0", "50.0", "75.0", "97.5"}
        assert np.asarray(summary["covariance"]).shape == (2, 2)
        samples = SampleSet.read_csv(toy_fit_dir / "samples.csv",
                                     toy_fit_dir / "manifest.json")
        assert samples.size == 150
        assert samples.scenario == "S1"
        manifest = json.loads((toy_fit_dir / "manifest.json").read_text())
        assert manifest["model_id"] == "toy"

    def test_worker_count_does_not_change_draws(self, tmp_path):
        outs = []
        for workers in ("1", "3"):
            out = tmp_path / f"w{workers}"
            proc = run_cli("fit", "--model", "toy", "--method", "pbmi_s1",
                           "--n", "60", "--N", "40", "--seed", "2",
                           "--workers", workers, "--out", str(out))
            assert proc.returncode == 0, proc.stderr
            outs.append((out / "samples.csv").read_bytes())
        assert outs[0] == outs[1]

    def test_calibrated_first_stage_weight(self, tmp_path):
        proc = run_cli("fit", "--model", "biased", "--method", "pbmi_s1",
                       "--n1", "500", "--n2", "200", "--N", "40",
                       "--seed", "6", "--w0", "calibrate",
                       "--out", str(tmp_path))
        assert proc.returncode == 0, proc.stderr
        summary = json.loads((tmp_path / "summary.json").read_text())
        data = zoo.biased_generate(n1=500, n2=200, seed=6)
        # For a unit-variance Gaussian stage the calibrated weight is the
        # score variance at the MLE, i.e. the plain sample variance.
        assert summary["w0"] == pytest.approx(float(np.var(data.data1)),
                                              rel=1e-9)
        assert summary["v0"] == 0.0

    def test_exact_sampler_needs_gaussian_structure(self, tmp_path):
        proc = run_cli("fit", "--model", "causal", "--method",
                       "cut_bayes_exact", "--n", "100", "--out",
                       str(tmp_path))
        assert proc.returncode == 2
        assert "exact sampler unavailable for this model" in proc.stderr

    def test_paired_scenario_rejects_unpaired_data(self, tmp_path):
        proc = run_cli("fit", "--model", "biased", "--method", "pbmi_s2",
                       "--n1", "20", "--n2", "30", "--N", "10",
                       "--out", str(tmp_path))
        assert proc.returncode == 2
        assert "paired" in proc.stderr

    def test_all_draws_failing_exits_3(self, tmp_path):
        # One quasi-Newton iteration solves each one-dimensional stage
        # exactly but cannot finish the coupled two-parameter joint
        # problem, so the anchor passes while every draw fails.
        config = tmp_path / "opt.json"
        config.write_text(json.dumps(
            {"optimizer": {"max_iterations": 1,
                           "gradient_tolerance": 1e-10}}))
        proc = run_cli("fit", "--model", "biased", "--method", "full_pb",
                       "--n1", "8", "--n2", "12", "--N", "10", "--seed", "4",
                       "--config", str(config), "--out", str(tmp_path))
        assert proc.returncode == 3
        assert "no draws survived" in proc.stderr

    def test_config_file_overrides_flags_with_warning(self, tmp_path):
        config = tmp_path / "run.json"
        config.write_text(json.dumps({"n_draws": 30}))
        proc = run_cli("fit", "--model", "toy", "--method", "pbmi_s1",
                       "--n", "60", "--N", "50", "--seed", "1",
                       "--config", str(config), "--out", str(tmp_path))
        assert proc.returncode == 0, proc.stderr
        assert "config file overrides --n-draws" in proc.stderr
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["n_draws"] == 30

    def test_optimizer_override_object(self, tmp_path):
        good = tmp_path / "good.json"
        good.write_text(json.dumps(
            {"optimizer": {"max_iterations": 200,
                           "gradient_tolerance": 1e-8}}))
        proc = run_cli("fit", "--model", "toy", "--method", "pbmi_s1",
                       "--n", "60", "--N", "20", "--config", str(good),
                       "--out", str(tmp_path / "ok"))
        assert proc.returncode == 0, proc.stderr
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"optimizer": {"bogus": 1}}))
        proc = run_cli("fit", "--model", "toy", "--method", "pbmi_s1",
                       "--n", "60", "--N", "20", "--config", str(bad),
                       "--out", str(tmp_path / "no"))
        assert proc.returncode == 2
        assert "bad optimizer settings" in proc.stderr

    def test_model_factory_settings_from_config(self, tmp_path):
        config = tmp_path / "run.json"
        config.write_text(json.dumps({"groups": 4,
                                      "generator_knobs": {"groups": 4}}))
        proc = run_cli("fit", "--model", "epi", "--method", "pbmi_s1",
                       "--N", "25", "--seed", "3", "--config", str(config),
                       "--out", str(tmp_path))
        assert proc.returncode == 0, proc.stderr
        samples = SampleSet.read_csv(tmp_path / "samples.csv")
        assert samples.theta1.shape[1] == 4


class TestAsymptotics:
    def test_covariance_report_artifact(self, tmp_path):
        proc = run_cli("asymptotics", "--model", "counterexample",
                       "--n", "20000", "--seed", "9", "--out", str(tmp_path))
        assert proc.returncode == 0, proc.stderr
        payload = json.loads((tmp_path / "covariance.json").read_text())
        assert set(payload) == {
            "model_id", "method", "n1", "n2", "theta1_hat", "theta2_hat",
            "report", "calibrated_w0", "calibrated_v0", "prediction_risk"}
        report = payload["report"]
        assert set(report) >= {"alpha", "d1", "d2", "sigma_s1", "sigma_s2",
                               "sigma_B", "s2_minus_B"}
        assert report["sigma_s2"] is None  # unpaired data
        risk = payload["prediction_risk"]
        assert set(risk) == {"if2", "jf2", "trace_bayes", "trace_pb"}
        assert risk["trace_bayes"] == pytest.approx(-0.25, abs=0.05)
        assert risk["trace_pb"] == pytest.approx(-0.21, abs=0.05)
        assert risk["trace_bayes"] < risk["trace_pb"]
        assert payload["calibrated_v0"] == pytest.approx(0.8, abs=0.05)

    def test_loads_dataset_from_csv(self, tmp_path):
        sim = run_cli("simulate", "--model", "biased", "--n1", "40",
                      "--n2", "400", "--seed", "2", "--out", str(tmp_path))
        assert sim.returncode == 0
        proc = run_cli("asymptotics", "--model", "biased", "--data",
                       str(tmp_path / "biased_data.csv"),
                       "--out", str(tmp_path))
        assert proc.returncode == 0, proc.stderr
        payload = json.loads((tmp_path / "covariance.json").read_text())
        assert payload["n1"] == 40 and payload["n2"] == 400

    def test_paired_method_rejects_unpaired_data(self, tmp_path):
        proc = run_cli("asymptotics", "--model", "biased", "--method",
                       "pbmi_s2", "--n1", "20", "--n2", "40",
                       "--out", str(tmp_path))
        assert proc.returncode == 2
        assert "unpaired" in proc.stderr

    def test_singular_information_exits_4(self, tmp_path):
        path = tmp_path / "degenerate.csv"
        rows = ["z,x,y"] + [f"{0.1 * i},0,{0.3 * i}" for i in range(30)]
        path.write_text("\n".join(rows) + "\n")
        proc = run_cli("asymptotics", "--model", "toy", "--data", str(path),
                       "--out", str(tmp_path))
        assert proc.returncode == 4
        assert "information matrix singular" in proc.stderr


class TestEvaluate:
    def test_coverage_run(self, tmp_path):
        proc = run_cli("evaluate", "--kind", "coverage", "--model", "biased",
                       "--methods", "cut_bayes", "--n", "300",
                       "--replicates", "25", "--N", "200",
                       "--target", "theta1", "--seed", "3",
                       "--out", str(tmp_path))
        assert proc.returncode == 0, proc.stderr
        assert "n=300 method=cut_bayes coverage=" in proc.stdout
        lines = (tmp_path / "coverage.csv").read_text().strip().split("\n")
        assert lines[0].startswith("n,method,target,nominal,coverage")
        fields = lines[1].split(",")
        assert fields[0] == "300" and fields[1] == "cut_bayes"
        assert 0.7 <= float(fields[4]) <= 1.0

    def test_hdr_region_from_samples(self, toy_fit_dir, tmp_path):
        proc = run_cli("evaluate", "--kind", "hdr", "--input",
                       str(toy_fit_dir / "samples.csv"), "--mass", "0.9",
                       "--out", str(tmp_path))
        assert proc.returncode == 0, proc.stderr
        payload = json.loads((tmp_path / "hdr.json").read_text())
        assert set(payload) == {"xs", "ys", "density", "level"}

    def test_hdr_needs_two_columns(self, tmp_path):
        wide = SampleSet(theta1=np.random.default_rng(0).normal(size=(150, 2)),
                         theta2=np.random.default_rng(1).normal(size=(150, 1)),
                         scenario="S1", seed=0, w0=1.0, v0=1.0,
                         converged=np.ones(150, dtype=bool))
        path = tmp_path / "wide.csv"
        wide.to_csv(path)
        proc = run_cli("evaluate", "--kind", "hdr", "--input", str(path),
                       "--out", str(tmp_path))
        assert proc.returncode == 2
        assert "exactly two parameter columns" in proc.stderr

    def test_ks_between_sample_files(self, toy_fit_dir, tmp_path):
        other = tmp_path / "other"
        proc = run_cli("fit", "--model", "toy", "--method", "pbmi_s1",
                       "--n", "100", "--N", "150", "--seed", "6",
                       "--out", str(other))
        assert proc.returncode == 0, proc.stderr
        result = run_cli("evaluate", "--kind", "ks",
                         "--input", str(toy_fit_dir / "samples.csv"),
                         "--input2", str(other / "samples.csv"),
                         "--out", str(tmp_path))
        assert result.returncode == 0, result.stderr
        payload = json.loads((tmp_path / "ks.json").read_text())
        assert payload["column"] == "theta2_1"
        assert 0.0 < payload["ks"] < 1.0
        self_ks = run_cli("evaluate", "--kind", "ks",
                          "--input", str(toy_fit_dir / "samples.csv"),
                          "--input2", str(toy_fit_dir / "samples.csv"),
                          "--column", "theta1_1", "--out", str(tmp_path))
        assert self_ks.returncode == 0
        assert json.loads((tmp_path / "ks.json").read_text())["ks"] == 0.0
        bad = run_cli("evaluate", "--kind", "ks",
                      "--input", str(toy_fit_dir / "samples.csv"),
                      "--input2", str(other / "samples.csv"),
                      "--column", "theta2_9", "--out", str(tmp_path))
        assert bad.returncode == 2
        assert "out of range" in bad.stderr

    def test_missing_input_exits_2(self, tmp_path):
        proc = run_cli("evaluate", "--kind", "hdr", "--out", str(tmp_path))
        assert proc.returncode == 2
        assert "--input is required" in proc.stderr

    def test_elpd_comparison_run(self, tmp_path):
        proc = run_cli("evaluate", "--kind", "elpd-compare", "--n2", "60",
                       "--replicates", "2", "--seed", "2",
                       "--out", str(tmp_path))
        assert proc.returncode == 0, proc.stderr
        for method in ("pbmi", "cut_bayes", "full_bayes", "full_pb"):
            assert f"n2=60 method={method} median_elpd=" in proc.stdout
        lines = (tmp_path / "elpd.csv").read_text().strip().split("\n")
        assert lines[0] == "replicate,n2,method,elpd"
        assert len(lines) == 9  # 2 replicates x 4 methods + header
