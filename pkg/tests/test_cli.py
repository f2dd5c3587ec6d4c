import json
from pathlib import Path

import pytest

from aant.cli import main
from aant.reports import builtin_corpus, serialize_report

SMALL_CONFIG = {
    "data": {
        "n_pos": 8,
        "n_neg": 12,
        "n_frames": 12,
        "dim": 8,
        "fps": 10.0,
        "toa": 10,
        "separability": 3.0,
        "seed": 3,
        "test_fraction": 0.25,
    },
    "model": {"text_dim": 32, "heads": 2},
    "train": {"epochs": 2, "batch_size": 5},
}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One gen-data + train run shared by the command tests."""
    root = tmp_path_factory.mktemp("pipeline")
    config = root / "config.json"
    config.write_text(json.dumps(SMALL_CONFIG))
    data_dir = root / "data"
    run_dir = root / "run"
    assert main(["gen-data", "--config", str(config), "--out", str(data_dir)]) == 0
    assert main(["train", "--config", str(config), "--data", str(data_dir), "--out", str(run_dir)]) == 0
    return {"root": root, "config": config, "data": data_dir, "run": run_dir}


class TestPipeline:
    def test_gen_data_outputs(self, pipeline):
        manifest = json.loads((pipeline["data"] / "manifest.json").read_text())
        assert len(manifest) == 20
        assert (pipeline["data"] / manifest[0]).exists()

    def test_train_outputs(self, pipeline):
        run = pipeline["run"]
        assert (run / "checkpoint" / "manifest.json").exists()
        assert (run / "history.csv").exists()
        assert (run / "train_manifest.json").exists()
        assert (run / "test_manifest.json").exists()

    def test_eval_emits_metrics_json(self, pipeline, capsys):
        out = pipeline["root"] / "eval"
        code = main(
            [
                "eval",
                "--checkpoint",
                str(pipeline["run"] / "checkpoint"),
                "--data",
                str(pipeline["run"] / "test_manifest.json"),
                "--out",
                str(out),
            ]
        )
        assert code == 0
        payload = json.loads((out / "metrics.json").read_text())
        assert "ap" in payload and 0.0 <= payload["ap"] <= 1.0
        assert "mtta_s" in payload
        printed = json.loads(capsys.readouterr().out)
        assert printed["ap"] == payload["ap"]
        header = (out / "pr_curve.csv").read_text().splitlines()[0]
        assert header == "threshold,precision,recall,f1"

    def test_sweep_threshold_summary(self, pipeline, capsys):
        out = pipeline["root"] / "sweep"
        code = main(
            [
                "sweep-threshold",
                "--checkpoint",
                str(pipeline["run"] / "checkpoint"),
                "--data",
                str(pipeline["run"] / "test_manifest.json"),
                "--out",
                str(out),
            ]
        )
        assert code == 0
        summary = json.loads((out / "threshold_summary.json").read_text())
        for key in ("learned_tau", "f1_at_learned_rule", "f1_at_fixed_rule", "best_f1_threshold", "best_f1"):
            assert key in summary
        assert (out / "threshold_sweep.csv").exists()
        capsys.readouterr()

    def test_perturb_traces_csv(self, pipeline):
        out = pipeline["root"] / "traces.csv"
        code = main(
            [
                "perturb",
                "--config",
                str(pipeline["config"]),
                "--checkpoint",
                str(pipeline["run"] / "checkpoint"),
                "--kind",
                "gaussian_noise",
                "--seed",
                "5",
                "--out",
                str(out),
            ]
        )
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "perturbation,frame,probability"
        names = {line.split(",")[0] for line in lines[1:]}
        assert names == {"baseline", "0_gaussian_noise"}

    def test_alert_log(self, pipeline):
        out = pipeline["root"] / "alerts.jsonl"
        code = main(
            [
                "alert",
                "--checkpoint",
                str(pipeline["run"] / "checkpoint"),
                "--data",
                str(pipeline["run"] / "test_manifest.json"),
                "--out",
                str(out),
            ]
        )
        assert code == 0
        entries = [json.loads(line) for line in out.read_text().splitlines()]
        assert len(entries) == 5  # test split size
        assert all(entry["legality"]["passed"] for entry in entries)

    def test_archive_command(self, pipeline):
        manifest = json.loads((pipeline["run"] / "test_manifest.json").read_text())
        feature_file = manifest[0]
        env_log = pipeline["root"] / "env.json"
        env_log.write_text(
            json.dumps(
                {
                    "weather": "Clear",
                    "lighting": "Daylight",
                    "roadway_surface": "Dry",
                    "road_conditions": "Usual",
                    "participants": [{"agent_type": "car", "movement": "Stopped"}],
                    "collision_type": "Rear End",
                    "severity": "Minor",
                    "damage_area": "Rear Bumper",
                }
            )
        )
        out = pipeline["root"] / "archive"
        code = main(
            [
                "archive",
                "--checkpoint",
                str(pipeline["run"] / "checkpoint"),
                "--features",
                feature_file,
                "--env-log",
                str(env_log),
                "--out",
                str(out),
            ]
        )
        # the chosen test video may or may not cross the rule; both outcomes
        # are contractual: 0 with an archived file, or 1 with a clear error
        if code == 0:
            assert list(Path(out).glob("*.json"))
        else:
            assert code == 1

    def test_gen_data_idempotent(self, pipeline, tmp_path):
        again = tmp_path / "data2"
        assert main(["gen-data", "--config", str(pipeline["config"]), "--out", str(again)]) == 0
        first = pipeline["data"]
        assert (again / "manifest.json").read_text() == (first / "manifest.json").read_text()
        name = json.loads((again / "manifest.json").read_text())[0]
        assert (again / name).read_bytes() == (first / name).read_bytes()

    def test_eval_idempotent(self, pipeline, tmp_path, capsys):
        outs = []
        for sub in ("e1", "e2"):
            out = tmp_path / sub
            assert (
                main(
                    [
                        "eval",
                        "--checkpoint",
                        str(pipeline["run"] / "checkpoint"),
                        "--data",
                        str(pipeline["run"] / "test_manifest.json"),
                        "--out",
                        str(out),
                    ]
                )
                == 0
            )
            outs.append(out)
        capsys.readouterr()
        assert (outs[0] / "metrics.json").read_bytes() == (outs[1] / "metrics.json").read_bytes()
        assert (outs[0] / "pr_curve.csv").read_bytes() == (outs[1] / "pr_curve.csv").read_bytes()


class TestReportCommands:
    @pytest.fixture()
    def report_dir(self, tmp_path):
        out = tmp_path / "reports"
        out.mkdir()
        for report in builtin_corpus():
            (out / f"{report.id}.json").write_text(serialize_report(report))
        return out

    def test_report_stats(self, report_dir, capsys):
        assert main(["report-stats", "--reports", str(report_dir)]) == 0
        stats = json.loads(capsys.readouterr().out)
        assert stats["n_reports"] == 12
        assert stats["factors"]["collision_type"]["Rear End"] == 1

    def test_report_validate_clean_corpus(self, report_dir):
        assert main(["report-validate", "--reports", str(report_dir)]) == 0

    def test_report_validate_flags_bad_report(self, report_dir, capsys):
        bad = {
            "id": "bad1",
            "is_accident": False,
            "pre": {
                "weather": "Clear",
                "lighting": "Daylight",
                "roadway_surface": "Dry",
                "road_conditions": "Usual",
            },
            "during": {"participants": [{"agent_type": "car", "movement": "Stopped"}]},
            "narrative": "A rear-end collision occurred in front of us.",
        }
        (report_dir / "bad1.json").write_text(json.dumps(bad))
        assert main(["report-validate", "--reports", str(report_dir)]) == 1
        assert "R2" in capsys.readouterr().out


class TestExitCodes:
    def test_unknown_flag_exits_one(self, capsys):
        assert main(["gen-data", "--bogus", "x", "--out", "y"]) == 1
        assert "usage" in capsys.readouterr().err

    def test_unknown_subcommand_exits_one(self, capsys):
        assert main(["frobnicate"]) == 1
        capsys.readouterr()

    def test_bad_config_exits_one(self, tmp_path, capsys):
        config = tmp_path / "c.json"
        config.write_text(json.dumps({"data": {"n_pos": 4}, "mystery_section": {}}))
        assert main(["gen-data", "--config", str(config), "--out", str(tmp_path / "d")]) == 1
        assert "mystery_section" in capsys.readouterr().err

    def test_unknown_config_key_rejected(self, tmp_path, capsys):
        config = tmp_path / "c.json"
        config.write_text(json.dumps({"data": {"n_pos": 4, "bogus_key": 1}}))
        assert main(["gen-data", "--config", str(config), "--out", str(tmp_path / "d")]) == 1
        assert "bogus_key" in capsys.readouterr().err

    def test_missing_checkpoint_is_validation_error(self, tmp_path, capsys):
        code = main(
            ["eval", "--checkpoint", str(tmp_path / "nope"), "--data", str(tmp_path / "nope2"), "--out", str(tmp_path / "o")]
        )
        assert code == 1
        capsys.readouterr()


def test_selfcheck_exits_zero(capsys):
    assert main(["selfcheck"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "FAIL" not in out
