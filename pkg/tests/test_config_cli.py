import json

import numpy as np
import pytest

from symrep.cli import main
from symrep.config import (
    ConfigError,
    load_experiment_config,
    parse_experiment_config,
    resolved_config_dict,
)
from symrep.environments import load_trajectories, sample_trajectory, trajectory_rng
from symrep.models import load_weights
from symrep.training import LinearRampSchedule, StepSchedule, build_model


def tiny_config(**overrides):
    doc = {
        "environment": {"type": "torus", "p": 2},
        "n": 2,
        "m": 2,
        "batch_size": 2,
        "total_steps": 3,
        "learning_rate": 0.003,
        "seed": 0,
    }
    doc.update(overrides)
    return doc


def write_config(tmp_path, doc, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


class TestConfigParsing:
    def test_missing_environment_names_the_field(self):
        with pytest.raises(ConfigError, match="'environment'"):
            parse_experiment_config({"n": 4})

    def test_unknown_top_level_key_rejected(self):
        with pytest.raises(ConfigError, match="lerning_rate"):
            parse_experiment_config(tiny_config(lerning_rate=0.1))

    def test_unknown_nested_key_rejected(self):
        doc = tiny_config()
        doc["environment"]["q"] = 3
        with pytest.raises(ConfigError, match="environment"):
            parse_experiment_config(doc)

    def test_wrong_type_rejected(self):
        with pytest.raises(ConfigError, match="n must be int"):
            parse_experiment_config(tiny_config(n="four"))

    def test_unknown_analysis_rejected(self):
        with pytest.raises(ConfigError, match="unknown analysis"):
            parse_experiment_config(tiny_config(analyses=["group-reprot"]))

    def test_schedule_parsing(self):
        cfg = parse_experiment_config(
            tiny_config(lambda_schedule={"kind": "step", "low": 0.01, "high": 1.0})
        )
        assert cfg.train.lambda_schedule == StepSchedule(0.5, 0.01, 1.0)

        cfg = parse_experiment_config(
            tiny_config(lambda_schedule={"kind": "linear_ramp", "end_step": 2, "max_value": 0.2})
        )
        assert cfg.train.lambda_schedule == LinearRampSchedule(0, 2, 0.2)

    def test_defaults_materialise_and_round_trip(self):
        cfg = parse_experiment_config({"environment": {"type": "factor"}, "n": 5})
        resolved = resolved_config_dict(cfg)
        assert resolved["m"] == 5
        assert resolved["batch_size"] == 16
        assert resolved["lambda_schedule"]["kind"] == "linear_ramp"
        again = resolved_config_dict(parse_experiment_config(resolved))
        assert again == resolved

    def test_invalid_dimensions_become_config_errors(self, tmp_path):
        path = write_config(tmp_path, tiny_config(n=1))
        with pytest.raises(ConfigError):
            load_experiment_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_experiment_config(tmp_path / "nope.json")


class TestCmdTrain:
    def test_successful_run_writes_artifacts(self, tmp_path):
        cfg_path = write_config(tmp_path, tiny_config())
        out = tmp_path / "run"
        assert main(["train", "--config", str(cfg_path), "--out", str(out)]) == 0
        assert (out / "weights.symr").exists()
        assert (out / "train_report.csv").exists()
        snapshot = json.loads((out / "resolved_config.json").read_text())
        assert snapshot["environment"] == {"type": "torus", "p": 2}

        # the weights round-trip into a freshly built model
        cfg = load_experiment_config(cfg_path)
        model = build_model(cfg.train)
        model.load_state_dict(load_weights(out / "weights.symr"))

    def test_missing_required_field_exits_2(self, tmp_path, capsys):
        doc = tiny_config()
        del doc["environment"]
        cfg_path = write_config(tmp_path, doc)
        assert main(["train", "--config", str(cfg_path), "--out", str(tmp_path / "o")]) == 2
        assert "environment" in capsys.readouterr().err

    def test_repeat_runs_byte_identical(self, tmp_path):
        cfg_path = write_config(tmp_path, tiny_config())
        outs = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            assert main(["train", "--config", str(cfg_path), "--out", str(out)]) == 0
            outs.append(out)
        assert (outs[0] / "train_report.csv").read_bytes() == (outs[1] / "train_report.csv").read_bytes()
        assert (outs[0] / "weights.symr").read_bytes() == (outs[1] / "weights.symr").read_bytes()

    def test_divergence_exits_3(self, tmp_path):
        cfg_path = write_config(tmp_path, tiny_config(learning_rate=1e200, total_steps=5))
        with np.errstate(all="ignore"):
            assert main(["train", "--config", str(cfg_path), "--out", str(tmp_path / "o")]) == 3

    def test_seed_override(self, tmp_path):
        cfg_path = write_config(tmp_path, tiny_config())
        o1, o2 = tmp_path / "a", tmp_path / "b"
        assert main(["train", "--config", str(cfg_path), "--out", str(o1), "--seed", "7"]) == 0
        assert main(["train", "--config", str(cfg_path), "--out", str(o2)]) == 0
        assert (o1 / "weights.symr").read_bytes() != (o2 / "weights.symr").read_bytes()
        assert json.loads((o1 / "resolved_config.json").read_text())["seed"] == 7


@pytest.fixture()
def trained_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("trained")
    cfg_path = write_config(tmp, tiny_config(total_steps=5))
    out = tmp / "run"
    assert main(["train", "--config", str(cfg_path), "--out", str(out)]) == 0
    return cfg_path, out


class TestCmdAnalyze:
    def test_group_report_alone_yields_one_csv(self, trained_run, tmp_path):
        cfg_path, run = trained_run
        out = tmp_path / "an"
        code = main(
            [
                "analyze",
                "--weights",
                str(run / "weights.symr"),
                "--config",
                str(cfg_path),
                "--out",
                str(out),
                "--group-report",
            ]
        )
        assert code == 0
        csvs = sorted(p.name for p in out.glob("*.csv"))
        assert csvs == ["group_report.csv"]
        assert (out / "group_report.txt").exists()

    def test_projection_seeds_yield_that_many_csvs(self, trained_run, tmp_path):
        cfg_path, run = trained_run
        out = tmp_path / "an"
        code = main(
            [
                "analyze",
                "--weights",
                str(run / "weights.symr"),
                "--config",
                str(cfg_path),
                "--out",
                str(out),
                "--project-2d",
                "--proj-seeds",
                "5",
            ]
        )
        assert code == 0
        assert len(list(out.glob("projection_*.csv"))) == 5

    def test_corrupted_magic_exits_2(self, trained_run, tmp_path, capsys):
        cfg_path, run = trained_run
        bad = tmp_path / "bad.symr"
        blob = bytearray((run / "weights.symr").read_bytes())
        blob[:4] = b"JUNK"
        bad.write_bytes(bytes(blob))
        code = main(
            ["analyze", "--weights", str(bad), "--config", str(cfg_path), "--out", str(tmp_path / "o")]
        )
        assert code == 2
        assert "magic" in capsys.readouterr().err

    def test_architecture_mismatch_exits_2(self, trained_run, tmp_path):
        cfg_path, run = trained_run
        other_cfg = write_config(tmp_path, tiny_config(n=3), name="other.json")
        code = main(
            [
                "analyze",
                "--weights",
                str(run / "weights.symr"),
                "--config",
                str(other_cfg),
                "--out",
                str(tmp_path / "o"),
                "--group-report",
            ]
        )
        assert code == 2

    def test_invalid_analysis_for_environment_exits_2(self, trained_run, tmp_path):
        cfg_path, run = trained_run
        code = main(
            [
                "analyze",
                "--weights",
                str(run / "weights.symr"),
                "--config",
                str(cfg_path),
                "--out",
                str(tmp_path / "o"),
                "--angle-sweep",
            ]
        )
        assert code == 2

    def test_no_analyses_selected_exits_2(self, trained_run, tmp_path):
        cfg_path, run = trained_run
        code = main(
            [
                "analyze",
                "--weights",
                str(run / "weights.symr"),
                "--config",
                str(cfg_path),
                "--out",
                str(tmp_path / "o"),
            ]
        )
        assert code == 2


class TestCmdExportDataset:
    def test_zero_count_writes_valid_empty_dataset(self, tmp_path):
        cfg_path = write_config(tmp_path, tiny_config())
        out = tmp_path / "data"
        assert main(["export-dataset", "--config", str(cfg_path), "--out", str(out), "--count", "0"]) == 0
        trajs, meta = load_trajectories(out / "trajectories.csv")
        assert trajs == []
        assert meta["trajectory_count"] == 0

    def test_reimport_replays_identically(self, tmp_path):
        cfg_path = write_config(tmp_path, tiny_config(total_steps=1))
        out = tmp_path / "data"
        assert main(["export-dataset", "--config", str(cfg_path), "--out", str(out), "--count", "4"]) == 0
        trajs, meta = load_trajectories(out / "trajectories.csv")
        assert len(trajs) == 4
        cfg = load_experiment_config(cfg_path)
        env = cfg.train.env.build()
        for i, traj in enumerate(trajs):
            again = sample_trajectory(
                env, trajectory_rng(meta["seed"], 0, i), meta["steps_per_trajectory"]
            )
            assert np.array_equal(again.observations, traj.observations)
            assert np.array_equal(again.actions, traj.actions)

    def test_fixed_seed_identical_files(self, tmp_path):
        cfg_path = write_config(tmp_path, tiny_config())
        o1, o2 = tmp_path / "d1", tmp_path / "d2"
        for out in (o1, o2):
            assert main(["export-dataset", "--config", str(cfg_path), "--out", str(out), "--count", "3"]) == 0
        assert (o1 / "trajectories.csv").read_bytes() == (o2 / "trajectories.csv").read_bytes()


class TestCmdPredictBench:
    def test_shape_contract_and_manifest(self, tmp_path):
        cfg_path = write_config(tmp_path, tiny_config(total_steps=2, start="center"))
        out = tmp_path / "bench"
        code = main(
            [
                "predict-bench",
                "--config",
                str(cfg_path),
                "--out",
                str(out),
                "--seeds",
                "1",
                "--horizon",
                "1",
                "--trials",
                "3",
            ]
        )
        assert code == 0
        lines = (out / "rollout_curve.csv").read_text().splitlines()
        assert lines[0] == "model,step,bce_mean,bce_ci95,accuracy_mean,accuracy_ci95"
        assert len(lines) == 4  # three model variants, one step each
        manifest = json.loads((out / "bench_manifest.json").read_text())
        assert manifest["completed"] == {"0": "bench_seed_0.csv"}
        assert (out / "bench_seed_0.csv").exists()

    def test_resume_skips_completed_seeds(self, tmp_path):
        cfg_path = write_config(tmp_path, tiny_config(total_steps=2, start="center"))
        out = tmp_path / "bench"
        args = [
            "predict-bench",
            "--config",
            str(cfg_path),
            "--out",
            str(out),
            "--horizon",
            "2",
            "--trials",
            "3",
        ]
        assert main(args + ["--seeds", "1"]) == 0
        first = (out / "bench_seed_0.csv").read_bytes()
        stamp = (out / "bench_seed_0.csv").stat().st_mtime_ns
        assert main(args + ["--seeds", "2"]) == 0
        # seed 0 results were reused, not recomputed
        assert (out / "bench_seed_0.csv").read_bytes() == first
        assert (out / "bench_seed_0.csv").stat().st_mtime_ns == stamp
        manifest = json.loads((out / "bench_manifest.json").read_text())
        assert set(manifest["completed"]) == {"0", "1"}
        lines = (out / "rollout_curve.csv").read_text().splitlines()
        assert len(lines) == 7  # header + 3 models x 2 steps

    def test_changed_parameters_discard_partials(self, tmp_path, capsys):
        cfg_path = write_config(tmp_path, tiny_config(total_steps=2, start="center"))
        out = tmp_path / "bench"
        base = ["predict-bench", "--config", str(cfg_path), "--out", str(out), "--seeds", "1", "--trials", "2"]
        assert main(base + ["--horizon", "1"]) == 0
        assert main(base + ["--horizon", "2"]) == 0
        manifest = json.loads((out / "bench_manifest.json").read_text())
        assert manifest["horizon"] == 2

    def test_continuous_environment_rejected(self, tmp_path):
        cfg_path = write_config(
            tmp_path, {"environment": {"type": "sphere"}, "n": 3, "total_steps": 1}
        )
        code = main(
            ["predict-bench", "--config", str(cfg_path), "--out", str(tmp_path / "o"), "--seeds", "1"]
        )
        assert code == 2
