"""End-to-end command-line behavior: artifacts, config layering, exit codes."""

import json
import os

import numpy as np
import pytest

from bnnood import cli, variational_net as vn


TINY_TRAIN = ["--train-n", "90", "--epochs", "3", "--batch", "32", "--seed", "3"]


@pytest.fixture(scope="module")
def trained_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("trained")
    code = cli.main(["train", "--preset", "blobs", "--out-dir", str(out)]
                    + TINY_TRAIN)
    assert code == 0
    return out


def read_csv_rows(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# config ")
    header = lines[1].split(",")
    return json.loads(lines[0][len("# config "):]), header, \
        [line.split(",") for line in lines[2:]]


class TestTrain:
    def test_artifacts_exist(self, trained_dir):
        for name in ("checkpoint.bin", "train_report.json", "train_curve.csv"):
            assert (trained_dir / name).exists()

    def test_stdout_lists_artifacts(self, tmp_path, capsys):
        code = cli.main(["train", "--preset", "blobs", "--out-dir",
                         str(tmp_path)] + TINY_TRAIN)
        assert code == 0
        out = capsys.readouterr().out
        assert "checkpoint:" in out
        assert "best validation accuracy" in out

    def test_report_echoes_merged_config(self, trained_dir):
        payload = json.loads((trained_dir / "train_report.json").read_text())
        config = payload["config"]
        assert config["command"] == "train"
        assert config["preset"] == "blobs"
        assert config["data"] == "blobs"
        assert config["epochs"] == 3
        assert config["train_n"] == 90
        assert config["seed"] == 3
        assert config["lr"] == cli.DEFAULTS["lr"]
        assert payload["epochs_run"] == 3
        assert 0 <= payload["best_epoch"] < 3

    def test_rerun_is_byte_identical(self, tmp_path):
        argv = ["train", "--preset", "blobs", "--out-dir", str(tmp_path)] \
            + TINY_TRAIN
        assert cli.main(argv) == 0
        names = ("checkpoint.bin", "train_report.json", "train_curve.csv")
        first = {n: (tmp_path / n).read_bytes() for n in names}
        assert cli.main(argv) == 0
        for n in names:
            assert (tmp_path / n).read_bytes() == first[n], n

    def test_missing_architecture_exits_2(self, tmp_path, capsys):
        code = cli.main(["train", "--data", "blobs", "--out-dir", str(tmp_path)])
        assert code == 2
        assert "config error" in capsys.readouterr().err

    def test_missing_idx_file_exits_3_without_partial_output(self, tmp_path,
                                                             capsys):
        out = tmp_path / "run"
        code = cli.main(["train", "--preset", "mnist-mlp", "--data",
                         f"{tmp_path}/no.images:{tmp_path}/no.labels",
                         "--out-dir", str(out)] + TINY_TRAIN)
        assert code == 3
        assert "data error" in capsys.readouterr().err
        assert not out.exists()  # failed before any artifact was written


class TestScore:
    def test_csv_shape_and_values(self, trained_dir, tmp_path):
        code = cli.main(["score", "--checkpoint",
                         str(trained_dir / "checkpoint.bin"),
                         "--data", "blobs", "--eval-n", "40", "--samples", "8",
                         "--seed", "5", "--out-dir", str(tmp_path)])
        assert code == 0
        config, header, rows = read_csv_rows(tmp_path / "scores.csv")
        assert header == ["input_index", "dataset_tag", "score_name", "value",
                          "orientation"]
        assert config["command"] == "score"
        assert config["samples"] == 8
        from bnnood import scores
        assert len(rows) == len(scores.SCORE_NAMES) * 42  # ceil(40/3)*3 inputs
        assert {r[1] for r in rows} == {"blobs"}
        assert all(np.isfinite(float(r[3])) for r in rows)

    def test_subset_flag(self, trained_dir, tmp_path):
        code = cli.main(["score", "--checkpoint",
                         str(trained_dir / "checkpoint.bin"),
                         "--data", "blobs", "--eval-n", "30", "--samples", "4",
                         "--scores", "ds,pe", "--out-dir", str(tmp_path)])
        assert code == 0
        _, _, rows = read_csv_rows(tmp_path / "scores.csv")
        assert [r[2] for r in rows[:1]] == ["pe"]  # registry order
        assert {r[2] for r in rows} == {"pe", "ds"}

    def test_zeroed_sigma_checkpoint_gives_constant_ds(self, trained_dir,
                                                       tmp_path):
        params, _ = vn.load_checkpoint(trained_dir / "checkpoint.bin")
        params.rho[:] = -1000.0  # softplus underflows to exactly zero sigma
        frozen = tmp_path / "frozen.bin"
        vn.save_checkpoint(params, frozen)
        code = cli.main(["score", "--checkpoint", str(frozen), "--data",
                         "blobs", "--eval-n", "30", "--samples", "4",
                         "--out-dir", str(tmp_path)])
        assert code == 0
        _, _, rows = read_csv_rows(tmp_path / "scores.csv")
        ds_values = {r[3] for r in rows if r[2] == "ds"}
        std_values = {r[3] for r in rows if r[2] == "std_ll"}
        assert ds_values == {"4.0"}   # every input: all 4 members agree
        assert std_values == {"0.0"}

    def test_unknown_score_name_exits_2(self, trained_dir, tmp_path, capsys):
        code = cli.main(["score", "--checkpoint",
                         str(trained_dir / "checkpoint.bin"),
                         "--data", "blobs", "--scores", "ds,banana",
                         "--out-dir", str(tmp_path)])
        assert code == 2
        assert "banana" in capsys.readouterr().err

    def test_missing_checkpoint_flag_exits_2(self, tmp_path):
        assert cli.main(["score", "--data", "blobs",
                         "--out-dir", str(tmp_path)]) == 2

    def test_bad_dataset_spec_exits_2(self, trained_dir, tmp_path):
        assert cli.main(["score", "--checkpoint",
                         str(trained_dir / "checkpoint.bin"),
                         "--data", "nonsense",
                         "--out-dir", str(tmp_path)]) == 2


class TestEvaluate:
    def run_eval(self, trained_dir, out_dir, extra=()):
        return cli.main(["evaluate", "--preset", "blobs", "--checkpoint",
                         str(trained_dir / "checkpoint.bin"),
                         "--eval-n", "60", "--samples", "8", "--seed", "4",
                         "--out-dir", str(out_dir)] + list(extra))

    def test_artifacts_and_table(self, trained_dir, tmp_path, capsys):
        assert self.run_eval(trained_dir, tmp_path) == 0
        out = capsys.readouterr().out
        assert "OoD dataset" in out and "AUROC ds" in out
        for name in ("ood_report.json", "ood_report.txt",
                     "scores_blobs.csv", "scores_ring.csv"):
            assert (tmp_path / name).exists(), name
        payload = json.loads((tmp_path / "ood_report.json").read_text())
        assert payload["meta"]["config"]["command"] == "evaluate"
        assert payload["meta"]["in_dataset"] == "blobs"
        assert {r["out_dataset"] for r in payload["rows"]} == {"ring"}
        assert all(0 <= r["auroc_pct"] <= 100 for r in payload["rows"])

    def test_score_subset(self, trained_dir, tmp_path):
        assert self.run_eval(trained_dir, tmp_path, ["--scores", "mi,ds"]) == 0
        payload = json.loads((tmp_path / "ood_report.json").read_text())
        assert [r["score_name"] for r in payload["rows"]] == ["mi", "ds"]

    def test_missing_ood_idx_exits_3(self, trained_dir, tmp_path):
        code = cli.main(["evaluate", "--checkpoint",
                         str(trained_dir / "checkpoint.bin"),
                         "--data", "blobs", "--ood", "ring,gone.i:gone.l",
                         "--eval-n", "60", "--samples", "4",
                         "--out-dir", str(tmp_path)])
        assert code == 3

    def test_duplicate_tags_get_suffixed(self, trained_dir, tmp_path):
        # OoD drawn from the training distribution itself: the tag collides
        # with the iD tag and must be renamed, and separation is near chance
        code = cli.main(["evaluate", "--checkpoint",
                         str(trained_dir / "checkpoint.bin"),
                         "--data", "blobs", "--ood", "blobs",
                         "--eval-n", "300", "--samples", "8", "--seed", "4",
                         "--out-dir", str(tmp_path)])
        assert code == 0
        payload = json.loads((tmp_path / "ood_report.json").read_text())
        assert {r["out_dataset"] for r in payload["rows"]} == {"blobs-ood1"}
        assert (tmp_path / "scores_blobs.csv").exists()
        assert (tmp_path / "scores_blobs-ood1.csv").exists()
        for row in payload["rows"]:
            assert 35.0 <= row["auroc_pct"] <= 65.0

    def test_missing_ood_flag_exits_2(self, trained_dir, tmp_path, capsys):
        code = cli.main(["evaluate", "--checkpoint",
                         str(trained_dir / "checkpoint.bin"),
                         "--data", "blobs", "--out-dir", str(tmp_path)])
        assert code == 2
        assert "ood" in capsys.readouterr().err


class TestConfigLayering:
    def test_file_overrides_preset_flags_override_file(self, tmp_path):
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({"epochs": 5, "train_n": 90, "batch": 32,
                                   "seed": 3}))
        out = tmp_path / "out"
        code = cli.main(["train", "--preset", "blobs", "--config", str(cfg),
                         "--epochs", "2", "--out-dir", str(out)])
        assert code == 0
        config = json.loads((out / "train_report.json").read_text())["config"]
        assert config["epochs"] == 2      # flag beats file
        assert config["train_n"] == 90    # file beats default
        assert config["data"] == "blobs"  # preset fills the rest
        assert config["seed"] == 3

    def test_unknown_config_key_exits_2(self, tmp_path, capsys):
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({"bogus": 1}))
        code = cli.main(["train", "--preset", "blobs", "--config", str(cfg),
                         "--out-dir", str(tmp_path / "out")])
        assert code == 2
        assert "bogus" in capsys.readouterr().err

    def test_malformed_config_exits_2(self, tmp_path):
        cfg = tmp_path / "run.json"
        cfg.write_text("{not json")
        assert cli.main(["train", "--preset", "blobs", "--config", str(cfg),
                         "--out-dir", str(tmp_path / "out")]) == 2

    def test_missing_config_file_exits_3(self, tmp_path):
        assert cli.main(["train", "--preset", "blobs", "--config",
                         str(tmp_path / "absent.json"),
                         "--out-dir", str(tmp_path / "out")]) == 3

    def test_config_hash_is_canonical(self):
        a = cli.config_hash({"b": 1, "a": 2})
        b = cli.config_hash({"a": 2, "b": 1})
        assert a == b and len(a) == 64


class TestHelpers:
    def test_derived_seed_distinct_purposes(self):
        seeds = {cli.derived_seed(7, p) for p in range(6)}
        assert len(seeds) == 6

    def test_blob_centers_radius(self):
        centers = cli.blob_centers()
        assert centers.shape == (cli.BLOB_CLASS_COUNT, 2)
        assert np.allclose(np.linalg.norm(centers, axis=1), cli.BLOB_RADIUS)

    def test_lenet_architecture_plans(self):
        arch, input_shape = cli.build_architecture("lenet")
        _, n_weights, n_classes = vn.plan_layers(arch, input_shape)
        assert n_classes == 10
        assert n_weights > 40_000

    def test_bad_architecture_value(self):
        from bnnood.errors import ConfigError
        with pytest.raises(ConfigError):
            cli.build_architecture("resnet")
        with pytest.raises(ConfigError):
            cli.build_architecture([2, 2.5, 3])
