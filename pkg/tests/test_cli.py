import json

import pytest

from histoseg.cli import main
from histoseg.config import load_config
from histoseg.errors import ConfigError
from histoseg.preprocess import SINGLE_RATER_NOBBOX


def write_config(path, data_root, output_dir, extra=""):
    path.write_text(
        f"[paths]\ndata_root = {data_root}\noutput_dir = {output_dir}\n" + extra
    )
    return path


class TestConfig:
    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.ini")

    def test_defaults_and_overrides(self, tmp_path, fixture_root):
        cfg_path = write_config(tmp_path / "c.ini", fixture_root, tmp_path / "out")
        cfg = load_config(cfg_path)
        assert cfg.variant == "single_rater"
        assert cfg.ratios == (0.6, 0.2, 0.2)
        assert cfg.trainer.lr == 0.001
        assert cfg.trainer.min_lr == 1e-5
        assert cfg.trainer.plateau_patience == 10
        assert cfg.trainer.stop_patience == 30
        assert cfg.trainer.batch_size == 8
        assert cfg.superclass_table == fixture_root / "superclasses.txt"

        cfg = load_config(cfg_path, ["trainer.lr=0.01", f"dataset.variant={SINGLE_RATER_NOBBOX}"])
        assert cfg.trainer.lr == 0.01
        assert cfg.variant == SINGLE_RATER_NOBBOX

    def test_bad_value_names_the_entry(self, tmp_path, fixture_root):
        cfg_path = write_config(
            tmp_path / "c.ini", fixture_root, tmp_path / "out", "[trainer]\nlr = abc\n"
        )
        with pytest.raises(ConfigError, match="trainer.lr"):
            load_config(cfg_path)

    def test_unknown_variant(self, tmp_path, fixture_root):
        cfg_path = write_config(tmp_path / "c.ini", fixture_root, tmp_path / "out")
        with pytest.raises(ConfigError, match="variant"):
            load_config(cfg_path, ["dataset.variant=bogus"])

    def test_malformed_override(self, tmp_path, fixture_root):
        cfg_path = write_config(tmp_path / "c.ini", fixture_root, tmp_path / "out")
        with pytest.raises(ConfigError):
            load_config(cfg_path, ["no_dot=3"])

    def test_missing_data_root(self, tmp_path):
        cfg_path = write_config(tmp_path / "c.ini", tmp_path / "absent", tmp_path / "out")
        with pytest.raises(ConfigError, match="data_root"):
            load_config(cfg_path)


class TestCli:
    def test_missing_config_exits_2_without_artifacts(self, tmp_path, capsys):
        rc = main(["explore", "--config", str(tmp_path / "nope.ini")])
        assert rc == 2
        assert "config error" in capsys.readouterr().err
        assert list(tmp_path.iterdir()) == []

    def test_explore_on_fixture(self, tmp_path, fixture_root, capsys):
        cfg = write_config(tmp_path / "c.ini", fixture_root, tmp_path / "out")
        rc = main(["explore", "--config", str(cfg)])
        assert rc == 0
        summary = json.loads((tmp_path / "out" / "summary.json").read_text())
        assert summary["n_samples"] == 8
        assert (tmp_path / "out" / "split.json").is_file()
        assert json.loads((tmp_path / "out" / "target.json").read_text())["side"] == 32

    def test_explore_root_shorthand(self, tmp_path, fixture_root, monkeypatch):
        monkeypatch.chdir(tmp_path)
        rc = main(["explore", "--root", str(fixture_root / "single"), "--seed", "3"])
        assert rc == 0
        split = json.loads((tmp_path / "out" / "split.json").read_text())
        assert split["seed"] == 3

    def test_evaluate_before_train_exits_2(self, tmp_path, fixture_root, capsys):
        cfg = write_config(tmp_path / "c.ini", fixture_root, tmp_path / "out")
        rc = main(["evaluate", "--config", str(cfg)])
        assert rc == 2
        assert "train" in capsys.readouterr().err

    def test_report_before_evaluate_exits_2(self, tmp_path, fixture_root, capsys):
        cfg = write_config(tmp_path / "c.ini", fixture_root, tmp_path / "out")
        rc = main(["report", "--config", str(cfg)])
        assert rc == 2
        assert "evaluate" in capsys.readouterr().err

    def test_prepare_before_explore_exits_2(self, tmp_path, fixture_root, capsys):
        cfg = write_config(tmp_path / "c.ini", fixture_root, tmp_path / "out")
        rc = main(["prepare", "--config", str(cfg)])
        assert rc == 2
        assert "explore" in capsys.readouterr().err

    def test_make_fixture_writes_dataset(self, tmp_path):
        cfg = write_config(
            tmp_path / "c.ini",
            tmp_path / "data",
            tmp_path / "out",
            "[fixture]\nn_single = 2\nn_multi = 1\nside = 32\n",
        )
        rc = main(["make-fixture", "--config", str(cfg)])
        assert rc == 0
        assert (tmp_path / "data" / "superclasses.txt").is_file()
        assert len(list((tmp_path / "data" / "single" / "images").glob("*.png"))) == 2
        assert len(list((tmp_path / "data" / "multi" / "masks").glob("*.png"))) == 1
        assert len(list((tmp_path / "data" / "single" / "locs").glob("*.csv"))) == 2
