"""Run-config parsing, trainer round-trips, and the command-line surface."""

import subprocess
import sys

import numpy as np
import pytest

from s2fpn.cli import main
from s2fpn.config import dump_config, parse_config_text
from s2fpn.dataset import SegDataset
from s2fpn.errors import ConfigError
from s2fpn.imageio import read_pgm
from s2fpn.metrics import ConfusionMatrix
from s2fpn.synthetic import make_toy_corpus
from s2fpn.trainer import Trainer, evaluate_model


class TestConfigParsing:
    def test_defaults_and_overrides(self):
        cfg = parse_config_text(
            """
            # a comment
            backbone = r34
            lr = 1e-3
            ohem.threshold = 0.6
            scales = 1.0,2.0
            aux_ohem = false
            """
        )
        assert cfg.backbone == "r34"
        assert cfg.base_lr == 1e-3
        assert cfg.ohem_threshold == 0.6
        assert cfg.scales == (1.0, 2.0)
        assert cfg.aux_ohem is False
        assert cfg.weight_decay == 5e-6  # untouched default

    def test_unknown_key_names_key_and_line(self):
        with pytest.raises(ConfigError, match=r"line 2.*'learning_rate'"):
            parse_config_text("backbone = r18\nlearning_rate = 0.1\n")

    def test_malformed_line_is_line_numbered(self):
        with pytest.raises(ConfigError, match="line 1"):
            parse_config_text("backbone r18\n")

    def test_bad_value_names_key(self):
        with pytest.raises(ConfigError, match="'epochs'"):
            parse_config_text("epochs = soon\n")

    def test_dump_parses_back(self):
        cfg = parse_config_text("backbone = r34m\nepochs = 7\n")
        again = parse_config_text(dump_config(cfg))
        assert again == cfg

    def test_min_kept_derived_from_crop(self):
        cfg = parse_config_text("crop_h = 64\ncrop_w = 128\n")
        assert cfg.min_kept() == 64 * 128 // 16
        cfg2 = parse_config_text("ohem.min_kept = 10\n")
        assert cfg2.min_kept() == 10


@pytest.fixture(scope="module")
def toy_setup(tmp_path_factory):
    base = tmp_path_factory.mktemp("toy")
    root = make_toy_corpus(base / "corpus", n_train=4, n_val=2, height=64, width=64, num_classes=4)
    config = base / "run.cfg"
    config.write_text(
        f"""
        dataset = {root}
        backbone = r18
        pyramid_width = 32
        num_classes = 4
        palette = {base / 'toy.palette'}
        crop_h = 64
        crop_w = 64
        batch_size = 2
        epochs = 2
        scales = 1.0
        flip_prob = 0.0
        seed = 3
        checkpoint_every = 1
        out_dir = {base / 'run'}
        """
    )
    (base / "toy.palette").write_text(
        "0 a 10 10 10\n1 b 200 10 10\n2 c 10 200 10\n3 d 10 10 200\n"
    )
    assert main(["--config", str(config), "train"]) == 0
    return base, root, config


class TestTrainerRoundTrip:
    def test_resume_reproduces_next_loss(self, toy_setup, tmp_path):
        base, root, config = toy_setup
        from s2fpn.config import parse_config

        cfg = parse_config(config)
        cfg.out_dir = str(tmp_path / "a")
        ds = SegDataset(root)
        straight = Trainer(cfg, ds)
        for it in range(3):
            _, losses_straight = straight.train_step(it)

        cfg.out_dir = str(tmp_path / "b")
        first = Trainer(cfg, ds)
        for it in range(2):
            first.train_step(it)
        ckpt = tmp_path / "mid.ckpt"
        first.save_checkpoint(ckpt, iteration=2)

        resumed = Trainer(cfg, ds)
        start = resumed.load_checkpoint(ckpt)
        assert start == 2
        _, losses_resumed = resumed.train_step(start)
        assert losses_resumed[0] == pytest.approx(losses_straight[0], abs=1e-12)


class TestCliCommands:
    def test_train_writes_log_and_checkpoints(self, toy_setup):
        # the fixture already ran `train` through the CLI entry point
        base, root, config = toy_setup
        log = (base / "run" / "train.log").read_text()
        assert log.startswith("iter 0 lr ")
        assert "loss" in log and "aux" in log
        assert (base / "run" / "final.ckpt").exists()
        assert (base / "run" / "best.ckpt").exists()

    def test_eval_prints_table_and_csv(self, toy_setup, capsys, tmp_path):
        base, root, config = toy_setup
        csv_path = tmp_path / "iou.csv"
        code = main(
            ["--config", str(config), "eval", str(base / "run" / "final.ckpt"),
             "--split", "val", "--csv", str(csv_path)]
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "mIoU" in out
        lines = csv_path.read_text().splitlines()
        assert lines[0] == "class,iou"
        assert lines[-1].startswith("mIoU,")
        miou = float(lines[-1].split(",")[1])
        assert 0.0 <= miou <= 1.0

    def test_infer_outputs_and_pipeline_consistency(self, toy_setup, tmp_path):
        base, root, config = toy_setup
        ds = SegDataset(root)
        name = ds.split("val")[0]
        image_path = root / "images" / f"{name}.ppm"
        out_prefix = tmp_path / "pred"
        ckpt = base / "run" / "final.ckpt"
        code = main(
            ["--config", str(config), "infer", str(ckpt), str(image_path), str(out_prefix)]
        )
        assert code == 0
        pred = read_pgm(out_prefix.with_suffix(".pgm"))
        assert pred.max() < 4
        assert out_prefix.with_suffix(".ppm").exists()

        # byte-identical on a second run
        first_bytes = out_prefix.with_suffix(".pgm").read_bytes()
        main(["--config", str(config), "infer", str(ckpt), str(image_path), str(out_prefix)])
        assert out_prefix.with_suffix(".pgm").read_bytes() == first_bytes

        # same confusion counts as the evaluation path, on this image
        from types import SimpleNamespace

        from s2fpn.cli import _build_model, _load_config
        from s2fpn.serialize import load_model

        cfg = _load_config(SimpleNamespace(config=str(config), seed=None))
        model = _build_model(cfg)
        load_model(ckpt, model)
        _, label = ds.load(name)
        direct = ConfusionMatrix(4)
        direct.add(pred, label)

        single_root = tmp_path / "single"
        (single_root / "images").mkdir(parents=True)
        (single_root / "labels").mkdir()
        (single_root / "images" / f"{name}.ppm").write_bytes(image_path.read_bytes())
        (single_root / "labels" / f"{name}.pgm").write_bytes(
            (root / "labels" / f"{name}.pgm").read_bytes()
        )
        (single_root / "val.txt").write_text(name + "\n")
        via_eval = evaluate_model(model, SegDataset(single_root), "val")
        assert np.array_equal(direct.counts, via_eval.counts)

    def test_analyze_report(self, toy_setup, capsys, tmp_path):
        base, root, config = toy_setup
        csv_path = tmp_path / "report.csv"
        code = main(
            ["--config", str(config), "analyze", "--height", "64", "--width", "64",
             "--csv", str(csv_path)]
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "backbone" in out and "total" in out
        assert csv_path.read_text().startswith("module,params,flops")

    def test_gradcheck_command(self, capsys):
        code = main(["gradcheck", "cam", "--seeds", "1"])
        assert code == 0
        assert "ok" in capsys.readouterr().out

    def test_gradcheck_failure_exit_code(self, capsys):
        code = main(["gradcheck", "cam", "--seeds", "1", "--tolerance", "0"])
        assert code == 3

    def test_usage_error_exit_code(self):
        assert main([]) == 1
        assert main(["frobnicate"]) == 1

    def test_invalid_config_key_exit_and_message(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("not_a_key = 1\n")
        code = main(["--config", str(bad), "train"])
        assert code == 1
        assert "not_a_key" in capsys.readouterr().err

    def test_missing_dataset_is_data_error(self, tmp_path):
        cfg = tmp_path / "cfg"
        cfg.write_text(f"dataset = {tmp_path / 'nowhere'}\n")
        assert main(["--config", str(cfg), "train"]) == 2

    def test_console_script_entry(self):
        result = subprocess.run(
            [sys.executable, "-m", "s2fpn.cli", "gradcheck", "ssam", "--seeds", "1"],
            capture_output=True, text=True,
        )
        assert result.returncode == 0, result.stderr
        assert "ssam" in result.stdout
