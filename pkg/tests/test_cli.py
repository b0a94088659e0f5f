import numpy as np
import pytest
import torch

from gdbnet.checkpoint import checkpoint_save
from gdbnet.cli import _parse_config_file, main
from gdbnet.imagecore import BinaryMap, RasterImage, load_binary_map, save_image
from gdbnet.networks import CoarseNetConfig, GdbModel, RefineNetConfig


def write_doc(path, seed=0, size=64):
    rng = np.random.default_rng(seed)
    page = np.full((size, size), 0.9, dtype=np.float32)
    gt = np.zeros((size, size), dtype=np.uint8)
    for _ in range(4):
        y, x = rng.integers(4, size - 12, 2)
        page[y:y + 4, x:x + 10] = 0.1
        gt[y:y + 4, x:x + 10] = 1
    save_image(RasterImage(np.repeat(page[None], 3, axis=0)), path)
    return gt


def write_dataset(root, n=1):
    (root / "originals").mkdir(parents=True)
    (root / "gt").mkdir(parents=True)
    for i in range(n):
        gt = write_doc(root / "originals" / f"d{i}.png", seed=i)
        save_image(BinaryMap(gt), root / "gt" / f"d{i}.png")


def tiny_checkpoint(path, step=0):
    torch.manual_seed(0)
    model = GdbModel(CoarseNetConfig(base_width=4, n_res=1),
                     RefineNetConfig(base_width=4))
    checkpoint_save(model, path, step=step)


TINY_CONFIG = "base_width = 4\nn_res = 1  # small model\n"


class TestConfigFile:
    def test_parses_types(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("steps = 5\nlr = 0.001\nuse_multiscale = false\nbase_width=4\n")
        values = _parse_config_file(p)
        assert values == {"steps": 5, "lr": 0.001, "use_multiscale": False,
                          "base_width": 4}

    def test_comments_and_blank_lines(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("# comment\n\nseed = 3 # trailing\n")
        assert _parse_config_file(p) == {"seed": 3}

    def test_unknown_key_rejected(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("learning_rate = 0.1\n")
        with pytest.raises(ValueError, match="unknown config key"):
            _parse_config_file(p)

    def test_missing_equals_rejected(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("steps 5\n")
        with pytest.raises(ValueError, match="key=value"):
            _parse_config_file(p)


class TestBaseline:
    def test_otsu_prints_threshold(self, tmp_path, capsys):
        inp = tmp_path / "doc.png"
        write_doc(inp)
        out = tmp_path / "bin.png"
        rc = main(["baseline", "--method", "otsu", "--input", str(inp),
                   "--output", str(out)])
        assert rc == 0
        t = int(capsys.readouterr().out.strip())
        assert 0 <= t <= 255
        assert out.exists()
        loaded = load_binary_map(out)
        assert set(np.unique(loaded.data)) <= {0, 1}

    def test_sauvola_logs_params_to_stderr(self, tmp_path, capsys):
        inp = tmp_path / "doc.png"
        write_doc(inp)
        out = tmp_path / "bin.png"
        rc = main(["baseline", "--method", "sauvola", "--input", str(inp),
                   "--output", str(out), "--window", "15"])
        assert rc == 0
        captured = capsys.readouterr()
        assert captured.out == ""  # stdout stays machine-readable
        assert "window=15" in captured.err

    def test_missing_input_exit_1(self, tmp_path, capsys):
        rc = main(["baseline", "--method", "otsu",
                   "--input", str(tmp_path / "nope.png"),
                   "--output", str(tmp_path / "o.png")])
        assert rc == 1

    def test_bad_window_exit_2(self, tmp_path, capsys):
        inp = tmp_path / "doc.png"
        write_doc(inp)
        rc = main(["baseline", "--method", "niblack", "--input", str(inp),
                   "--output", str(tmp_path / "o.png"), "--window", "4"])
        assert rc == 2

    def test_usage_error_from_argparse(self, capsys):
        rc = main(["baseline", "--method", "magic", "--input", "x",
                   "--output", "y"])
        assert rc == 2


class TestEdge:
    def test_writes_edge_map(self, tmp_path):
        inp = tmp_path / "doc.png"
        write_doc(inp)
        out = tmp_path / "edges.png"
        assert main(["edge", "--input", str(inp), "--output", str(out)]) == 0
        assert out.exists()


class TestTrain:
    def test_train_writes_checkpoint_and_log(self, tmp_path, capsys):
        data = tmp_path / "data"
        write_dataset(data)
        cfg = tmp_path / "tiny.cfg"
        cfg.write_text(TINY_CONFIG + "patch = 32\nbatch_size = 1\n")
        ckpt = tmp_path / "model.ckpt"
        rc = main(["train", "--data-dir", str(data), "--out-checkpoint",
                   str(ckpt), "--steps", "2", "--seed", "0",
                   "--config", str(cfg)])
        assert rc == 0
        assert ckpt.exists()
        log = (tmp_path / "model.ckpt.log.csv").read_text().splitlines()
        assert log[0] == "step,dice,bce,l1,adv,d_c,d_r,total"
        assert len(log) == 3
        assert "parameters:" in capsys.readouterr().err

    def test_resume_continues_step_numbering(self, tmp_path, capsys):
        data = tmp_path / "data"
        write_dataset(data)
        cfg = tmp_path / "tiny.cfg"
        cfg.write_text(TINY_CONFIG + "patch = 32\nbatch_size = 1\n")
        first = tmp_path / "a.ckpt"
        main(["train", "--data-dir", str(data), "--out-checkpoint", str(first),
              "--steps", "2", "--config", str(cfg)])
        second = tmp_path / "b.ckpt"
        rc = main(["train", "--data-dir", str(data), "--out-checkpoint",
                   str(second), "--steps", "2", "--config", str(cfg),
                   "--resume", str(first)])
        assert rc == 0
        assert "resuming from step 2" in capsys.readouterr().err
        log = (tmp_path / "b.ckpt.log.csv").read_text().splitlines()
        assert log[1].startswith("3,")

    def test_empty_dataset_exit_1(self, tmp_path, capsys):
        data = tmp_path / "data"
        (data / "originals").mkdir(parents=True)
        (data / "gt").mkdir()
        rc = main(["train", "--data-dir", str(data),
                   "--out-checkpoint", str(tmp_path / "m.ckpt"), "--steps", "1"])
        assert rc == 1

    def test_bad_config_key_exit_2(self, tmp_path, capsys):
        data = tmp_path / "data"
        write_dataset(data)
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("bogus = 1\n")
        rc = main(["train", "--data-dir", str(data),
                   "--out-checkpoint", str(tmp_path / "m.ckpt"),
                   "--steps", "1", "--config", str(cfg)])
        assert rc == 2


class TestBinarize:
    def test_binarize_with_flags(self, tmp_path, capsys):
        inp = tmp_path / "doc.png"
        write_doc(inp)
        ckpt = tmp_path / "m.ckpt"
        tiny_checkpoint(ckpt)
        cfg = tmp_path / "tiny.cfg"
        cfg.write_text(TINY_CONFIG)
        out = tmp_path / "out.png"
        rc = main(["binarize", "--checkpoint", str(ckpt), "--input", str(inp),
                   "--output", str(out), "--config", str(cfg)])
        assert rc == 0
        base = load_binary_map(out).data

        out2 = tmp_path / "out2.png"
        rc = main(["binarize", "--checkpoint", str(ckpt), "--input", str(inp),
                   "--output", str(out2), "--config", str(cfg),
                   "--no-multiscale", "--iterate", "1"])
        assert rc == 0
        assert load_binary_map(out2).data.shape == base.shape

    def test_architecture_mismatch_exit_1(self, tmp_path, capsys):
        inp = tmp_path / "doc.png"
        write_doc(inp)
        ckpt = tmp_path / "m.ckpt"
        tiny_checkpoint(ckpt)  # width 4 checkpoint vs default width 32 model
        rc = main(["binarize", "--checkpoint", str(ckpt), "--input", str(inp),
                   "--output", str(tmp_path / "o.png")])
        assert rc == 1

    def test_missing_checkpoint_exit_1(self, tmp_path, capsys):
        inp = tmp_path / "doc.png"
        write_doc(inp)
        rc = main(["binarize", "--checkpoint", str(tmp_path / "nope.ckpt"),
                   "--input", str(inp), "--output", str(tmp_path / "o.png")])
        assert rc == 1


class TestEvaluate:
    def test_report_and_mean_row(self, tmp_path, capsys):
        gt_dir = tmp_path / "gt"
        pred_dir = tmp_path / "pred"
        gt_dir.mkdir()
        pred_dir.mkdir()
        rng = np.random.default_rng(0)
        for i in range(2):
            gt = (rng.random((32, 32)) < 0.3).astype(np.uint8)
            pred = gt.copy()
            pred[0, 0] ^= 1
            save_image(BinaryMap(gt), gt_dir / f"d{i}.png")
            save_image(BinaryMap(pred), pred_dir / f"d{i}.png")
        report = tmp_path / "report.csv"
        rc = main(["evaluate", "--pred-dir", str(pred_dir),
                   "--gt-dir", str(gt_dir), "--report", str(report)])
        assert rc == 0
        line = capsys.readouterr().out.strip().splitlines()[-1]
        assert line.startswith("MEAN,")
        fm = float(line.split(",")[1])
        assert 90.0 < fm <= 100.0
        assert report.exists()
        assert report.read_text().startswith("stem,fm,pfm,psnr,drd")

    def test_missing_dirs_exit_1(self, tmp_path, capsys):
        rc = main(["evaluate", "--pred-dir", str(tmp_path / "nope"),
                   "--gt-dir", str(tmp_path / "alsono"),
                   "--report", str(tmp_path / "r.csv")])
        assert rc == 1
