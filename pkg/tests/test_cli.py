import csv

import numpy as np
import pytest

from liteie.cli import run_cli
from liteie.errors import DatasetError, InvalidArgument
from liteie.evaluate import pair_images, parse_grid
from liteie.image import load_image_u8, save_image
from liteie.net import init_weights, serialize_weights
from liteie.train import smooth_random_weights


@pytest.fixture
def weights_file(tmp_path):
    path = tmp_path / "w.lie"
    serialize_weights(init_weights("3-1-3", 0), path)
    return path


@pytest.fixture
def pair_dirs(tmp_path):
    r = np.random.default_rng(0)
    low, gt = tmp_path / "low", tmp_path / "gt"
    low.mkdir()
    gt.mkdir()
    for name in ("a.png", "b.png", "c.png"):
        ref = r.random((3, 24, 20))
        save_image(ref, gt / name)
        save_image(0.2 * ref, low / name)
    save_image(r.random((3, 24, 20)), low / "only_low.png")
    save_image(r.random((3, 24, 20)), gt / "only_gt.png")
    return low, gt


class TestUsage:
    @pytest.mark.parametrize("argv", [[], ["bogus"], ["enhance"], ["enhance", "--weights", "w"],
                                      ["gradcheck", "--t", "-1"], ["bench", "--frobnicate"]])
    def test_usage_errors_exit_1(self, argv, capsys):
        assert run_cli(argv) == 1
        assert "usage" in capsys.readouterr().err

    def test_help_exits_0(self):
        assert run_cli(["--help"]) == 0

    def test_eval_needs_weights_or_unenhanced(self, pair_dirs, tmp_path):
        low, gt = pair_dirs
        assert run_cli(["eval", "--low", str(low), "--gt", str(gt), "--report", str(tmp_path / "r.csv")]) == 1


class TestEnhance:
    def test_missing_input(self, weights_file, tmp_path, capsys):
        code = run_cli(["enhance", "--weights", str(weights_file), "--in", str(tmp_path / "none.png"),
                        "--out", str(tmp_path / "o.png")])
        assert code == 2
        assert "NotFound" in capsys.readouterr().err

    def test_corrupt_weights(self, tmp_path, capsys):
        (tmp_path / "bad.lie").write_bytes(b"nope")
        save_image(np.zeros((3, 4, 4)), tmp_path / "i.png")
        code = run_cli(["enhance", "--weights", str(tmp_path / "bad.lie"), "--in", str(tmp_path / "i.png"),
                        "--out", str(tmp_path / "o.png")])
        assert code == 2
        assert "FormatError" in capsys.readouterr().err

    @pytest.mark.parametrize("backend", ["numpy", "numba"])
    def test_zero_iterations_reencodes_input(self, weights_file, tmp_path, backend):
        save_image(np.random.default_rng(1).random((3, 13, 17)), tmp_path / "in.png")
        src = load_image_u8(tmp_path / "in.png")
        # re-encoding through the same writer gives the reference bytes
        save_image(src / 255.0, tmp_path / "reencoded.png")
        code = run_cli(["enhance", "--weights", str(weights_file), "--in", str(tmp_path / "in.png"),
                        "--out", str(tmp_path / "out.png"), "--iters", "0", "--backend", backend])
        assert code == 0
        assert (tmp_path / "out.png").read_bytes() == (tmp_path / "reencoded.png").read_bytes()

    def test_default_iterations_keep_shape(self, tmp_path):
        w = smooth_random_weights("3-1-3", 0)
        serialize_weights(w, tmp_path / "w.lie")
        save_image(np.full((3, 8, 8), 0.1), tmp_path / "in.png")
        assert run_cli(["enhance", "--weights", str(tmp_path / "w.lie"), "--in", str(tmp_path / "in.png"),
                        "--out", str(tmp_path / "out.png")]) == 0
        assert load_image_u8(tmp_path / "out.png").shape == (3, 8, 8)


class TestEval:
    def test_rows_and_unmatched(self, weights_file, pair_dirs, tmp_path, capsys):
        low, gt = pair_dirs
        report = tmp_path / "r.csv"
        assert run_cli(["eval", "--weights", str(weights_file), "--low", str(low), "--gt", str(gt),
                        "--report", str(report)]) == 0
        rows = list(csv.reader(report.open()))
        assert rows[0] == ["image", "psnr", "ssim", "mae", "mse"]
        assert [r[0] for r in rows[1:]] == ["a.png", "b.png", "c.png"]
        out = capsys.readouterr().out
        assert "only_low.png" in out and "only_gt.png" in out
        assert report.with_suffix(".png").is_file()

    def test_unenhanced_baseline(self, pair_dirs, tmp_path):
        low, gt = pair_dirs
        report = tmp_path / "base.csv"
        assert run_cli(["eval", "--unenhanced", "--low", str(low), "--gt", str(gt),
                        "--report", str(report), "--no-plot"]) == 0
        assert len(list(csv.reader(report.open()))) == 4
        assert not report.with_suffix(".png").exists()

    def test_no_pairs(self, tmp_path, weights_file):
        (tmp_path / "x").mkdir()
        (tmp_path / "y").mkdir()
        assert run_cli(["eval", "--weights", str(weights_file), "--low", str(tmp_path / "x"),
                        "--gt", str(tmp_path / "y"), "--report", str(tmp_path / "r.csv")]) == 2


class TestTrainCommand:
    def _args(self, data, out, log):
        return ["train", "--data", str(data), "--out", str(out), "--steps", "3", "--batch-size", "2",
                "--patch", "16", "--seed", "11", "--log", str(log)]

    def test_writes_weights_log_and_figure(self, pair_dirs, tmp_path, capsys):
        low, _ = pair_dirs
        assert run_cli(self._args(low, tmp_path / "m.lie", tmp_path / "log.csv")) == 0
        lines = (tmp_path / "log.csv").read_text().splitlines()
        assert lines[0] == "step, total, L_exp, L_tv, L_mscol"
        assert len(lines) == 4
        assert capsys.readouterr().out.splitlines() == lines
        assert (tmp_path / "m.lie").is_file()
        assert (tmp_path / "log.png").is_file()

    def test_empty_dataset_exit_2(self, tmp_path):
        (tmp_path / "empty").mkdir()
        assert run_cli(self._args(tmp_path / "empty", tmp_path / "m.lie", tmp_path / "l.csv")) == 2


class TestBench:
    def test_csv(self, tmp_path, capsys):
        report = tmp_path / "b.csv"
        assert run_cli(["bench", "--res", "32x24", "--res", "64x48", "--runs", "2", "--warmup", "0",
                        "--report", str(report)]) == 0
        rows = list(csv.reader(report.open()))
        assert rows[0] == ["topology", "HxW", "T", "flops", "median_ms", "p95_ms", "fps", "threads"]
        assert [r[1] for r in rows[1:]] == ["24x32", "24x32", "48x64", "48x64"]
        assert report.with_suffix(".png").is_file()

    def test_runs_zero_exit_2(self):
        assert run_cli(["bench", "--runs", "0", "--res", "8x8"]) == 2


class TestGradcheck:
    def test_prints_and_passes(self, capsys):
        assert run_cli(["gradcheck", "--seed", "0"]) == 0
        out = capsys.readouterr().out
        err = float(out.split("max relative error ")[1].split()[0])
        assert err < 1e-4

    def test_multiple_cases(self, capsys):
        assert run_cli(["gradcheck", "--seed", "3", "--cases", "2", "--t", "1", "--no-irm", "--size", "8"]) == 0
        assert capsys.readouterr().out.count("seed=") == 2


class TestAblate:
    def test_grid_report(self, pair_dirs, tmp_path, capsys):
        low, gt = pair_dirs
        report = tmp_path / "sweep.csv"
        assert run_cli(["ablate", "--data", str(low), "--gt", str(gt), "--grid", "alpha=0.6:1.0:0.2",
                        "--steps", "2", "--batch-size", "1", "--patch", "16", "--report", str(report)]) == 0
        rows = list(csv.reader(report.open()))
        assert rows[0] == ["alpha", "psnr", "ssim", "final_loss"]
        assert [r[0] for r in rows[1:]] == ["0.6", "0.8", "1"]
        assert "best alpha=" in capsys.readouterr().out
        assert report.with_suffix(".png").is_file()

    def test_bad_grid_exit_2(self, pair_dirs):
        low, gt = pair_dirs
        assert run_cli(["ablate", "--data", str(low), "--gt", str(gt), "--grid", "gamma=1:2:1"]) == 2


class TestHelpers:
    @pytest.mark.parametrize("text,key,values", [
        ("alpha=0.4:1.2:0.2", "alpha", [0.4, 0.6, 0.8, 1.0, 1.2]),
        ("beta=0.2:0.6:0.1", "beta", [0.2, 0.3, 0.4, 0.5, 0.6]),
        ("iters=4,8", "iters", [4.0, 8.0]),
        ("lr=0.001:0.001:1", "lr", [0.001]),
    ])
    def test_parse_grid(self, text, key, values):
        k, v = parse_grid(text)
        assert k == key
        assert v == pytest.approx(values, abs=1e-12)

    @pytest.mark.parametrize("text", ["alpha", "alpha=1:0:0.1", "alpha=0:1:0", "alpha=x", "gamma=1"])
    def test_parse_grid_invalid(self, text):
        with pytest.raises(InvalidArgument):
            parse_grid(text)

    def test_pairing(self, pair_dirs):
        p = pair_images(*pair_dirs)
        assert [n for n, _, _ in p.pairs] == ["a.png", "b.png", "c.png"]
        assert p.unmatched_low == ["only_low.png"]
        assert p.unmatched_gt == ["only_gt.png"]

    def test_pairing_missing_dir(self, tmp_path):
        with pytest.raises(DatasetError):
            pair_images(tmp_path / "a", tmp_path / "b")
