"""Acceptance criteria, one test group per criterion.

Run with ``pytest tests/test_acceptance.py -v``; the terminal summary prints one
PASS / FAIL / NOT RUN line per criterion. The LOL-based criteria (5-7) need the
dataset on disk: point ``LITEIE_LOL_DIR`` at a folder containing
``our485/low``, ``eval15/low`` and ``eval15/high``.
"""

import time

import numpy as np
import pytest
from conftest import lol_root
from test_image import bilinear_oracle
from test_losses import exposure_oracle, mscol_oracle, tv_oracle
from test_metrics import mae_mse_oracle, psnr_oracle, ssim_oracle
from test_net import conv_oracle

from liteie.bench import time_pipeline
from liteie.cli import run_cli
from liteie.enhance import EnhanceConfig, enhance_image, enhance_step
from liteie.evaluate import evaluate_directory, mean_metrics, sweep
from liteie.image import resize_bilinear
from liteie.losses import LossConfig, ea_tv_loss, exposure_loss, mscol_loss
from liteie.metrics import mae_mse, psnr, ssim
from liteie.net import REFERENCE_TOPOLOGIES, Weights, conv3x3_same, init_weights, param_count
from liteie.train import TrainConfig, gradient_check, train

criterion = pytest.mark.criterion


# -- 1 ----------------------------------------------------------------------------------

@criterion(1)
@pytest.mark.parametrize("name,count", [("3-3", 84), ("3-1-3", 58), ("3-3-3", 168), ("3-8-3", 443),
                                        ("3-16-3", 883), ("3-1-1-3", 68), ("3-3-3-3", 252),
                                        ("3-8-8-3", 1027), ("3-16-16-3", 3203)])
def test_c1_parameter_counts(name, count):
    assert REFERENCE_TOPOLOGIES[name] == count
    assert param_count(name) == count


# -- 2 ----------------------------------------------------------------------------------

@criterion(2)
@pytest.mark.parametrize("irm", [True, False], ids=["irm", "no-irm"])
@pytest.mark.parametrize("iters", [1, 2, 4])
def test_c2_gradients_match_central_differences(iters, irm):
    t0 = time.perf_counter()
    errors = [gradient_check(seed, iterations=iters, irm=irm, size=16) for seed in range(20)]
    elapsed = time.perf_counter() - t0
    print(f"T={iters} irm={irm}: max rel err {max(errors):.2e} over 20 cases in {elapsed:.1f}s")
    assert max(errors) < 1e-4
    # whole criterion budget is 2 minutes across the six configurations
    assert elapsed < 120 / 6


# -- 3 ----------------------------------------------------------------------------------

N_RANDOM = 1000


def _random_tensors(seed, shape=(3, 4, 4)):
    r = np.random.default_rng(seed)
    return [(r.random(shape), r.uniform(-1, 1, size=shape)) for _ in range(N_RANDOM)]


@criterion(3)
class TestC3Invariants:
    def test_range_preservation(self):
        for img, phi in _random_tensors(1):
            out = enhance_step(img, phi)
            assert out.min() >= 0.0 and out.max() <= 1.0

    def test_monotone_in_intensity(self):
        for img, phi in _random_tensors(2):
            delta = np.random.default_rng(0).random(img.shape) * (1 - img)
            assert np.all(enhance_step(img + delta, phi) >= enhance_step(img, phi) - 1e-15)

    def test_sign_of_phi3_sets_direction(self):
        for img, phi in _random_tensors(3):
            inside = (img > 0) & (img < 1)
            out = enhance_step(img, phi)
            assert np.all(out[(phi < 0) & inside] > img[(phi < 0) & inside])
            assert np.all(out[(phi > 0) & inside] < img[(phi > 0) & inside])

    def test_phi3_zero_is_identity(self):
        for img, _ in _random_tensors(4):
            assert np.array_equal(enhance_step(img, np.zeros_like(img)), img)

    def test_zero_iterations_is_identity(self):
        r = np.random.default_rng(5)
        cfg = EnhanceConfig(iterations=0)
        for k in range(N_RANDOM):
            w = Weights.from_flat("3-1-3", r.normal(0, 0.5, size=58))
            img = r.random((3, 4, 4))
            assert np.array_equal(enhance_image(w, img, cfg), img)

    def test_zero_weights_is_identity(self):
        r = np.random.default_rng(6)
        zero = Weights.zeros("3-1-3")
        for k in range(N_RANDOM):
            img = r.random((3, 4, 4))
            cfg = EnhanceConfig(iterations=int(r.integers(0, 12)), irm_enabled=bool(k % 2))
            assert np.array_equal(enhance_image(zero, img, cfg), img)


# -- 4 ----------------------------------------------------------------------------------

def _phi3_minus_one():
    # F maps everything to -40, so phi1 = phi2 = 0 and phi3 = tanh(-40) = -1
    flat = np.zeros(58)
    flat[-3:] = -40.0
    return Weights.from_flat("3-1-3", flat)


@criterion(4)
@pytest.mark.parametrize("v0", [0.0, 0.001, 0.01, 0.02, 0.05, 0.1, 0.3, 0.7, 1.0])
def test_c4_closed_form_iteration(v0):
    img = np.full((3, 6, 5), v0)
    out = enhance_image(_phi3_minus_one(), img, EnhanceConfig(iterations=8, irm_enabled=False))
    assert np.max(np.abs(out - (1 - (1 - v0) ** 256))) < 1e-6


# -- 5, 6, 7 ------------------------------------------------------------------------------

LOL_SKIP = "LOL dataset not available (set LITEIE_LOL_DIR to a folder with our485/ and eval15/)"


@pytest.fixture(scope="module")
def lol():
    root = lol_root()
    if root is None:
        pytest.skip(LOL_SKIP)
    return root


_trained: dict = {}


def _lol_model(root, irm: bool):
    if irm not in _trained:
        cfg = TrainConfig(steps=2000, seed=0, enhance_cfg=EnhanceConfig(irm_enabled=irm))
        t0 = time.perf_counter()
        w, _ = train(root / "our485" / "low", "3-1-3", cfg)
        elapsed = time.perf_counter() - t0
        rows, _ = evaluate_directory(w, root / "eval15" / "low", root / "eval15" / "high", cfg.enhance_cfg)
        _trained[irm] = (mean_metrics(rows), elapsed)
    return _trained[irm]


@criterion(5)
def test_c5_lol_training(lol):
    metrics, elapsed = _lol_model(lol, irm=True)
    base_rows, _ = evaluate_directory(None, lol / "eval15" / "low", lol / "eval15" / "high")
    base = mean_metrics(base_rows)
    print(f"LOL eval: psnr {metrics.psnr:.3f} ssim {metrics.ssim:.4f} (unenhanced {base.psnr:.3f}) "
          f"trained in {elapsed / 60:.1f} min")
    assert metrics.psnr >= 15.0
    assert metrics.ssim >= 0.45
    assert metrics.psnr - base.psnr >= 5.0
    assert elapsed <= 30 * 60


@criterion(6)
def test_c6_restoration_ablation(lol):
    with_irm, _ = _lol_model(lol, irm=True)
    without, _ = _lol_model(lol, irm=False)
    print(f"with restoration {with_irm.psnr:.3f} dB, without {without.psnr:.3f} dB")
    assert with_irm.psnr - without.psnr >= 1.0


@criterion(7)
def test_c7_alpha_sweep(lol):
    t0 = time.perf_counter()
    points = sweep("alpha", [0.4, 0.6, 0.8, 1.0, 1.2], lol / "our485" / "low", lol / "eval15" / "high",
                   eval_low_dir=lol / "eval15" / "low", base=TrainConfig(steps=500, seed=0))
    elapsed = time.perf_counter() - t0
    for p in points:
        print(f"alpha={p.value:g} psnr={p.psnr:.3f}")
    best = max(points, key=lambda p: p.psnr)
    assert best.value == pytest.approx(0.8)
    assert elapsed <= 90 * 60


# -- 8 ----------------------------------------------------------------------------------

@criterion(8)
class TestC8Oracles:
    seeds = range(100)

    def _r(self, seed, salt):
        return np.random.default_rng(10_000 * salt + seed)

    @pytest.mark.parametrize("seed", seeds)
    def test_conv(self, seed):
        r = self._r(seed, 1)
        cin, cout = (int(v) for v in r.integers(1, 4, size=2))
        h, w = (int(v) for v in r.integers(1, 8, size=2))
        x, k, b = r.normal(size=(cin, h, w)), r.normal(size=(cout, cin, 3, 3)), r.normal(size=cout)
        ref = conv_oracle(x, k, b)
        assert np.all(np.abs(conv3x3_same(x, k, b) - ref) <= 1e-6 * np.maximum(np.abs(ref), 1.0))

    @pytest.mark.parametrize("seed", seeds)
    def test_resize(self, seed):
        r = self._r(seed, 2)
        h, w, nh, nw = (int(v) for v in r.integers(1, 10, size=4))
        x = r.random((3, h, w))
        assert np.max(np.abs(resize_bilinear(x, nh, nw) - bilinear_oracle(x, nh, nw))) <= 1e-6

    @pytest.mark.parametrize("seed", seeds)
    def test_losses(self, seed):
        r = self._r(seed, 3)
        h, w = (int(v) for v in r.integers(2, 10, size=2))
        e, o, p = r.random((3, h, w)), r.random((3, h, w)) + 1e-3, r.uniform(-1, 1, (3, h, w))
        cfg = LossConfig(exp_alpha=float(r.uniform(0.2, 2)), tv_beta=float(r.uniform(0, 2)),
                         local_window=int(r.integers(1, 6)))
        assert exposure_loss(e, o, cfg) == pytest.approx(exposure_oracle(e, o, cfg.exp_alpha), rel=1e-9, abs=1e-14)
        assert ea_tv_loss(p, cfg) == pytest.approx(tv_oracle(p, cfg.tv_beta), rel=1e-9, abs=1e-14)
        assert mscol_loss(e, o, cfg) == pytest.approx(mscol_oracle(e, o, cfg.local_window), rel=1e-9, abs=1e-14)

    @pytest.mark.parametrize("seed", seeds)
    def test_metrics(self, seed):
        r = self._r(seed, 4)
        h, w = (int(v) for v in r.integers(11, 15, size=2))
        a = r.random((3, h, w))
        b = np.clip(a + r.normal(0, r.uniform(0.01, 0.4), size=a.shape), 0, 1)
        assert psnr(a, b) == pytest.approx(psnr_oracle(a, b), abs=1e-9)
        assert ssim(a, b) == pytest.approx(ssim_oracle(a, b), abs=1e-9)
        mae, mse = mae_mse(a, b)
        omae, omse = mae_mse_oracle(a, b)
        assert mae == pytest.approx(omae, rel=1e-6)
        assert mse == pytest.approx(omse, rel=1e-6)


# -- 9 ----------------------------------------------------------------------------------

@criterion(9)
class TestC9Efficiency:
    cfg = EnhanceConfig(iterations=8, irm_enabled=True)

    def test_1080p_single_thread(self):
        rep = time_pipeline(init_weights("3-1-3", 0), 1080, 1920, self.cfg, runs=20, warmup=3)
        print(f"1920x1080: median {rep.median_ms:.1f} ms, p95 {rep.p95_ms:.1f} ms, {rep.fps:.1f} fps")
        assert rep.threads == 1
        assert rep.median_ms < 250.0

    def test_4k_over_720p_scaling(self):
        w = init_weights("3-1-3", 0)
        small = time_pipeline(w, 720, 1280, self.cfg, runs=20, warmup=3)
        large = time_pipeline(w, 2160, 3840, self.cfg, runs=10, warmup=2)
        ratio = large.median_ms / small.median_ms
        print(f"720p {small.median_ms:.1f} ms, 4K {large.median_ms:.1f} ms, ratio {ratio:.2f}")
        assert 6.0 <= ratio <= 12.0


# -- 10 ---------------------------------------------------------------------------------

@criterion(10)
def test_c10_training_is_bitwise_reproducible(synthetic_pairs, tmp_path, capsys):
    low, _ = synthetic_pairs
    outputs = []
    for run in ("a", "b"):
        d = tmp_path / run
        d.mkdir()
        argv = ["train", "--data", str(low), "--out", str(d / "w.lie"), "--log", str(d / "log.csv"),
                "--steps", "25", "--batch-size", "4", "--patch", "64", "--seed", "42", "--no-plot"]
        assert run_cli(argv) == 0
        outputs.append(((d / "w.lie").read_bytes(), (d / "log.csv").read_bytes(), capsys.readouterr().out))
    assert outputs[0][0] == outputs[1][0]
    assert outputs[0][1] == outputs[1][1]
    assert outputs[0][2] == outputs[1][2]
    assert len(outputs[0][1].splitlines()) == 26
