"""Metric oracles: closed forms, reference implementations, properties."""

import math

import numpy as np
import pytest
from scipy import ndimage
from scipy.signal import convolve2d
from skimage.metrics import structural_similarity

from srdrm.data import save_image
from srdrm.errors import ContractViolation
from srdrm.metrics import (
    MetricReport,
    MetricRow,
    PSNR_CAP_DB,
    evaluate_dataset,
    psnr,
    ssim,
    uiqm,
)

from conftest import synthetic_image


def textured_image(seed, width=96, height=80):
    """Smooth base plus speckle, so sharpness/contrast measures are active."""
    base = synthetic_image(seed, width, height).astype(np.float64)
    g = np.random.default_rng(seed + 999)
    noise = g.normal(0, 12, base.shape)
    return np.clip(base + noise, 0, 255).astype(np.uint8)


NATURAL = [textured_image(s) for s in range(12)]


class TestPsnr:
    def test_identical_images_hit_cap(self):
        img = NATURAL[0]
        assert psnr(img, img) == PSNR_CAP_DB

    def test_black_vs_white_is_zero(self):
        black = np.zeros((8, 8, 3), np.uint8)
        white = np.full((8, 8, 3), 255, np.uint8)
        assert psnr(black, white) == 0.0

    def test_uniform_difference_sixteen(self):
        a = np.full((16, 16, 3), 100, np.uint8)
        b = np.full((16, 16, 3), 116, np.uint8)
        expected = 10 * math.log10(255 ** 2 / 256)
        assert abs(psnr(a, b) - 24.0484) < 1e-3
        assert np.isclose(psnr(a, b), expected, rtol=1e-12)

    def test_symmetric(self):
        assert psnr(NATURAL[0], NATURAL[1]) == psnr(NATURAL[1], NATURAL[0])

    def test_strictly_decreasing_with_noise_amplitude(self):
        img = NATURAL[2].astype(np.int64)
        g = np.random.default_rng(5)
        sign = g.choice([-1, 1], img.shape)
        values = []
        for amp in (4, 8, 16, 32):
            noisy = np.clip(img + sign * amp, 0, 255).astype(np.uint8)
            values.append(psnr(NATURAL[2], noisy))
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_dimension_mismatch(self):
        with pytest.raises(ContractViolation):
            psnr(np.zeros((4, 4, 3), np.uint8), np.zeros((4, 5, 3), np.uint8))

    def test_memory_layout_invariance(self):
        a, b = NATURAL[0], NATURAL[1]
        assert psnr(np.asfortranarray(a), np.asfortranarray(b)) == psnr(a, b)


class TestSsim:
    def test_identity_is_exactly_one(self):
        for img in NATURAL[:3]:
            assert ssim(img, img) == 1.0

    def test_uniform_pair_luminance_only(self):
        a = np.full((32, 32, 3), 0.5 * 255)
        b = np.full((32, 32, 3), 0.25 * 255)
        mu1, mu2 = 127.5, 63.75
        c1 = (0.01 * 255) ** 2
        expected = (2 * mu1 * mu2 + c1) / (mu1 ** 2 + mu2 ** 2 + c1)
        value = ssim(a, b)
        assert abs(value - 0.8001) < 1e-3
        assert np.isclose(value, expected, rtol=1e-12)

    def test_symmetric(self):
        assert ssim(NATURAL[3], NATURAL[4]) == ssim(NATURAL[4], NATURAL[3])

    def test_window_contract(self):
        small = np.zeros((8, 8, 3), np.uint8)
        with pytest.raises(ContractViolation):
            ssim(small, small)

    @pytest.mark.parametrize("i", range(10))
    def test_matches_reference_implementation(self, i):
        a = NATURAL[i]
        b = NATURAL[(i + 1) % len(NATURAL)]
        def luma(img):
            f = img.astype(np.float64)
            return 0.299 * f[:, :, 0] + 0.587 * f[:, :, 1] + 0.114 * f[:, :, 2]
        ref = structural_similarity(
            luma(a), luma(b), gaussian_weights=True, sigma=1.5,
            use_sample_covariance=False, data_range=255.0,
        )
        assert abs(ssim(a, b) - ref) < 1e-6


# ---------------------------------------------------------------------------
# independent UIQM reimplementation (scipy-based, explicit loops)

def _ref_trim_stats(values, alpha=0.1):
    s = np.sort(values.ravel())
    k = s.size
    lo, hi = math.ceil(alpha * k), math.floor(alpha * k)
    mu = s[lo: k - hi].mean()
    var = np.mean((values.ravel() - mu) ** 2)
    return mu, var


def _ref_sobel_mag(ch):
    kx = np.array([[1, 0, -1], [2, 0, -2], [1, 0, -1]], dtype=np.float64)
    gx = convolve2d(ch, kx[::-1, ::-1], mode="same", boundary="fill")
    gy = convolve2d(ch, kx.T[::-1, ::-1], mode="same", boundary="fill")
    return np.sqrt(gx * gx + gy * gy)


def _ref_blocks(x, size=8):
    h = (x.shape[0] // size) * size
    w = (x.shape[1] // size) * size
    for i in range(0, h, size):
        for j in range(0, w, size):
            yield x[i : i + size, j : j + size]


def _ref_uiqm(img):
    f = img.astype(np.float64)
    r, g, b = f[:, :, 0], f[:, :, 1], f[:, :, 2]
    mu_rg, var_rg = _ref_trim_stats(r - g)
    mu_yb, var_yb = _ref_trim_stats((r + g) / 2 - b)
    uicm = -0.0268 * math.sqrt(mu_rg ** 2 + mu_yb ** 2) + 0.1586 * math.sqrt(
        var_rg + var_yb)

    emes = []
    for ch in (r, g, b):
        edge = _ref_sobel_mag(ch) * ch
        blocks = list(_ref_blocks(edge))
        total = 0.0
        for blk in blocks:
            mx, mn = blk.max(), blk.min()
            if mx > 0 and mn > 0:
                total += math.log(mx / mn)
        emes.append(2.0 * total / len(blocks))
    uism = 0.299 * emes[0] + 0.587 * emes[1] + 0.114 * emes[2]

    luma = 0.299 * r + 0.587 * g + 0.114 * b
    blocks = list(_ref_blocks(luma))
    total = 0.0
    for blk in blocks:
        mx, mn = blk.max(), blk.min()
        top, bot = mx - mn, mx + mn
        if top > 0 and bot > 0:
            total += (top / bot) * math.log(top / bot)
    uiconm = -total / len(blocks)
    return 0.0282 * uicm + 0.2953 * uism + 3.5753 * uiconm


class TestUiqm:
    def test_uniform_gray_kills_color_and_edges(self):
        gray = np.full((32, 32, 3), 128, np.uint8)
        scores = uiqm(gray)
        assert scores.uicm == 0.0
        assert scores.uism == 0.0

    def test_blur_reduces_sharpness(self):
        for img in NATURAL[:4]:
            blurred = np.clip(
                np.stack([ndimage.gaussian_filter(img[:, :, c].astype(np.float64), 2.0)
                          for c in range(3)], axis=2), 0, 255).astype(np.uint8)
            assert uiqm(blurred).uism < uiqm(img).uism

    def test_deterministic_exact(self):
        img = NATURAL[5]
        assert uiqm(img) == uiqm(img)

    def test_degenerate_extent_rejected(self):
        with pytest.raises(ContractViolation):
            uiqm(np.zeros((4, 4, 3), np.uint8))

    @pytest.mark.parametrize("i", range(10))
    def test_matches_reference_implementation(self, i):
        scores = uiqm(NATURAL[i])
        assert abs(scores.uiqm - _ref_uiqm(NATURAL[i])) < 1e-4

    def test_memory_layout_invariance(self):
        img = NATURAL[6]
        assert uiqm(np.asfortranarray(img)) == uiqm(img)


class TestEvaluateDataset:
    def make_dirs(self, tmp_path, names=("a.png", "b.png", "c.png")):
        gen_dir = tmp_path / "gen"
        truth_dir = tmp_path / "truth"
        gen_dir.mkdir()
        truth_dir.mkdir()
        for i, name in enumerate(names):
            save_image(truth_dir / name, textured_image(i, 48, 40))
            save_image(gen_dir / name, textured_image(i + 100, 48, 40))
        return gen_dir, truth_dir

    def test_truth_against_itself(self, tmp_path):
        _, truth = self.make_dirs(tmp_path)
        report = evaluate_dataset(truth, truth)
        assert report.mean_psnr == PSNR_CAP_DB
        assert report.mean_ssim == 1.0

    def test_rows_sorted_and_aggregates_are_row_means(self, tmp_path):
        gen, truth = self.make_dirs(tmp_path)
        report = evaluate_dataset(gen, truth)
        assert [r.id for r in report.rows] == ["a.png", "b.png", "c.png"]
        assert np.isclose(report.mean_psnr, np.mean([r.psnr for r in report.rows]))
        assert np.isclose(report.mean_uiqm, np.mean([r.uiqm for r in report.rows]))

    def test_unmatched_listed_and_excluded(self, tmp_path):
        gen, truth = self.make_dirs(tmp_path)
        save_image(gen / "extra.png", textured_image(9, 48, 40))
        report = evaluate_dataset(gen, truth)
        assert report.rejects == ["extra.png"]
        assert len(report.rows) == 3

    def test_empty_intersection_is_error(self, tmp_path):
        gen, truth = self.make_dirs(tmp_path)
        for p in gen.iterdir():
            p.rename(p.with_name("z_" + p.name))
        with pytest.raises(ContractViolation):
            evaluate_dataset(gen, truth)

    def test_report_files(self, tmp_path):
        gen, truth = self.make_dirs(tmp_path)
        report = evaluate_dataset(gen, truth, scale_tag="2x",
                                  report_path=tmp_path / "r.txt")
        text = (tmp_path / "r.txt").read_text()
        csv = (tmp_path / "r.txt.csv").read_text().splitlines()
        assert "scale: 2x" in text
        assert csv[0] == "id,psnr,ssim,uiqm"
        assert len(csv) == 4
        assert report.rows

    def test_row_type(self):
        row = MetricRow(id="x.png", psnr=30.0, ssim=0.9, uiqm=2.5)
        rep = MetricReport(rows=[row])
        assert rep.mean_ssim == 0.9
