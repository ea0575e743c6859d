"""Image-quality measures and the dataset-level report.

PSNR is computed on 8-bit RGB MSE over all channels; SSIM on ITU-R 601
luma with the standard 11x11 Gaussian window (sigma 1.5, K1=0.01,
K2=0.03, L=255); UIQM combines alpha-trimmed colorfulness (UICM),
Sobel-masked block log-contrast sharpness (UISM) and block log-AMEE
contrast (UIConM) with the published linear weights.  All three are pure
functions of pixel content.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ContractViolation

__all__ = [
    "SsimParams",
    "UiqmParams",
    "MetricRow",
    "MetricReport",
    "UiqmScores",
    "PSNR_CAP_DB",
    "psnr",
    "ssim",
    "uiqm",
    "evaluate_dataset",
]

PSNR_CAP_DB = 100.0
_LUMA = (0.299, 0.587, 0.114)


@dataclass
class SsimParams:
    window_size: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 255.0


@dataclass
class UiqmParams:
    c1: float = 0.0282   # colorfulness weight
    c2: float = 0.2953   # sharpness weight
    c3: float = 3.5753   # contrast weight
    alpha_trim: float = 0.1
    block: int = 8


class UiqmScores(NamedTuple):
    uicm: float
    uism: float
    uiconm: float
    uiqm: float


def _as_rgb(img, name):
    a = np.asarray(img)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ContractViolation(f"{name} must be an (H,W,3) RGB image, got shape {a.shape}")
    return a.astype(np.float64)


def _luma(img):
    return _LUMA[0] * img[:, :, 0] + _LUMA[1] * img[:, :, 1] + _LUMA[2] * img[:, :, 2]


# ---------------------------------------------------------------------------
# PSNR

def psnr(a, b) -> float:
    """10*log10(255^2 / MSE) over all RGB channels; zero MSE reports the
    100 dB cap so report aggregation never sees infinities."""
    ia, ib = _as_rgb(a, "a"), _as_rgb(b, "b")
    if ia.shape != ib.shape:
        raise ContractViolation(f"image dimensions differ: {ia.shape} vs {ib.shape}")
    mse = float(np.mean((ia - ib) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return 10.0 * math.log10(255.0 ** 2 / mse)


# ---------------------------------------------------------------------------
# SSIM

def _gaussian_kernel(size, sigma):
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    return g / g.sum()


def _sep_valid(x, k):
    """Separable valid-mode correlation of a 2-D array with a 1-D kernel."""
    ksz = k.size
    h, w = x.shape
    rows = np.zeros((h, w - ksz + 1))
    for i in range(ksz):
        rows += k[i] * x[:, i : w - ksz + 1 + i]
    out = np.zeros((h - ksz + 1, w - ksz + 1))
    for i in range(ksz):
        out += k[i] * rows[i : h - ksz + 1 + i, :]
    return out


def ssim(a, b, params: SsimParams | None = None) -> float:
    """Mean structural similarity on luma over sliding Gaussian windows."""
    p = params or SsimParams()
    ia = np.asarray(a, dtype=np.float64)
    ib = np.asarray(b, dtype=np.float64)
    if ia.shape != ib.shape:
        raise ContractViolation(f"image dimensions differ: {ia.shape} vs {ib.shape}")
    if ia.ndim == 3:
        ia, ib = _luma(_as_rgb(a, "a")), _luma(_as_rgb(b, "b"))
    elif ia.ndim != 2:
        raise ContractViolation(f"ssim expects RGB or grayscale images, got shape {ia.shape}")
    if min(ia.shape) < p.window_size:
        raise ContractViolation(
            f"image extent {ia.shape} smaller than the {p.window_size}x"
            f"{p.window_size} window"
        )
    k = _gaussian_kernel(p.window_size, p.sigma)
    mu_a = _sep_valid(ia, k)
    mu_b = _sep_valid(ib, k)
    ea2 = _sep_valid(ia * ia, k)
    eb2 = _sep_valid(ib * ib, k)
    eab = _sep_valid(ia * ib, k)
    va = ea2 - mu_a * mu_a
    vb = eb2 - mu_b * mu_b
    cov = eab - mu_a * mu_b
    c1 = (p.k1 * p.dynamic_range) ** 2
    c2 = (p.k2 * p.dynamic_range) ** 2
    smap = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) / (
        (mu_a * mu_a + mu_b * mu_b + c1) * (va + vb + c2)
    )
    return float(smap.mean())


# ---------------------------------------------------------------------------
# UIQM

def _alpha_trimmed_stats(x, alpha):
    """Trimmed mean (drop ceil(aK) low / floor(aK) high) and the variance of
    all samples about that mean."""
    xs = np.sort(x, axis=None)
    kk = xs.size
    t_lo = int(math.ceil(alpha * kk))
    t_hi = int(math.floor(alpha * kk))
    trimmed = xs[t_lo : kk - t_hi]
    mu = float(trimmed.mean())
    var = float(np.mean((x - mu) ** 2))
    return mu, var


def _block_minmax(x, block):
    h, w = x.shape
    hb, wb = h // block, w // block
    tiles = x[: hb * block, : wb * block].reshape(hb, block, wb, block)
    return tiles.max(axis=(1, 3)), tiles.min(axis=(1, 3)), hb * wb


def _eme(x, block):
    """Block log-contrast 2/(k1 k2) * sum log(max/min); degenerate blocks
    (min or max <= 0) contribute nothing."""
    mx, mn, nblocks = _block_minmax(x, block)
    ok = (mn > 0) & (mx > 0)
    total = float(np.log(mx[ok] / mn[ok]).sum())
    return 2.0 * total / nblocks


def _sobel_magnitude(ch):
    kx = np.array([[1.0, 0.0, -1.0], [2.0, 0.0, -2.0], [1.0, 0.0, -1.0]])
    ky = kx.T
    padded = np.pad(ch, 1)
    gx = np.zeros_like(ch)
    gy = np.zeros_like(ch)
    h, w = ch.shape
    for i in range(3):
        for j in range(3):
            win = padded[i : i + h, j : j + w]
            gx += kx[i, j] * win
            gy += ky[i, j] * win
    return np.hypot(gx, gy)


def uiqm(img, params: UiqmParams | None = None) -> UiqmScores:
    """Underwater image quality: (uicm, uism, uiconm, combined uiqm)."""
    p = params or UiqmParams()
    rgb = _as_rgb(img, "img")
    if rgb.shape[0] < p.block or rgb.shape[1] < p.block:
        raise ContractViolation(
            f"image {rgb.shape[:2]} smaller than one {p.block}x{p.block} block"
        )
    r, g, b = rgb[:, :, 0], rgb[:, :, 1], rgb[:, :, 2]

    # colorfulness from opponent channels
    rg = r - g
    yb = (r + g) / 2.0 - b
    mu_rg, var_rg = _alpha_trimmed_stats(rg, p.alpha_trim)
    mu_yb, var_yb = _alpha_trimmed_stats(yb, p.alpha_trim)
    uicm = -0.0268 * math.hypot(mu_rg, mu_yb) + 0.1586 * math.sqrt(var_rg + var_yb)

    # sharpness: per-channel Sobel-masked block log-contrast
    emes = [_eme(_sobel_magnitude(ch) * ch, p.block) for ch in (r, g, b)]
    uism = _LUMA[0] * emes[0] + _LUMA[1] * emes[1] + _LUMA[2] * emes[2]

    # contrast: block log-AMEE on luma
    mx, mn, nblocks = _block_minmax(_luma(rgb), p.block)
    top = mx - mn
    bot = mx + mn
    ok = (top > 0) & (bot > 0)
    m = top[ok] / bot[ok]
    uiconm = -float((m * np.log(m)).sum()) / nblocks

    combined = p.c1 * uicm + p.c2 * uism + p.c3 * uiconm
    return UiqmScores(float(uicm), float(uism), float(uiconm), float(combined))


# ---------------------------------------------------------------------------
# dataset report

@dataclass
class MetricRow:
    id: str
    psnr: float
    ssim: float
    uiqm: float


@dataclass
class MetricReport:
    rows: list = field(default_factory=list)
    rejects: list = field(default_factory=list)
    scale_tag: str = ""

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([r.psnr for r in self.rows]))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([r.ssim for r in self.rows]))

    @property
    def mean_uiqm(self) -> float:
        return float(np.mean([r.uiqm for r in self.rows]))

    def to_text(self) -> str:
        width = max([len(r.id) for r in self.rows] + [len("mean"), len("id")])
        head = f"{'id':<{width}}  {'psnr':>9}  {'ssim':>7}  {'uiqm':>7}"
        lines = [head, "-" * len(head)]
        for r in self.rows:
            lines.append(f"{r.id:<{width}}  {r.psnr:>9.4f}  {r.ssim:>7.4f}  {r.uiqm:>7.4f}")
        lines.append("-" * len(head))
        lines.append(
            f"{'mean':<{width}}  {self.mean_psnr:>9.4f}  {self.mean_ssim:>7.4f}  "
            f"{self.mean_uiqm:>7.4f}"
        )
        if self.scale_tag:
            lines.append(f"scale: {self.scale_tag}")
        for name in self.rejects:
            lines.append(f"unmatched: {name}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        lines = ["id,psnr,ssim,uiqm"]
        for r in self.rows:
            lines.append(f"{r.id},{r.psnr:.6f},{r.ssim:.6f},{r.uiqm:.6f}")
        return "\n".join(lines) + "\n"

    def write(self, text_path, csv_path) -> None:
        Path(text_path).write_text(self.to_text(), encoding="utf-8")
        Path(csv_path).write_text(self.to_csv(), encoding="utf-8")


_IMAGE_EXTS = (".png", ".jpg", ".jpeg")


def _list_images(directory):
    d = Path(directory)
    return {p.name: p for p in d.iterdir()
            if p.is_file() and p.suffix.lower() in _IMAGE_EXTS}


def evaluate_dataset(generated_dir, truth_dir, scale_tag: str = "",
                     report_path=None) -> MetricReport:
    """Pair same-named images from the two directories and score each pair.

    Rows come out in lexicographic name order; unmatched names land in the
    reject list and are excluded from the aggregates.  UIQM is scored on
    the generated image alone, PSNR/SSIM against the ground truth.  When
    ``report_path`` is given the aligned text table goes there and the CSV
    twin to ``report_path + '.csv'``.
    """
    from .data import load_image  # local import: metrics stays image-format free

    gen = _list_images(generated_dir)
    truth = _list_images(truth_dir)
    common = sorted(set(gen) & set(truth))
    rejects = sorted(set(gen) ^ set(truth))
    if not common:
        raise ContractViolation(
            f"no same-named image pairs between {generated_dir} and {truth_dir}"
        )
    report = MetricReport(scale_tag=scale_tag, rejects=rejects)
    for name in common:
        g = load_image(gen[name])
        t = load_image(truth[name])
        report.rows.append(
            MetricRow(id=name, psnr=psnr(g, t), ssim=ssim(g, t), uiqm=uiqm(g).uiqm)
        )
    if report_path is not None:
        report.write(report_path, str(report_path) + ".csv")
    return report
