"""Objective terms for generator and adversarial training.

All image-space terms take tensors in [-1,1] and reduce per image with an
L2 norm (root of summed squares for the global/content terms, root mean
square of the per-pixel color score for the redmean term) before averaging
over the batch.  Every term is >= 0 and exactly 0 when generated == target.

Each ``*_loss`` function returns the scalar; the ``*_grad`` companion also
returns the gradient with respect to the generated batch, which is what
the trainers backpropagate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .checkpoint import load_arrays
from .errors import CheckpointFormatError, ContractViolation
from .layers import he_uniform
from .ops import ConvParams

__all__ = [
    "LossWeights",
    "PixelDisparity",
    "pixel_disparity",
    "FeatureExtractor",
    "build_feature_extractor",
    "global_similarity_loss",
    "global_similarity_grad",
    "perceptual_redmean_loss",
    "perceptual_redmean_grad",
    "content_loss",
    "content_loss_grad",
    "adversarial_pair_loss",
    "adversarial_pair_grads",
    "generator_total_loss",
    "generator_total_loss_grad",
]

_LOG_FLOOR = 1e-12
_NORM_FLOOR = 1e-12


@dataclass
class LossWeights:
    """Scalars of the combined generator objective."""

    lambda_c: float = 1e-2
    lambda_p: float = 1e-3
    lambda_2: float = 1.0
    lambda_adv: float = 1e-3

    def __post_init__(self):
        for name in ("lambda_c", "lambda_p", "lambda_2", "lambda_adv"):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v < 0:
                raise ContractViolation(f"{name} must be finite and >= 0, got {v}")
            setattr(self, name, v)


def _check_pair(generated, target):
    ops.check_tensor4(generated, "generated")
    ops.check_tensor4(target, "target")
    if generated.shape != target.shape:
        raise ContractViolation(
            f"generated shape {generated.shape} != target shape {target.shape}"
        )


# ---------------------------------------------------------------------------
# global similarity

def global_similarity_grad(generated, target):
    """Batch mean of per-image sqrt(sum of squared differences)."""
    _check_pair(generated, target)
    n = generated.shape[0]
    diff = (generated - target).astype(np.float64, copy=False)
    norms = np.sqrt((diff * diff).sum(axis=(1, 2, 3)))
    value = float(norms.mean())
    safe = np.maximum(norms, _NORM_FLOOR)
    grad = diff / (safe[:, None, None, None] * n)
    return value, grad.astype(generated.dtype, copy=False)


def global_similarity_loss(generated, target) -> float:
    return global_similarity_grad(generated, target)[0]


# ---------------------------------------------------------------------------
# redmean perceptual color distance

@dataclass
class PixelDisparity:
    """Per-pixel channel disparities: r, g, b are absolute [0,1]-scale
    differences, r_bar the mean of the two red channels on 0..255."""

    r: np.ndarray
    g: np.ndarray
    b: np.ndarray
    r_bar: np.ndarray


def pixel_disparity(generated, target) -> PixelDisparity:
    _check_pair(generated, target)
    s, dr, dg, db, rbar = _redmean_score(generated, target)
    return PixelDisparity(r=np.abs(dr), g=np.abs(dg), b=np.abs(db), r_bar=rbar)


def _redmean_score(generated, target):
    """Per-pixel color score s and its ingredients, on [0,1] channels."""
    ug = (generated.astype(np.float64, copy=False) + 1.0) * 0.5
    ut = (target.astype(np.float64, copy=False) + 1.0) * 0.5
    dr = ug[:, 0] - ut[:, 0]
    dg = ug[:, 1] - ut[:, 1]
    db = ug[:, 2] - ut[:, 2]
    rbar = 127.5 * (ug[:, 0] + ut[:, 0])  # mean of the two red channels, 0..255
    s = (512.0 + rbar) * dr * dr + 4.0 * dg * dg + (767.0 - rbar) * db * db
    return s, dr, dg, db, rbar


def perceptual_redmean_grad(generated, target):
    """Root-mean-square over pixels of the redmean score, batch averaged.

    The score per pixel is (512 + rbar)*r^2 + 4*g^2 + (767 - rbar)*b^2 with
    r,g,b the [0,1]-scale channel differences and rbar the per-pixel mean of
    the two red channels on the 0..255 scale.
    """
    _check_pair(generated, target)
    if generated.shape[1] != 3:
        raise ContractViolation(
            f"redmean loss needs 3-channel RGB tensors, got {generated.shape}"
        )
    n = generated.shape[0]
    px = generated.shape[2] * generated.shape[3]
    s, dr, dg, db, rbar = _redmean_score(generated, target)
    ms = (s * s).reshape(n, -1).mean(axis=1)
    rms = np.sqrt(ms)
    value = float(rms.mean())
    safe = np.maximum(rms, _NORM_FLOOR)
    dl_ds = s / (safe[:, None, None] * px * n)  # d mean(rms) / d s_p
    # chain to the generated image, still on the [0,1] scale
    d_ug = np.empty_like(generated, dtype=np.float64)
    d_ug[:, 0] = dl_ds * (2.0 * (512.0 + rbar) * dr + 127.5 * (dr * dr - db * db))
    d_ug[:, 1] = dl_ds * (8.0 * dg)
    d_ug[:, 2] = dl_ds * (2.0 * (767.0 - rbar) * db)
    grad = 0.5 * d_ug  # d[0,1]/d[-1,1]
    return value, grad.astype(generated.dtype, copy=False)


def perceptual_redmean_loss(generated, target) -> float:
    return perceptual_redmean_grad(generated, target)[0]


# ---------------------------------------------------------------------------
# deep-feature content distance

class FeatureExtractor:
    """Fixed convolutional stack used as the content-loss feature map.

    Parameters never receive gradient updates; ``apply`` returns the
    features together with a pullback that carries gradients to the input
    only.
    """

    def __init__(self, convs: list[ConvParams], source: str):
        self.convs = convs
        self.source = source

    def apply(self, x):
        caches = []
        h = x
        for p in self.convs:
            h, c_conv = ops.conv2d(h, p)
            h, c_act = ops.activation(h, "relu")
            caches.append((c_conv, c_act))

        def pullback(dout):
            d = dout
            for c_conv, c_act in reversed(caches):
                d = ops.activation_backward(d, c_act)
                d, _, _ = ops.conv2d_backward(d, c_conv)  # parameter grads dropped
            return d

        return h, pullback

    def __call__(self, x):
        return self.apply(x)[0]

    def named_arrays(self):
        out = {}
        for i, p in enumerate(self.convs, start=1):
            out[f"stage{i}.weight"] = p.weights
            out[f"stage{i}.bias"] = p.bias
        return out


_DEFAULT_EXTRACTOR_SEED = 2718
_DEFAULT_EXTRACTOR_STRIDES = (1, 1, 2, 1, 2)  # halvings after stages 2 and 4
_DEFAULT_EXTRACTOR_CHANNELS = 32


def build_feature_extractor(spec: str = "default", manifest: str | None = None,
                            seed: int = _DEFAULT_EXTRACTOR_SEED) -> FeatureExtractor:
    """Build the content-loss feature stack.

    ``spec="default"`` gives five seeded k3 conv+relu stages (32 channels,
    stride-2 halvings after stages 2 and 4).  Any other value is treated as
    a checkpoint path of externally trained weights and needs ``manifest``,
    a plain-text file with one ``conv <name> stride=S padding=P`` line per
    stage; entries ``<name>.weight`` / ``<name>.bias`` must exist in the
    checkpoint.
    """
    if spec == "default":
        rng = np.random.default_rng(seed)
        convs = []
        in_ch = 3
        for stride in _DEFAULT_EXTRACTOR_STRIDES:
            w = he_uniform(rng, (_DEFAULT_EXTRACTOR_CHANNELS, in_ch, 3, 3),
                           fan_in=in_ch * 9)
            b = np.zeros(_DEFAULT_EXTRACTOR_CHANNELS, dtype=np.float32)
            convs.append(ConvParams(w, b, stride=stride, padding=1))
            in_ch = _DEFAULT_EXTRACTOR_CHANNELS
        return FeatureExtractor(convs, source="default")

    if manifest is None:
        raise ContractViolation(
            "external feature-extractor checkpoints need a layer manifest file"
        )
    arrays = load_arrays(spec)
    convs = []
    with open(manifest, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            if fields[0] != "conv" or len(fields) != 4:
                raise CheckpointFormatError(
                    f"{manifest}:{lineno}: expected 'conv <name> stride=S padding=P', "
                    f"got {line!r}"
                )
            name = fields[1]
            try:
                stride = int(fields[2].removeprefix("stride="))
                padding = int(fields[3].removeprefix("padding="))
            except ValueError:
                raise CheckpointFormatError(
                    f"{manifest}:{lineno}: malformed stride/padding in {line!r}"
                ) from None
            try:
                w = arrays[f"{name}.weight"]
                b = arrays[f"{name}.bias"]
            except KeyError as e:
                raise CheckpointFormatError(
                    f"{spec}: missing entry {e.args[0]!r} named by the manifest"
                ) from None
            convs.append(ConvParams(w, b, stride=stride, padding=padding))
    if not convs:
        raise CheckpointFormatError(f"{manifest}: no conv layers listed")
    return FeatureExtractor(convs, source=spec)


def content_loss_grad(extractor: FeatureExtractor, generated, target):
    """L2 norm of the feature-map difference, batch averaged; gradients flow
    through the generated branch only."""
    _check_pair(generated, target)
    phi_t = extractor(target)
    phi_g, pullback = extractor.apply(generated)
    n = generated.shape[0]
    diff = (phi_g - phi_t).astype(np.float64, copy=False)
    norms = np.sqrt((diff * diff).sum(axis=(1, 2, 3)))
    value = float(norms.mean())
    safe = np.maximum(norms, _NORM_FLOOR)
    dphi = (diff / (safe[:, None, None, None] * n)).astype(phi_g.dtype, copy=False)
    grad = pullback(dphi)
    return value, grad


def content_loss(extractor: FeatureExtractor, generated, target) -> float:
    _check_pair(generated, target)
    phi_t = extractor(target)
    phi_g = extractor(generated)
    diff = (phi_g - phi_t).astype(np.float64, copy=False)
    norms = np.sqrt((diff * diff).sum(axis=(1, 2, 3)))
    return float(norms.mean())


# ---------------------------------------------------------------------------
# adversarial objective

def _check_map(m, name):
    ops.check_tensor4(m, name)
    if np.min(m) < 0.0 or np.max(m) > 1.0:
        raise ContractViolation(
            f"{name} must contain discriminator outputs in [0,1], got range "
            f"[{float(np.min(m))}, {float(np.max(m))}]"
        )


def adversarial_pair_loss(real_map, fake_map):
    """Discriminator loss and the non-saturating generator term.

    d_loss = -mean(log real) - mean(log(1 - fake));
    g_adv  = -mean(log fake).  Logs are clamped below at 1e-12.
    """
    d_loss, g_adv, _, _, _ = adversarial_pair_grads(real_map, fake_map)
    return d_loss, g_adv


def adversarial_pair_grads(real_map, fake_map):
    """As adversarial_pair_loss plus gradients:
    returns (d_loss, g_adv, d_dreal, d_dfake, g_dfake)."""
    _check_map(real_map, "real_map")
    _check_map(fake_map, "fake_map")
    r = real_map.astype(np.float64, copy=False)
    f = fake_map.astype(np.float64, copy=False)
    rc = np.maximum(r, _LOG_FLOOR)
    fc1 = np.maximum(1.0 - f, _LOG_FLOOR)
    fc = np.maximum(f, _LOG_FLOOR)
    d_loss = float(-np.mean(np.log(rc)) - np.mean(np.log(fc1)))
    g_adv = float(-np.mean(np.log(fc)))
    nr = r.size
    nf = f.size
    d_dreal = np.where(r > _LOG_FLOOR, -1.0 / (rc * nr), 0.0)
    d_dfake = np.where(1.0 - f > _LOG_FLOOR, 1.0 / (fc1 * nf), 0.0)
    g_dfake = np.where(f > _LOG_FLOOR, -1.0 / (fc * nf), 0.0)
    return (
        d_loss,
        g_adv,
        d_dreal.astype(real_map.dtype, copy=False),
        d_dfake.astype(fake_map.dtype, copy=False),
        g_dfake.astype(fake_map.dtype, copy=False),
    )


# ---------------------------------------------------------------------------
# combined generator objective

def generator_total_loss_grad(weights: LossWeights, extractor: FeatureExtractor,
                              generated, target, validity_map=None):
    """Weighted sum of the content, redmean and global-similarity terms,
    plus the adversarial generator term when a validity map is supplied.

    Returns (value, d_generated, d_validity_or_None, per-term dict).
    Terms with zero weight are skipped outright, so a zero adversarial
    weight leaves the purely generative gradient bit-identical.
    """
    w = weights
    value = 0.0
    grad = np.zeros_like(generated)
    terms = {}
    if w.lambda_2:
        l2, g2 = global_similarity_grad(generated, target)
        value += w.lambda_2 * l2
        grad += w.lambda_2 * g2
        terms["l2"] = l2
    else:
        terms["l2"] = global_similarity_loss(generated, target)
    if w.lambda_p:
        lp, gp = perceptual_redmean_grad(generated, target)
        value += w.lambda_p * lp
        grad += w.lambda_p * gp
        terms["lp"] = lp
    if w.lambda_c:
        lc, gc = content_loss_grad(extractor, generated, target)
        value += w.lambda_c * lc
        grad += w.lambda_c * gc
        terms["lc"] = lc
    d_validity = None
    if validity_map is not None and w.lambda_adv:
        _check_map(validity_map, "validity_map")
        f = validity_map.astype(np.float64, copy=False)
        fc = np.maximum(f, _LOG_FLOOR)
        ladv = float(-np.mean(np.log(fc)))
        value += w.lambda_adv * ladv
        d_validity = (
            w.lambda_adv * np.where(f > _LOG_FLOOR, -1.0 / (fc * f.size), 0.0)
        ).astype(validity_map.dtype, copy=False)
        terms["ladv"] = ladv
    return value, grad, d_validity, terms


def generator_total_loss(weights: LossWeights, extractor: FeatureExtractor,
                         generated, target, validity_map=None) -> float:
    return generator_total_loss_grad(weights, extractor, generated, target,
                                     validity_map)[0]
