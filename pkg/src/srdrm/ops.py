"""Deterministic 4-D tensor primitives with hand-written backward passes.

Every array is laid out (batch, channels, height, width), row-major, and
every op is a pure function: forward returns ``(out, cache)`` and the
matching ``*_backward(upstream, cache)`` returns gradients shaped like the
respective inputs.  Ops preserve the input dtype; training runs float32
while gradient checks feed float64 through the same code path.

Internal parallelism (BLAS matmul) only ever partitions disjoint output
elements; every reduction that feeds a single output element runs in a
fixed serial order, so results are reproducible across runs and thread
counts.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, ContractViolation

__all__ = [
    "ConvParams",
    "BnParams",
    "check_tensor4",
    "conv2d",
    "conv2d_backward",
    "deconv2d",
    "deconv2d_backward",
    "batchnorm",
    "batchnorm_backward",
    "activation",
    "activation_backward",
    "pad2d",
    "pad2d_backward",
    "upsample_bicubic",
]


@dataclass
class ConvParams:
    """Weights of one (de)convolution: ``weights`` is (out_c, in_c, kH, kW),
    ``bias`` is (out_c,).  ``padding`` is symmetric zero padding per side."""

    weights: np.ndarray
    bias: np.ndarray
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.weights.ndim != 4:
            raise ContractViolation(
                f"conv weights must be 4-D (out,in,kH,kW), got shape {self.weights.shape}"
            )
        if self.bias.shape != (self.weights.shape[0],):
            raise ContractViolation(
                f"bias shape {self.bias.shape} does not match out-channels "
                f"{self.weights.shape[0]}"
            )
        if self.stride < 1 or self.padding < 0:
            raise ConfigurationError(
                f"stride must be >= 1 and padding >= 0, got stride={self.stride} "
                f"padding={self.padding}"
            )


@dataclass
class BnParams:
    """Per-channel batch-norm parameters plus running statistics."""

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    epsilon: float = 1e-5

    def __post_init__(self):
        c = self.gamma.shape[0]
        for name in ("beta", "running_mean", "running_var"):
            v = getattr(self, name)
            if v.shape != (c,):
                raise ContractViolation(
                    f"BnParams.{name} shape {v.shape} != ({c},)"
                )
        if not 0.0 < self.momentum < 1.0:
            raise ConfigurationError(f"momentum must lie in (0,1), got {self.momentum}")
        if np.any(self.running_var < 0):
            raise ContractViolation("running_var must be non-negative")

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]


def check_tensor4(x: np.ndarray, name: str = "input") -> np.ndarray:
    if not isinstance(x, np.ndarray) or x.ndim != 4:
        raise ContractViolation(
            f"{name} must be a 4-D (batch, channel, height, width) array, got "
            f"{getattr(x, 'shape', type(x))}"
        )
    return x


# ---------------------------------------------------------------------------
# padding

def pad2d(x: np.ndarray, pads: tuple[int, int, int, int]) -> np.ndarray:
    """Zero-pad spatially by (top, bottom, left, right)."""
    t, b, l, r = pads
    if t == b == l == r == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (t, b), (l, r)))


def pad2d_backward(dout: np.ndarray, pads: tuple[int, int, int, int]) -> np.ndarray:
    t, b, l, r = pads
    h, w = dout.shape[2], dout.shape[3]
    return dout[:, :, t : h - b, l : w - r]


# ---------------------------------------------------------------------------
# convolution (cross-correlation with zero padding)

def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int):
    """Extract sliding patches from a padded input.

    Returns (cols, oh, ow) with cols shaped (N, C*kh*kw, oh*ow); the middle
    axis orders (channel, tap_row, tap_col) to match the weight reshape.
    """
    n, c, h, w = xp.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    cols = np.empty((n, c, kh * kw, oh, ow), dtype=xp.dtype)
    for u in range(kh):
        for v in range(kw):
            cols[:, :, u * kw + v] = xp[:, :, u : u + stride * oh : stride,
                                        v : v + stride * ow : stride]
    return cols.reshape(n, c * kh * kw, oh * ow), oh, ow


def _col2im(dcols: np.ndarray, padded_shape, kh: int, kw: int, stride: int, oh: int, ow: int):
    """Adjoint of _im2col: scatter-add patch gradients back onto the padded input."""
    n, c, h, w = padded_shape
    dxp = np.zeros(padded_shape, dtype=dcols.dtype)
    d = dcols.reshape(n, c, kh, kw, oh, ow)
    for u in range(kh):
        for v in range(kw):
            dxp[:, :, u : u + stride * oh : stride, v : v + stride * ow : stride] += d[:, :, u, v]
    return dxp


def _conv_out_extent(extent: int, k: int, stride: int, padding: int) -> int:
    return (extent + 2 * padding - k) // stride + 1


def conv2d(x: np.ndarray, params: ConvParams):
    """2-D convolution (exact cross-correlation semantics, zero padding).

    Output extents are floor((H + 2p - kH)/s) + 1; both must be >= 1.
    """
    check_tensor4(x)
    w = params.weights
    out_c, in_c, kh, kw = w.shape
    if x.shape[1] != in_c:
        raise ContractViolation(
            f"conv2d: input has {x.shape[1]} channels but weights expect {in_c} "
            f"(input shape {x.shape}, weight shape {w.shape})"
        )
    oh = _conv_out_extent(x.shape[2], kh, params.stride, params.padding)
    ow = _conv_out_extent(x.shape[3], kw, params.stride, params.padding)
    if oh < 1 or ow < 1:
        raise ConfigurationError(
            f"conv2d: non-positive output extent {oh}x{ow} for input "
            f"{x.shape[2]}x{x.shape[3]}, kernel {kh}x{kw}, stride {params.stride}, "
            f"padding {params.padding}"
        )
    p = params.padding
    xp = pad2d(x, (p, p, p, p))
    cols, oh, ow = _im2col(xp, kh, kw, params.stride)
    wmat = w.reshape(out_c, in_c * kh * kw).astype(x.dtype, copy=False)
    out = np.matmul(wmat, cols)  # (N, out_c, oh*ow)
    out = out.reshape(x.shape[0], out_c, oh, ow)
    out += params.bias.astype(x.dtype, copy=False)[None, :, None, None]
    cache = (cols, xp.shape, params, oh, ow, x.dtype)
    return out, cache


def conv2d_backward(dout: np.ndarray, cache):
    """Gradients of conv2d: returns (d_input, d_weights, d_bias)."""
    cols, padded_shape, params, oh, ow, in_dtype = cache
    w = params.weights
    out_c, in_c, kh, kw = w.shape
    n = dout.shape[0]
    dmat = dout.reshape(n, out_c, oh * ow)
    db = dout.sum(axis=(0, 2, 3))
    # (N,out_c,P) @ (N,P,K) summed over batch -> (out_c,K)
    dw = np.matmul(dmat, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
    wmat = w.reshape(out_c, in_c * kh * kw).astype(dout.dtype, copy=False)
    dcols = np.matmul(wmat.T, dmat)  # (N, K, P)
    dxp = _col2im(dcols, padded_shape, kh, kw, params.stride, oh, ow)
    p = params.padding
    dx = pad2d_backward(dxp, (p, p, p, p)) if p else dxp
    return dx.astype(in_dtype, copy=False), dw, db


# ---------------------------------------------------------------------------
# transposed convolution

def deconv2d(x: np.ndarray, params: ConvParams):
    """Transposed convolution: each input pixel scatters a kH x kW stamp of
    ``weights`` into the output at offset (i*stride - p, j*stride - p).

    Output extents are stride*(H-1) + kH - 2p; with stride 2, k=4, p=1 this
    is exactly 2H x 2W.
    """
    check_tensor4(x)
    w = params.weights
    out_c, in_c, kh, kw = w.shape
    if x.shape[1] != in_c:
        raise ContractViolation(
            f"deconv2d: input has {x.shape[1]} channels but weights expect {in_c} "
            f"(input shape {x.shape}, weight shape {w.shape})"
        )
    n, _, h, wdt = x.shape
    s, p = params.stride, params.padding
    oh = s * (h - 1) + kh - 2 * p
    ow = s * (wdt - 1) + kw - 2 * p
    if oh < 1 or ow < 1:
        raise ConfigurationError(
            f"deconv2d: non-positive output extent {oh}x{ow} for input "
            f"{h}x{wdt}, kernel {kh}x{kw}, stride {s}, padding {p}"
        )
    # stamps[n,o,u,v,i,j] = sum_c x[n,c,i,j] * w[o,c,u,v]
    stamps = np.tensordot(x, w.astype(x.dtype, copy=False), axes=([1], [1]))
    stamps = stamps.transpose(0, 3, 4, 5, 1, 2)  # (N, out_c, kh, kw, H, W)
    hf = s * (h - 1) + kh
    wf = s * (wdt - 1) + kw
    full = np.zeros((n, out_c, hf, wf), dtype=x.dtype)
    for u in range(kh):
        for v in range(kw):
            full[:, :, u : u + s * h : s, v : v + s * wdt : s] += stamps[:, :, u, v]
    out = full[:, :, p : hf - p, p : wf - p] if p else full
    out = out + params.bias.astype(x.dtype, copy=False)[None, :, None, None]
    cache = (x, params)
    return out, cache


def deconv2d_backward(dout: np.ndarray, cache):
    """Gradients of deconv2d: returns (d_input, d_weights, d_bias).

    d_input is a plain convolution of the upstream gradient with the same
    stamp weights; d_weights correlates upstream with the stored input.
    """
    x, params = cache
    w = params.weights
    out_c, in_c, kh, kw = w.shape
    s, p = params.stride, params.padding
    n, _, h, wdt = x.shape
    db = dout.sum(axis=(0, 2, 3))
    dp = pad2d(dout, (p, p, p, p))
    cols, oh, ow = _im2col(dp, kh, kw, s)  # oh == h, ow == wdt
    # dx[n,c,i,j] = sum_{o,u,v} dout_p[n,o,i*s+u,j*s+v] * w[o,c,u,v]
    # cols axis 1 runs (o, u, v); regroup the weights to match
    wmat_by_in = w.astype(dout.dtype, copy=False).reshape(
        out_c, in_c, kh * kw).transpose(1, 0, 2).reshape(in_c, out_c * kh * kw)
    dx = np.matmul(wmat_by_in, cols).reshape(n, in_c, h, wdt)
    # dw[o,c,u,v] = sum_{n,i,j} x[n,c,i,j] * dout_p[n,o,i*s+u,j*s+v]
    xmat = x.reshape(n, in_c, h * wdt)
    dw = (
        np.matmul(cols, xmat.transpose(0, 2, 1))  # (N, out_c*kh*kw, in_c)
        .sum(axis=0)
        .reshape(out_c, kh, kw, in_c)
        .transpose(0, 3, 1, 2)
    )
    return dx, np.ascontiguousarray(dw), db


# ---------------------------------------------------------------------------
# batch normalization

def batchnorm(x: np.ndarray, params: BnParams, mode: str):
    """Per-channel batch normalization.

    ``train`` normalizes with batch statistics and returns updated running
    stats (exponential moving average, weight ``momentum`` on the new batch);
    ``infer`` normalizes with the stored running stats.  Returns
    ``(out, cache, updated_params)``; in infer mode ``updated_params`` is
    ``params`` unchanged.  Variances are population (biased) throughout.
    """
    check_tensor4(x)
    if x.shape[1] != params.channels:
        raise ContractViolation(
            f"batchnorm: input has {x.shape[1]} channels, params have "
            f"{params.channels}"
        )
    if mode not in ("train", "infer"):
        raise ContractViolation(f"batchnorm mode must be 'train' or 'infer', got {mode!r}")
    dt = x.dtype
    gamma = params.gamma.astype(dt, copy=False)
    beta = params.beta.astype(dt, copy=False)
    if mode == "train":
        m = x.shape[0] * x.shape[2] * x.shape[3]
        if m < 2:
            raise ContractViolation(
                f"batchnorm train mode needs batch*H*W >= 2, got {m}"
            )
        mu = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        istd = 1.0 / np.sqrt(var + params.epsilon)
        xhat = (x - mu[None, :, None, None]) * istd[None, :, None, None]
        out = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
        mom = params.momentum
        updated = replace(
            params,
            running_mean=((1.0 - mom) * params.running_mean + mom * mu).astype(
                params.running_mean.dtype
            ),
            running_var=((1.0 - mom) * params.running_var + mom * var).astype(
                params.running_var.dtype
            ),
        )
        cache = ("train", xhat, istd, gamma, m)
        return out, cache, updated
    istd = (1.0 / np.sqrt(params.running_var + params.epsilon)).astype(dt)
    xhat = (x - params.running_mean.astype(dt)[None, :, None, None]) * istd[
        None, :, None, None
    ]
    out = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    cache = ("infer", xhat, istd, gamma, None)
    return out, cache, params


def batchnorm_backward(dout: np.ndarray, cache):
    """Gradients of batchnorm: returns (d_input, d_gamma, d_beta)."""
    mode, xhat, istd, gamma, m = cache
    dgamma = (dout * xhat).sum(axis=(0, 2, 3))
    dbeta = dout.sum(axis=(0, 2, 3))
    if mode == "infer":
        dx = dout * (gamma * istd)[None, :, None, None]
        return dx, dgamma, dbeta
    # train mode: batch statistics depend on x
    dxhat = dout * gamma[None, :, None, None]
    sum_dxhat = dxhat.sum(axis=(0, 2, 3))
    sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2, 3))
    dx = (
        dxhat
        - (sum_dxhat / m)[None, :, None, None]
        - xhat * (sum_dxhat_xhat / m)[None, :, None, None]
    ) * istd[None, :, None, None]
    return dx, dgamma, dbeta


# ---------------------------------------------------------------------------
# activations

_KINDS = ("relu", "leaky_relu", "tanh", "sigmoid")


def activation(x: np.ndarray, kind: str, alpha: float = 0.2):
    """Elementwise non-linearity: relu | leaky_relu(alpha) | tanh | sigmoid."""
    if kind == "relu":
        out = np.maximum(x, 0)
    elif kind == "leaky_relu":
        out = np.where(x > 0, x, alpha * x)
    elif kind == "tanh":
        out = np.tanh(x)
    elif kind == "sigmoid":
        # stable two-branch form
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
    else:
        raise ContractViolation(f"unknown activation {kind!r}, expected one of {_KINDS}")
    return out, (kind, alpha, x if kind in ("relu", "leaky_relu") else out)


def activation_backward(dout: np.ndarray, cache):
    kind, alpha, saved = cache
    if kind == "relu":
        return dout * (saved > 0)
    if kind == "leaky_relu":
        return dout * np.where(saved > 0, 1.0, alpha).astype(dout.dtype)
    if kind == "tanh":
        return dout * (1.0 - saved * saved)
    return dout * saved * (1.0 - saved)  # sigmoid


# ---------------------------------------------------------------------------
# fixed bicubic upsampling (no gradient; used for discriminator conditioning)

def _cubic_kernel(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    at = np.abs(t)
    at2 = at * at
    at3 = at2 * at
    w = np.where(
        at <= 1.0,
        (a + 2.0) * at3 - (a + 3.0) * at2 + 1.0,
        np.where(at < 2.0, a * at3 - 5.0 * a * at2 + 8.0 * a * at - 4.0 * a, 0.0),
    )
    return w


def _bicubic_axis_weights(n_in: int, factor: int, dtype):
    """Sample positions and 4-tap weights for one axis at integer ``factor``."""
    centers = (np.arange(n_in * factor, dtype=np.float64) + 0.5) / factor - 0.5
    base = np.floor(centers).astype(np.int64)
    frac = centers - base
    offsets = np.arange(-1, 3)
    idx = np.clip(base[:, None] + offsets[None, :], 0, n_in - 1)
    w = _cubic_kernel(frac[:, None] - offsets[None, :])
    w /= w.sum(axis=1, keepdims=True)
    return idx, w.astype(dtype)


def upsample_bicubic(x: np.ndarray, factor: int) -> np.ndarray:
    """Upsample spatially by an integer factor with a Keys bicubic kernel
    (a = -0.5), clamped at the borders.  Carries no gradient: the only use
    is the fixed conditioning branch of the discriminator input."""
    check_tensor4(x)
    if factor < 1:
        raise ContractViolation(f"upsample factor must be >= 1, got {factor}")
    if factor == 1:
        return x.copy()
    n, c, h, w = x.shape
    iy, wy = _bicubic_axis_weights(h, factor, x.dtype)
    ix, wx = _bicubic_axis_weights(w, factor, x.dtype)
    rows = (x[:, :, iy, :] * wy[None, None, :, :, None]).sum(axis=3)  # (N,C,H*f,W)
    out = (rows[:, :, :, ix] * wx[None, None, None, :, :]).sum(axis=4)
    return out
