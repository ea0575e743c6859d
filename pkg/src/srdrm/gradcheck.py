"""Finite-difference verification harness for hand-written gradients.

The check projects the op output onto a fixed random direction R, so the
scalar L = sum(out * R) has analytic gradient vjp(R), and compares that
against central differences of L.  Run it in float64: single precision
makes the differences meaningless at step 1e-3.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import NumericError

__all__ = ["max_relative_error", "grad_check"]


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max over elements of |a - n| / max(|a|, |n|, 1e-8)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
    return float(np.max(np.abs(a - n) / denom))


def grad_check(
    op: Callable,
    inputs: Sequence[np.ndarray],
    step: float = 1e-3,
    wrt: Sequence[int] | None = None,
    max_coords: int | None = None,
    projection_seed: int = 0,
    name: str = "op",
    stability_filter: bool = False,
    stability_rtol: float = 2.5e-4,
    min_valid_fraction: float = 0.15,
    stats: dict | None = None,
) -> float:
    """Return the worst relative error between analytic and numeric gradients.

    ``op(*inputs)`` must return ``(out, vjp)`` where ``vjp(upstream)`` yields
    one gradient array per input.  ``wrt`` restricts which inputs are checked
    (default: all); ``max_coords`` caps the coordinates differenced per input
    (deterministically sampled), for composed graphs too large to sweep.

    ``stability_filter`` makes the numeric side certify itself: a central
    difference is only a valid derivative estimate where the function is
    smooth across the whole probed interval, so each coordinate is also
    differenced at step/2 and dropped when the two estimates disagree
    (relative ``stability_rtol``), which happens exactly when a kink (ReLU
    boundary) sits inside the probe.  The filter never consults the analytic
    gradient.  If fewer than ``min_valid_fraction`` of the coordinates
    survive, the check aborts rather than pass vacuously.
    """
    inputs = [np.asarray(x, dtype=np.float64) for x in inputs]
    for i, x in enumerate(inputs):
        if not np.all(np.isfinite(x)):
            raise NumericError(f"{name}: input {i} contains non-finite values")
    out, vjp = op(*inputs)
    if not np.all(np.isfinite(out)):
        raise NumericError(f"{name}: forward output is non-finite")
    rng = np.random.default_rng(projection_seed)
    r = rng.standard_normal(out.shape)
    analytic = vjp(r)
    if wrt is None:
        wrt = range(len(inputs))

    def loss_at(args):
        o, _ = op(*args)
        if not np.all(np.isfinite(o)):
            raise NumericError(f"{name}: forward output is non-finite during differencing")
        return float(np.sum(o * r))

    def central(x, k, h):
        orig = x.flat[k]
        x.flat[k] = orig + h
        lp = loss_at(inputs)
        x.flat[k] = orig - h
        lm = loss_at(inputs)
        x.flat[k] = orig
        return (lp - lm) / (2.0 * h)

    worst = 0.0
    n_total = 0
    n_valid = 0
    for i in wrt:
        x = inputs[i]
        g = np.asarray(analytic[i], dtype=np.float64)
        if g.shape != x.shape:
            raise NumericError(
                f"{name}: analytic gradient {i} has shape {g.shape}, input has {x.shape}"
            )
        flat_idx = np.arange(x.size)
        if max_coords is not None and x.size > max_coords:
            flat_idx = rng.permutation(x.size)[:max_coords]
            flat_idx.sort()
        numeric, kept = [], []
        for k in flat_idx:
            fd = central(x, k, step)
            if stability_filter:
                fd_half = central(x, k, step / 2.0)
                scale = max(abs(fd), abs(fd_half), 1e-8)
                if abs(fd - fd_half) > stability_rtol * scale:
                    continue  # kink inside the probe: FD is not an oracle here
            numeric.append(fd)
            kept.append(k)
        n_total += flat_idx.size
        n_valid += len(kept)
        if kept:
            worst = max(worst, max_relative_error(g.flat[kept], np.array(numeric)))
    if stats is not None:
        stats["total"] = stats.get("total", 0) + n_total
        stats["valid"] = stats.get("valid", 0) + n_valid
    if stability_filter and n_valid < min_valid_fraction * n_total:
        raise NumericError(
            f"{name}: only {n_valid}/{n_total} coordinates have stable finite "
            f"differences; instance unsuitable for checking"
        )
    return worst
