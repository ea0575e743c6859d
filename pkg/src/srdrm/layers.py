"""Trainable layer objects over the functional ops.

A layer keeps its parameters, caches the forward pass, and exposes
``backward`` plus named parameter/gradient/state dictionaries.  Composite
models chain layers in construction order, which also fixes RNG draw
order and checkpoint entry order.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .ops import BnParams, ConvParams

__all__ = [
    "he_uniform",
    "Conv2dLayer",
    "Deconv2dLayer",
    "BatchNormLayer",
    "ActivationLayer",
    "ResidualLayer",
    "Sequential",
]


def he_uniform(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2dLayer:
    """Convolution with optional extra asymmetric zero padding.

    ``same_pad`` (top, bottom, left, right) keeps even-kernel stride-1 convs
    size-preserving: symmetric integer padding cannot do that for k=4.
    """

    def __init__(self, in_ch, out_ch, k, stride=1, padding=0, same_pad=None,
                 rng=None, dtype=np.float32):
        w = he_uniform(rng, (out_ch, in_ch, k, k), fan_in=in_ch * k * k, dtype=dtype)
        b = np.zeros(out_ch, dtype=dtype)
        self.p = ConvParams(w, b, stride=stride, padding=padding)
        self.same_pad = same_pad
        self.grads = {}
        self._cache = None

    def forward(self, x, train=False):
        if self.same_pad is not None:
            x = ops.pad2d(x, self.same_pad)
        out, self._cache = ops.conv2d(x, self.p)
        return out

    def backward(self, dout):
        dx, dw, db = ops.conv2d_backward(dout, self._cache)
        if self.same_pad is not None:
            dx = ops.pad2d_backward(dx, self.same_pad)
        self.grads = {"weight": dw, "bias": db}
        return dx

    def params(self):
        return {"weight": self.p.weights, "bias": self.p.bias}

    def set_param(self, key, value):
        if key == "weight":
            self.p.weights = value
        elif key == "bias":
            self.p.bias = value
        else:
            raise KeyError(key)

    def state(self):
        return self.params()

    def set_state(self, key, value):
        self.set_param(key, value)


class Deconv2dLayer:
    def __init__(self, in_ch, out_ch, k, stride=2, padding=1, rng=None, dtype=np.float32):
        w = he_uniform(rng, (out_ch, in_ch, k, k), fan_in=in_ch * k * k, dtype=dtype)
        b = np.zeros(out_ch, dtype=dtype)
        self.p = ConvParams(w, b, stride=stride, padding=padding)
        self.grads = {}
        self._cache = None

    def forward(self, x, train=False):
        out, self._cache = ops.deconv2d(x, self.p)
        return out

    def backward(self, dout):
        dx, dw, db = ops.deconv2d_backward(dout, self._cache)
        self.grads = {"weight": dw, "bias": db}
        return dx

    def params(self):
        return {"weight": self.p.weights, "bias": self.p.bias}

    def set_param(self, key, value):
        if key == "weight":
            self.p.weights = value
        elif key == "bias":
            self.p.bias = value
        else:
            raise KeyError(key)

    def state(self):
        return self.params()

    def set_state(self, key, value):
        self.set_param(key, value)


class BatchNormLayer:
    """Batch norm whose running statistics are swapped in as fresh snapshots
    on each training step (never mutated in place)."""

    def __init__(self, channels, momentum=0.1, epsilon=1e-5, dtype=np.float32):
        self.bn = BnParams(
            gamma=np.ones(channels, dtype=dtype),
            beta=np.zeros(channels, dtype=dtype),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
            momentum=momentum,
            epsilon=epsilon,
        )
        self.grads = {}
        self._cache = None

    def forward(self, x, train=False, update_stats=True):
        mode = "train" if train else "infer"
        out, self._cache, updated = ops.batchnorm(x, self.bn, mode)
        if train and update_stats:
            self.bn = updated
        return out

    def backward(self, dout):
        dx, dgamma, dbeta = ops.batchnorm_backward(dout, self._cache)
        self.grads = {"gamma": dgamma, "beta": dbeta}
        return dx

    def params(self):
        return {"gamma": self.bn.gamma, "beta": self.bn.beta}

    def set_param(self, key, value):
        if key == "gamma":
            self.bn.gamma = value
        elif key == "beta":
            self.bn.beta = value
        else:
            raise KeyError(key)

    def state(self):
        return {
            "gamma": self.bn.gamma,
            "beta": self.bn.beta,
            "running_mean": self.bn.running_mean,
            "running_var": self.bn.running_var,
        }

    def set_state(self, key, value):
        if key == "running_mean":
            self.bn.running_mean = value
        elif key == "running_var":
            self.bn.running_var = value
        else:
            self.set_param(key, value)


class ActivationLayer:
    def __init__(self, kind, alpha=0.2):
        self.kind = kind
        self.alpha = alpha
        self.grads = {}
        self._cache = None

    def forward(self, x, train=False):
        out, self._cache = ops.activation(x, self.kind, self.alpha)
        return out

    def backward(self, dout):
        return ops.activation_backward(dout, self._cache)

    def params(self):
        return {}

    def state(self):
        return {}


class ResidualLayer:
    """conv(k3) -> [bn] -> relu -> conv(k3) -> [bn], plus identity skip."""

    def __init__(self, channels, use_bn=False, rng=None, dtype=np.float32):
        self.conv1 = Conv2dLayer(channels, channels, 3, padding=1, rng=rng, dtype=dtype)
        self.bn1 = BatchNormLayer(channels, dtype=dtype) if use_bn else None
        self.relu = ActivationLayer("relu")
        self.conv2 = Conv2dLayer(channels, channels, 3, padding=1, rng=rng, dtype=dtype)
        self.bn2 = BatchNormLayer(channels, dtype=dtype) if use_bn else None

    def _chain(self):
        seq = [("conv1", self.conv1)]
        if self.bn1 is not None:
            seq.append(("bn1", self.bn1))
        seq.append(("relu", self.relu))
        seq.append(("conv2", self.conv2))
        if self.bn2 is not None:
            seq.append(("bn2", self.bn2))
        return seq

    def forward(self, x, train=False):
        h = x
        for _, layer in self._chain():
            h = layer.forward(h, train=train)
        return x + h

    def backward(self, dout):
        dh = dout
        for _, layer in reversed(self._chain()):
            dh = layer.backward(dh)
        return dout + dh

    def named_layers(self):
        return self._chain()


class Sequential:
    """Ordered (name, layer) pipeline with flat dotted state names."""

    def __init__(self, named_layers):
        self.layers = list(named_layers)

    def forward(self, x, train=False):
        for _, layer in self.layers:
            x = layer.forward(x, train=train)
        return x

    def backward(self, dout):
        for _, layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def _flat(self):
        for name, layer in self.layers:
            if isinstance(layer, ResidualLayer):
                for sub, leaf in layer.named_layers():
                    yield f"{name}.{sub}", leaf
            else:
                yield name, layer

    def named_params(self):
        out = {}
        for name, leaf in self._flat():
            for key, arr in leaf.params().items():
                out[f"{name}.{key}"] = arr
        return out

    def named_grads(self):
        out = {}
        for name, leaf in self._flat():
            for key in leaf.params():
                out[f"{name}.{key}"] = leaf.grads[key]
        return out

    def named_state(self):
        out = {}
        for name, leaf in self._flat():
            for key, arr in leaf.state().items():
                out[f"{name}.{key}"] = arr
        return out

    def set_param(self, name, value):
        prefix, key = name.rsplit(".", 1)
        for lname, leaf in self._flat():
            if lname == prefix:
                leaf.set_param(key, value)
                return
        raise KeyError(name)

    def set_state(self, name, value):
        prefix, key = name.rsplit(".", 1)
        for lname, leaf in self._flat():
            if lname == prefix:
                leaf.set_state(key, value)
                return
        raise KeyError(name)

    def snapshot_caches(self):
        """Capture per-layer forward caches so a second forward pass does not
        clobber the first one's backward path (used by the GAN trainer)."""
        return [leaf._cache for _, leaf in self._flat()]

    def restore_caches(self, snapshot):
        for (_, leaf), cache in zip(self._flat(), snapshot):
            leaf._cache = cache
