"""Generator and discriminator architectures.

The generator stacks n residual-multiplier blocks, each doubling the
spatial extent (conv k4 -> repeated residual layers -> conv k4 -> deconv
k4 s2 -> relu), then maps features to 3 channels through a k3 conv and
tanh.  The discriminator is a patch classifier: nine k3 convs whose
strides [2,2,2,2,1,1,1,1,1] reduce a 6-channel (condition, candidate)
input to a 1-channel sigmoid validity map at 1/16 of the input extent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ContractViolation
from .layers import (
    ActivationLayer,
    BatchNormLayer,
    Conv2dLayer,
    Deconv2dLayer,
    ResidualLayer,
    Sequential,
)

__all__ = [
    "GeneratorConfig",
    "DiscriminatorConfig",
    "Generator",
    "Discriminator",
    "build_generator",
    "build_discriminator",
    "forward_generator",
    "forward_discriminator",
    "parameter_count",
    "cast_model",
    "TINY_GENERATOR",
    "TINY_DISCRIMINATOR",
]

# TF-style SAME padding for k=4, s=1: total pad k-1 split (1 before, 2 after)
_K4_SAME = (1, 2, 1, 2)


@dataclass
class GeneratorConfig:
    scale_exp: int = 1            # n: output extent = input * 2**n
    base_filters: int = 64
    residual_layers: int = 8
    use_bn_in_drm: bool = False
    leaky_slope: float = 0.2

    def __post_init__(self):
        if self.scale_exp not in (1, 2, 3):
            raise ConfigurationError(f"scale_exp must be 1, 2 or 3, got {self.scale_exp}")
        if self.base_filters < 1 or self.residual_layers < 1:
            raise ConfigurationError(
                f"base_filters and residual_layers must be >= 1, got "
                f"{self.base_filters}, {self.residual_layers}"
            )

    @property
    def scale(self) -> int:
        return 2 ** self.scale_exp


@dataclass
class DiscriminatorConfig:
    layers: int = 9
    stride_layout: tuple = (2, 2, 2, 2, 1, 1, 1, 1, 1)
    base_filters: int = 32
    leaky_slope: float = 0.2

    def __post_init__(self):
        self.stride_layout = tuple(int(s) for s in self.stride_layout)
        if len(self.stride_layout) != self.layers:
            raise ConfigurationError(
                f"stride_layout length {len(self.stride_layout)} != layers {self.layers}"
            )
        if int(np.prod(self.stride_layout)) != 16:
            raise ConfigurationError(
                f"stride_layout product must be 16, got {self.stride_layout}"
            )
        if self.base_filters < 1:
            raise ConfigurationError(f"base_filters must be >= 1, got {self.base_filters}")

    @property
    def filter_cap(self) -> int:
        return self.base_filters * 8


# desk-scale profiles used by the test suites
TINY_GENERATOR = dict(base_filters=16, residual_layers=2)
TINY_DISCRIMINATOR = dict(base_filters=16)


class Generator:
    def __init__(self, config: GeneratorConfig, seed: int, dtype=np.float32):
        self.config = config
        self.seed = seed
        rng = np.random.default_rng(seed)
        f = config.base_filters
        named = []
        in_ch = 3
        for b in range(1, config.scale_exp + 1):
            pre = f"drm{b}"
            named.append((f"{pre}.head", Conv2dLayer(in_ch, f, 4, same_pad=_K4_SAME,
                                                     rng=rng, dtype=dtype)))
            for r in range(1, config.residual_layers + 1):
                named.append((f"{pre}.res{r}",
                              ResidualLayer(f, use_bn=config.use_bn_in_drm,
                                            rng=rng, dtype=dtype)))
            named.append((f"{pre}.tail", Conv2dLayer(f, f, 4, same_pad=_K4_SAME,
                                                     rng=rng, dtype=dtype)))
            named.append((f"{pre}.up", Deconv2dLayer(f, f, 4, stride=2, padding=1,
                                                     rng=rng, dtype=dtype)))
            named.append((f"{pre}.up_act", ActivationLayer("relu")))
            in_ch = f
        named.append(("out", Conv2dLayer(f, 3, 3, padding=1, rng=rng, dtype=dtype)))
        named.append(("out_act", ActivationLayer("tanh")))
        self.net = Sequential(named)

    def forward(self, x, train=False):
        return forward_generator(self, x, train=train)

    def backward(self, dout):
        return self.net.backward(dout)

    def named_params(self):
        return self.net.named_params()

    def named_grads(self):
        return self.net.named_grads()

    def state_arrays(self):
        return self.net.named_state()

    def set_param(self, name, value):
        self.net.set_param(name, value)

    def set_state(self, name, value):
        self.net.set_state(name, value)

    def config_meta(self):
        c = self.config
        return {
            "meta.kind": np.array([1.0], dtype=np.float32),
            "meta.scale_exp": np.array([c.scale_exp], dtype=np.float32),
            "meta.base_filters": np.array([c.base_filters], dtype=np.float32),
            "meta.residual_layers": np.array([c.residual_layers], dtype=np.float32),
            "meta.use_bn_in_drm": np.array([float(c.use_bn_in_drm)], dtype=np.float32),
            "meta.leaky_slope": np.array([c.leaky_slope], dtype=np.float32),
        }


class Discriminator:
    def __init__(self, config: DiscriminatorConfig, seed: int, dtype=np.float32):
        self.config = config
        self.seed = seed
        rng = np.random.default_rng(seed)
        named = []
        in_ch = 6
        filters = config.base_filters
        for i, stride in enumerate(config.stride_layout, start=1):
            last = i == config.layers
            if i > 1 and stride == 2:
                filters = min(filters * 2, config.filter_cap)
            out_ch = 1 if last else filters
            named.append((f"layer{i}.conv", Conv2dLayer(in_ch, out_ch, 3, stride=stride,
                                                        padding=1, rng=rng, dtype=dtype)))
            if last:
                named.append((f"layer{i}.act", ActivationLayer("sigmoid")))
            else:
                named.append((f"layer{i}.act",
                              ActivationLayer("leaky_relu", config.leaky_slope)))
                named.append((f"layer{i}.bn", BatchNormLayer(out_ch, dtype=dtype)))
            in_ch = out_ch
        self.net = Sequential(named)

    def forward(self, candidate, condition, train=False, update_stats=True):
        return forward_discriminator(self, candidate, condition, train=train,
                                     update_stats=update_stats)

    def backward(self, dout):
        """Backward through the stack; returns (d_candidate, d_condition)."""
        dx = self.net.backward(dout)
        return dx[:, 3:], dx[:, :3]

    def named_params(self):
        return self.net.named_params()

    def named_grads(self):
        return self.net.named_grads()

    def state_arrays(self):
        return self.net.named_state()

    def set_param(self, name, value):
        self.net.set_param(name, value)

    def set_state(self, name, value):
        self.net.set_state(name, value)

    def config_meta(self):
        c = self.config
        return {
            "meta.kind": np.array([2.0], dtype=np.float32),
            "meta.layers": np.array([c.layers], dtype=np.float32),
            "meta.stride_layout": np.array(c.stride_layout, dtype=np.float32),
            "meta.base_filters": np.array([c.base_filters], dtype=np.float32),
            "meta.leaky_slope": np.array([c.leaky_slope], dtype=np.float32),
        }


def build_generator(config: GeneratorConfig, seed: int, dtype=np.float32) -> Generator:
    """Seeded construction; equal seeds give bitwise-identical parameters."""
    return Generator(config, seed, dtype=dtype)


def build_discriminator(config: DiscriminatorConfig, seed: int, dtype=np.float32) -> Discriminator:
    return Discriminator(config, seed, dtype=dtype)


def forward_generator(generator: Generator, x: np.ndarray, train: bool = False) -> np.ndarray:
    """Map an LR batch (N,3,H,W) in [-1,1] to (N,3,2^n*H,2^n*W) in [-1,1]."""
    if x.ndim != 4 or x.shape[1] != 3:
        raise ContractViolation(
            f"generator input must be (batch,3,H,W), got {getattr(x, 'shape', None)}"
        )
    if x.shape[2] < 8 or x.shape[3] < 8:
        raise ContractViolation(f"generator input extents must be >= 8, got {x.shape}")
    return generator.net.forward(x, train=train)


def forward_discriminator(disc: Discriminator, candidate: np.ndarray,
                          condition: np.ndarray, train: bool = False,
                          update_stats: bool = True) -> np.ndarray:
    """Score an HR candidate against its upsampled LR condition.

    Channel order of the 6-channel input is (condition, candidate); the
    output is the (batch,1,H/16,W/16) sigmoid validity map.
    """
    for name, t in (("candidate", candidate), ("condition", condition)):
        if t.ndim != 4 or t.shape[1] != 3:
            raise ContractViolation(
                f"discriminator {name} must be (batch,3,H,W), got {getattr(t, 'shape', None)}"
            )
    if candidate.shape != condition.shape:
        raise ContractViolation(
            f"candidate extent {candidate.shape} != condition extent {condition.shape}"
        )
    if candidate.shape[2] < 16 or candidate.shape[3] < 16:
        raise ContractViolation(
            f"discriminator input extents must be >= 16, got {candidate.shape}"
        )
    x = np.concatenate([condition, candidate], axis=1)
    h = x
    for _, layer in disc.net.layers:
        if isinstance(layer, BatchNormLayer):
            h = layer.forward(h, train=train, update_stats=update_stats)
        else:
            h = layer.forward(h, train=train)
    return h


def parameter_count(model) -> int:
    """Trainable parameter count; a pure function of the model config."""
    return int(sum(a.size for a in model.named_params().values()))


def cast_model(model, dtype):
    """Cast all parameters/state to ``dtype`` in place (gradient-check path)."""
    for name, arr in list(model.state_arrays().items()):
        model.set_state(name, arr.astype(dtype))
    return model
