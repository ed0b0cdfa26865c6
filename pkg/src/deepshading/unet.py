"""U-shaped convolutional network: construction, forward and backward.

Level ``l`` works at resolution ``H / 2**l`` with ``u0 * 2**l`` kernels split
into ``2**l`` convolution groups.  The down branch runs one step (convolution
plus leaky ReLU) per level with 2x2 mean pooling in between.  The up branch
upsamples bilinearly, concatenates the down-step output of the same level
and convolves again.  The coarsest level has a single step and the final
level-0 up convolution writes ``out_channels`` with no activation.
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from . import attributes
from .layers import (
    DEFAULT_LEAKY_SLOPE,
    ConvParams,
    bilinear_up_2x,
    bilinear_up_2x_backward,
    conv2d_backward,
    conv2d_forward,
    leaky_relu,
    leaky_relu_backward,
    mean_pool_2x2,
    mean_pool_2x2_backward,
)


@dataclass(frozen=True)
class NetConfig:
    levels: int
    u0: int
    kernel_size: int
    in_channels: int
    out_channels: int
    leaky_slope: float = DEFAULT_LEAKY_SLOPE
    mode: str = attributes.MONO
    attributes: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "attributes", tuple(self.attributes))
        if self.levels < 1 or self.u0 < 1:
            raise ValueError("levels and u0 must be at least 1")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")
        if self.leaky_slope < 0:
            raise ValueError("leaky_slope must be non-negative")
        if self.mode not in (attributes.MONO, attributes.RGB):
            raise ValueError(f"mode must be 'mono' or 'rgb', got {self.mode!r}")
        # down level l reads u0 * 2**(l-1) channels in 2**l groups
        for l in range(1, self.levels):
            if (self.u0 * 2 ** (l - 1)) % (2 ** l):
                raise ValueError(f"u0={self.u0} cannot be split into {2 ** l} groups on level {l}")
        if self.attributes:
            expected = attributes.input_channels(self.attributes, self.mode)
            if expected != self.in_channels:
                raise ValueError(
                    f"attributes {self.attributes} give {expected} input channels "
                    f"in {self.mode} mode, config says {self.in_channels}")

    @property
    def divisor(self) -> int:
        """Input height and width must be multiples of this."""
        return 2 ** (self.levels - 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["attributes"] = list(self.attributes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown NetConfig fields: {sorted(unknown)}")
        return cls(**known)


@dataclass(frozen=True)
class LayerSpec:
    name: str
    level: int
    in_channels: int
    out_channels: int
    groups: int
    activation: bool


def layer_plan(config: NetConfig) -> list[LayerSpec]:
    """Convolution layers in build (and execution) order."""
    u0, levels = config.u0, config.levels
    if levels == 1:
        return [LayerSpec("down0", 0, config.in_channels, config.out_channels, 1, True)]
    plan = []
    for l in range(levels):
        cin = config.in_channels if l == 0 else u0 * 2 ** (l - 1)
        plan.append(LayerSpec(f"down{l}", l, cin, u0 * 2 ** l, 2 ** l, True))
    for l in range(levels - 2, -1, -1):
        cin = u0 * 2 ** (l + 1) + u0 * 2 ** l
        cout = config.out_channels if l == 0 else u0 * 2 ** l
        plan.append(LayerSpec(f"up{l}", l, cin, cout, 2 ** l, l > 0))
    return plan


def param_count(config: NetConfig) -> int:
    k2 = config.kernel_size ** 2
    return sum(s.out_channels * (s.in_channels // s.groups) * k2 + s.out_channels
               for s in layer_plan(config))


# Reference configurations; the attribute lists give the input widths.
TABLE1 = {
    "AO": NetConfig(levels=6, u0=8, kernel_size=3, in_channels=6, out_channels=1,
                    mode="mono", attributes=("N_s", "P_s")),
    "DoF": NetConfig(levels=5, u0=8, kernel_size=3, in_channels=2, out_channels=1,
                     mode="mono", attributes=("D_focal", "L")),
    "GI": NetConfig(levels=5, u0=16, kernel_size=3, in_channels=7, out_channels=1,
                    mode="mono", attributes=("N_s", "P_s", "L_diff")),
    "MB": NetConfig(levels=5, u0=16, kernel_size=3, in_channels=4, out_channels=1,
                    mode="mono", attributes=("F", "L", "D_s")),
    "SSS": NetConfig(levels=5, u0=8, kernel_size=3, in_channels=5, out_channels=1,
                     mode="mono", attributes=("P_s", "R_scatt", "L")),
    "DO": NetConfig(levels=5, u0=16, kernel_size=3, in_channels=9, out_channels=3,
                    mode="rgb", attributes=("N_w", "N_s", "P_s")),
    "AA": NetConfig(levels=1, u0=8, kernel_size=5, in_channels=2, out_channels=1,
                    mode="mono", attributes=("D_s", "L")),
}

# Published sizes, for reference next to param_count().
TABLE1_SIZES = {"IBL": "3.9 K", "AO": "71 K", "DO": "135 K", "GI": "134 K",
                "SSS": "133 K", "DoF": "34 K", "MB": "133 K", "AA": "1217",
                "Full": "203 K"}


def _he_init(rng, spec: LayerSpec, k: int, dtype):
    fan_in = (spec.in_channels // spec.groups) * k * k
    shape = (spec.out_channels, spec.in_channels // spec.groups, k, k)
    w = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
    return ConvParams(w.astype(dtype), np.zeros(spec.out_channels, dtype=dtype), spec.groups)


class Network:
    """A built U-net: the config, its layer plan and one ConvParams per layer."""

    def __init__(self, config: NetConfig, convs: list[ConvParams]):
        self.config = config
        self.plan = layer_plan(config)
        if len(convs) != len(self.plan):
            raise ValueError(f"expected {len(self.plan)} convolutions, got {len(convs)}")
        for spec, p in zip(self.plan, convs):
            expected = (spec.out_channels, spec.in_channels // spec.groups,
                        config.kernel_size, config.kernel_size)
            if p.weights.shape != expected or p.groups != spec.groups:
                raise ValueError(f"layer {spec.name}: weights {p.weights.shape} "
                                 f"groups {p.groups}, expected {expected} groups {spec.groups}")
        self.convs = convs

    @property
    def dtype(self):
        return self.convs[0].weights.dtype

    def parameters(self) -> list[np.ndarray]:
        """Weight and bias arrays in build order (views, not copies)."""
        out = []
        for p in self.convs:
            out += [p.weights, p.bias]
        return out

    def num_parameters(self) -> int:
        return sum(p.size for p in self.convs)

    def astype(self, dtype) -> "Network":
        return Network(self.config, [
            ConvParams(p.weights.astype(dtype), p.bias.astype(dtype), p.groups)
            for p in self.convs])

    def copy(self) -> "Network":
        return self.astype(self.dtype)

    def _check_input(self, x):
        if x.ndim not in (3, 4):
            raise ValueError(f"expected (C, H, W) or (N, C, H, W) input, got {x.shape}")
        c, h, w = x.shape[-3:]
        if c != self.config.in_channels:
            raise ValueError(f"input has {c} channels, network expects {self.config.in_channels}")
        d = self.config.divisor
        if h % d or w % d:
            raise ValueError(f"input size {h}x{w} is not divisible by {d}")

    def forward(self, x: np.ndarray, keep_intermediates: bool = False):
        """Run the network.  Returns the output, or ``(output, cache)`` when
        ``keep_intermediates`` is set; the cache feeds :meth:`backward`."""
        self._check_input(x)
        slope = self.config.leaky_slope
        x = x.astype(self.dtype, copy=False)
        levels = self.config.levels
        conv_inputs, pre_acts, skips = [], [], []
        h = x
        layer = 0
        for l in range(levels):
            if l > 0:
                h = mean_pool_2x2(h)
            z = conv2d_forward(h, self.convs[layer])
            conv_inputs.append(h)
            pre_acts.append(z)
            h = leaky_relu(z, slope)
            skips.append(h)
            layer += 1
        for l in range(levels - 2, -1, -1):
            c = np.concatenate([bilinear_up_2x(h), skips[l]], axis=-3)
            z = conv2d_forward(c, self.convs[layer])
            conv_inputs.append(c)
            pre_acts.append(z)
            h = leaky_relu(z, slope) if self.plan[layer].activation else z
            layer += 1
        if keep_intermediates:
            return h, {"conv_inputs": conv_inputs, "pre_acts": pre_acts, "shape": x.shape}
        return h

    def backward(self, cache, grad_out: np.ndarray, input_grad: bool = False):
        """Gradients ``(grad_weights, grad_bias)`` per convolution, in build order.

        With ``input_grad`` the gradient with respect to the network input is
        returned as well, as ``(grads, grad_input)``.
        """
        if not cache:
            raise RuntimeError("backward needs the cache from forward(..., keep_intermediates=True)")
        slope = self.config.leaky_slope
        levels = self.config.levels
        conv_inputs, pre_acts = cache["conv_inputs"], cache["pre_acts"]
        if grad_out.shape != pre_acts[-1].shape:
            raise ValueError(f"grad_out shape {grad_out.shape} != output shape {pre_acts[-1].shape}")
        grads = [None] * len(self.convs)
        skip_grads = [None] * levels
        g = grad_out.astype(self.dtype, copy=False)
        layer = len(self.convs) - 1
        for l in range(0, levels - 1):
            if self.plan[layer].activation:
                g = leaky_relu_backward(pre_acts[layer], g, slope)
            gin, gw, gb = conv2d_backward(conv_inputs[layer], self.convs[layer], g)
            grads[layer] = (gw, gb)
            n_up = self.config.u0 * 2 ** (l + 1)
            skip_grads[l] = gin[..., n_up:, :, :]
            g = bilinear_up_2x_backward(gin[..., :n_up, :, :])
            layer -= 1
        for l in range(levels - 1, -1, -1):
            if skip_grads[l] is not None:
                g = g + skip_grads[l]
            g = leaky_relu_backward(pre_acts[layer], g, slope)
            gin, gw, gb = conv2d_backward(conv_inputs[layer], self.convs[layer], g)
            grads[layer] = (gw, gb)
            if l > 0:
                g = mean_pool_2x2_backward(gin)
            layer -= 1
        return (grads, gin) if input_grad else grads


def build(config: NetConfig, seed: int = 0, dtype=np.float32) -> Network:
    """He-normal weights (variance 2 / fan_in), zero biases, deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    return Network(config, [_he_init(rng, s, config.kernel_size, dtype)
                            for s in layer_plan(config)])
