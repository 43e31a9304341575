"""Core differentiable op set shared by every network in the package.

All ops operate on torch tensors, which supply the feature-map contract
used throughout: data [B, C, H, W], an optional `.grad` of identical
shape, and a `requires_grad` flag. Ops validate shapes eagerly and raise
ValueError on contract violations so that bad wiring fails at the call
site instead of deep inside autograd.
"""

import math

import torch
import torch.nn.functional as F
from torch import nn

BATCHNORM_EPS = 1e-5
# Weight of the *old* running statistic in the running-average update.
BATCHNORM_MOMENTUM = 0.9


def check_feature_map(x: torch.Tensor, name: str = "input") -> None:
    """Validate the [B, C, H, W] feature-map contract."""
    if x.dim() != 4:
        raise ValueError(f"{name} must be 4-D [B, C, H, W], got shape {tuple(x.shape)}")
    if min(x.shape) < 1:
        raise ValueError(f"{name} has an empty dimension: {tuple(x.shape)}")


def require_finite(x: torch.Tensor, name: str = "tensor") -> torch.Tensor:
    """Raise FloatingPointError if x contains NaN or Inf."""
    if not torch.isfinite(x).all():
        raise FloatingPointError(f"{name} contains NaN or Inf values")
    return x


def conv2d(x, weight, bias=None, stride: int = 1, pad: int | None = None):
    """2-D convolution restricted to the 1x1/3x3, stride 1/2 cases we use.

    `pad=None` selects same padding for the stride-1 case (pad = k // 2).
    """
    check_feature_map(x, "conv2d input")
    if weight.dim() != 4 or weight.shape[2] != weight.shape[3]:
        raise ValueError(f"conv2d weight must be [Cout, Cin, k, k], got {tuple(weight.shape)}")
    k = weight.shape[2]
    if k not in (1, 3):
        raise ValueError(f"kernel size must be 1 or 3, got {k}")
    if stride not in (1, 2):
        raise ValueError(f"stride must be 1 or 2, got {stride}")
    if x.shape[1] != weight.shape[1]:
        raise ValueError(
            f"channel mismatch: input has {x.shape[1]} channels, weight expects {weight.shape[1]}"
        )
    if pad is None:
        pad = k // 2
    for dim in (2, 3):
        if (x.shape[dim] + 2 * pad - k) % stride != 0:
            raise ValueError(
                f"non-integral output size for input {tuple(x.shape)}, k={k}, "
                f"stride={stride}, pad={pad}"
            )
    return F.conv2d(x, weight, bias, stride=stride, padding=pad)


def dense(x, weight, bias=None):
    """Fully connected layer: x [B, In] -> [B, Out]."""
    if x.dim() != 2:
        raise ValueError(f"dense input must be 2-D [B, In], got {tuple(x.shape)}")
    if x.shape[1] != weight.shape[1]:
        raise ValueError(
            f"feature mismatch: input has {x.shape[1]}, weight expects {weight.shape[1]}"
        )
    return F.linear(x, weight, bias)


def relu(x):
    return F.relu(x)


def sigmoid(x):
    return torch.sigmoid(x)


def tanh(x):
    return torch.tanh(x)


def batchnorm(x, gamma, beta, running_mean, running_var, training: bool,
              momentum: float = BATCHNORM_MOMENTUM, eps: float = BATCHNORM_EPS):
    """Per-channel batch normalization over the [B, H, W] axes.

    `momentum` is the weight of the old running statistic; torch's
    functional form takes the complementary weight.
    """
    check_feature_map(x, "batchnorm input")
    if x.shape[1] != gamma.shape[0]:
        raise ValueError(f"channel mismatch: {x.shape[1]} vs {gamma.shape[0]} affine params")
    return F.batch_norm(x, running_mean, running_var, gamma, beta,
                        training=training, momentum=1.0 - momentum, eps=eps)


def upsample_nearest2x(x):
    check_feature_map(x, "upsample input")
    return F.interpolate(x, scale_factor=2, mode="nearest")


def avgpool2x(x):
    check_feature_map(x, "avgpool input")
    if x.shape[2] % 2 or x.shape[3] % 2:
        raise ValueError(f"avgpool2x needs even spatial dims, got {tuple(x.shape)}")
    return F.avg_pool2d(x, 2)


def global_sum_pool(x):
    check_feature_map(x, "global_sum_pool input")
    return x.sum(dim=(2, 3))


def concat_channels(a, b):
    check_feature_map(a, "concat lhs")
    check_feature_map(b, "concat rhs")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ValueError(
            f"concat_channels requires equal batch and spatial dims, got "
            f"{tuple(a.shape)} vs {tuple(b.shape)}"
        )
    return torch.cat([a, b], dim=1)


def add(a, b):
    if a.shape != b.shape:
        raise ValueError(f"add shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return a + b


def mul_elementwise(a, b):
    if a.shape != b.shape:
        raise ValueError(f"mul shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return a * b


def scale(x, c: float):
    return x * c


class BatchNorm2d(nn.Module):
    """Batch norm with an explicit "never trained" guard.

    Running statistics start uninitialized; evaluating in eval mode before
    any train-mode forward is an error rather than a silent use of the
    (0, 1) placeholder stats.
    """

    def __init__(self, num_features: int, eps: float = BATCHNORM_EPS,
                 momentum: float = BATCHNORM_MOMENTUM):
        super().__init__()
        self.num_features = num_features
        self.eps = eps
        self.momentum = momentum
        self.weight = nn.Parameter(torch.ones(num_features))
        self.bias = nn.Parameter(torch.zeros(num_features))
        self.register_buffer("running_mean", torch.zeros(num_features))
        self.register_buffer("running_var", torch.ones(num_features))
        self.register_buffer("num_batches_tracked", torch.zeros((), dtype=torch.int64))

    @property
    def stats_initialized(self) -> bool:
        return int(self.num_batches_tracked) > 0

    def forward(self, x):
        if not self.training and not self.stats_initialized:
            raise RuntimeError(
                "batchnorm evaluated in eval mode before any training step; "
                "running statistics are uninitialized"
            )
        if self.training:
            self.num_batches_tracked += 1
        return batchnorm(x, self.weight, self.bias, self.running_mean, self.running_var,
                         self.training, self.momentum, self.eps)

    def extra_repr(self) -> str:
        return f"{self.num_features}, eps={self.eps}, momentum={self.momentum}"


def init_conv_weight_(weight: torch.Tensor, generator: torch.Generator | None = None):
    """Fan-in scaled Gaussian init, std = sqrt(2 / fan_in)."""
    fan_in = weight.shape[1] * weight.shape[2] * weight.shape[3]
    with torch.no_grad():
        weight.normal_(0.0, math.sqrt(2.0 / fan_in), generator=generator)
    return weight


def init_dense_weight_(weight: torch.Tensor, generator: torch.Generator | None = None):
    fan_in = weight.shape[1]
    with torch.no_grad():
        weight.normal_(0.0, math.sqrt(2.0 / fan_in), generator=generator)
    return weight


def make_conv(in_ch: int, out_ch: int, kernel: int,
              generator: torch.Generator | None = None, bias: bool = True) -> nn.Conv2d:
    """Conv2d module with the package's fan-in init and same padding."""
    conv = nn.Conv2d(in_ch, out_ch, kernel, padding=kernel // 2, bias=bias)
    init_conv_weight_(conv.weight, generator)
    if conv.bias is not None:
        with torch.no_grad():
            conv.bias.zero_()
    return conv


def make_dense(in_features: int, out_features: int,
               generator: torch.Generator | None = None, bias: bool = True) -> nn.Linear:
    lin = nn.Linear(in_features, out_features, bias=bias)
    init_dense_weight_(lin.weight, generator)
    if lin.bias is not None:
        with torch.no_grad():
            lin.bias.zero_()
    return lin
