"""Differentiable-tensor substrate: op set, spectral norm, gradient tools."""

from .ops import (
    BATCHNORM_EPS,
    BATCHNORM_MOMENTUM,
    BatchNorm2d,
    add,
    avgpool2x,
    batchnorm,
    check_feature_map,
    concat_channels,
    conv2d,
    dense,
    global_sum_pool,
    init_conv_weight_,
    init_dense_weight_,
    make_conv,
    make_dense,
    mul_elementwise,
    relu,
    require_finite,
    scale,
    sigmoid,
    tanh,
    upsample_nearest2x,
)
from .spectral import (
    INIT_POWER_STEPS,
    SNConv2d,
    SNLinear,
    make_spectral_state,
    power_iterate,
    spectral_normalize,
    spectral_sigma,
)
from .gradcheck import (
    DOUBLE_BACKPROP_SUPPORTED,
    GRAD_PENALTY_MODE,
    fd_check,
    input_gradient,
    max_relative_error,
    numerical_gradient,
    sample_coords,
)

__all__ = [name for name in dir() if not name.startswith("_")]
