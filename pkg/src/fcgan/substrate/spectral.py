"""Spectral normalization via power iteration.

Weights are viewed as [Cout, rest] matrices; a persistent (u, v) singular
vector pair is refined by one power-iteration step per training forward
(50 steps right after initialization). The estimate sigma = u^T W v treats
u and v as constants, so gradients flow through W only, which is the
standard convention for spectrally normalized discriminators.
"""

import torch
import torch.nn.functional as F
from torch import nn

from . import ops

INIT_POWER_STEPS = 50
_NORM_EPS = 1e-12


def _as_matrix(weight: torch.Tensor) -> torch.Tensor:
    return weight.reshape(weight.shape[0], -1)


def power_iterate(w_mat: torch.Tensor, u: torch.Tensor, v: torch.Tensor, n_steps: int):
    """Run alternating power-iteration updates, returning refreshed (u, v)."""
    with torch.no_grad():
        for _ in range(n_steps):
            v = F.normalize(w_mat.t() @ u, dim=0, eps=_NORM_EPS)
            u = F.normalize(w_mat @ v, dim=0, eps=_NORM_EPS)
    return u, v


def spectral_sigma(w_mat: torch.Tensor, u: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """Largest-singular-value estimate; differentiable through w only."""
    return u.detach() @ w_mat @ v.detach()


def spectral_normalize(weight: torch.Tensor, u: torch.Tensor, v: torch.Tensor,
                       n_iter: int = 1):
    """Return (weight / sigma, sigma, u, v) after n_iter power-iteration steps."""
    w_mat = _as_matrix(weight)
    if not torch.any(w_mat != 0):
        raise ValueError("spectral_normalize: weight matrix is identically zero")
    u, v = power_iterate(w_mat.detach(), u, v, n_iter)
    sigma = spectral_sigma(w_mat, u, v)
    return weight / sigma, sigma, u, v


def make_spectral_state(weight: torch.Tensor, generator: torch.Generator | None = None):
    """Unit random (u, v) vectors matching the [Cout, rest] view of weight."""
    rows, cols = _as_matrix(weight).shape
    u = torch.randn(rows, generator=generator, dtype=weight.dtype)
    v = torch.randn(cols, generator=generator, dtype=weight.dtype)
    return F.normalize(u, dim=0, eps=_NORM_EPS), F.normalize(v, dim=0, eps=_NORM_EPS)


class _SpectralMixin:
    """Shared power-iteration state handling for SN layers."""

    def _init_spectral(self, generator):
        u, v = make_spectral_state(self.weight, generator)
        self.register_buffer("sn_u", u)
        self.register_buffer("sn_v", v)
        u, v = power_iterate(_as_matrix(self.weight.detach()), self.sn_u, self.sn_v,
                             INIT_POWER_STEPS)
        self.sn_u.copy_(u)
        self.sn_v.copy_(v)

    def normalized_weight(self) -> torch.Tensor:
        w_mat = _as_matrix(self.weight)
        if self.training:
            u, v = power_iterate(w_mat.detach(), self.sn_u, self.sn_v, 1)
            self.sn_u.copy_(u)
            self.sn_v.copy_(v)
        # clone: the buffers are updated in place on the next forward, which
        # would otherwise invalidate tensors saved by this pass's graph
        sigma = spectral_sigma(w_mat, self.sn_u.clone(), self.sn_v.clone())
        if sigma == 0:
            raise ValueError("spectral normalization hit a zero weight matrix")
        return self.weight / sigma


class SNConv2d(nn.Conv2d, _SpectralMixin):
    """Conv2d whose weight is divided by its estimated top singular value."""

    def __init__(self, in_ch, out_ch, kernel, stride=1,
                 generator: torch.Generator | None = None, bias: bool = True):
        super().__init__(in_ch, out_ch, kernel, stride=stride, padding=kernel // 2, bias=bias)
        ops.init_conv_weight_(self.weight, generator)
        if self.bias is not None:
            with torch.no_grad():
                self.bias.zero_()
        self._init_spectral(generator)

    def forward(self, x):
        return F.conv2d(x, self.normalized_weight(), self.bias,
                        stride=self.stride, padding=self.padding)


class SNLinear(nn.Linear, _SpectralMixin):
    """Linear layer with spectrally normalized weight."""

    def __init__(self, in_features, out_features,
                 generator: torch.Generator | None = None, bias: bool = True):
        super().__init__(in_features, out_features, bias=bias)
        ops.init_dense_weight_(self.weight, generator)
        if self.bias is not None:
            with torch.no_grad():
                self.bias.zero_()
        self._init_spectral(generator)

    def forward(self, x):
        return F.linear(x, self.normalized_weight(), self.bias)
