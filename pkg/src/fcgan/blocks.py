"""Generator building blocks.

The feature-cycling block (FCB) runs two shape-aligned branches through
each stage: an image branch that produces the features eventually decoded
into pixels, and a memory branch that carries latent-derived features
along the depth of the generator. Within a block the branches exchange
information twice: the image branch first absorbs memory features through
a fusion module, refines the result with a conv stack, and then the
memory branch is updated from the freshly produced image features.

Fusion is pluggable. The gated feature-fusion module (FFM) is the default;
summation, concatenation, and a pass-through memory side reproduce the
ablation variants, and any callable producing a module with the same
(target, source) -> fused signature can fill the slot.
"""

import math
from enum import Enum

import torch
from torch import nn

from .substrate import ops

INV_SQRT2 = 1.0 / math.sqrt(2.0)


class FusionKind(str, Enum):
    """Selects how a branch absorbs features from the other branch."""

    FFM = "ffm"
    SUM = "sum"
    CONCAT = "concat"
    NONE = "none"


class FeatureFusionModule(nn.Module):
    """Gated blend of a target stream with a source stream.

    A sigmoid gate computed from the concatenated streams selects, per
    channel and position, how much of the source survives; the gated
    source and the target are then projected and averaged with a 1/sqrt(2)
    factor so the blend preserves variance.
    """

    def __init__(self, target_ch: int, source_ch: int, out_ch: int,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.gate_conv = ops.make_conv(target_ch + source_ch, source_ch, 1, generator)
        self.target_conv = ops.make_conv(target_ch, out_ch, 1, generator)
        self.refined_conv = ops.make_conv(source_ch, out_ch, 1, generator)

    def gate(self, target, source):
        return torch.sigmoid(self.gate_conv(ops.concat_channels(target, source)))

    def forward(self, target, source):
        gate = self.gate(target, source)
        refined = source * gate
        return (self.target_conv(target) + self.refined_conv(refined)) * INV_SQRT2


class SumFusion(nn.Module):
    """Plain addition; 1x1 projections appear only on channel mismatch."""

    def __init__(self, target_ch: int, source_ch: int, out_ch: int,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.joint_proj = None
        self.target_proj = None
        self.source_proj = None
        if target_ch == source_ch:
            if target_ch != out_ch:
                self.joint_proj = ops.make_conv(target_ch, out_ch, 1, generator)
        else:
            if target_ch != out_ch:
                self.target_proj = ops.make_conv(target_ch, out_ch, 1, generator)
            if source_ch != out_ch:
                self.source_proj = ops.make_conv(source_ch, out_ch, 1, generator)

    def forward(self, target, source):
        if self.joint_proj is not None:
            return self.joint_proj(target + source)
        if self.target_proj is not None:
            target = self.target_proj(target)
        if self.source_proj is not None:
            source = self.source_proj(source)
        return target + source


class ConcatFusion(nn.Module):
    """Channel concatenation followed by a 1x1 conv back to out_ch."""

    def __init__(self, target_ch: int, source_ch: int, out_ch: int,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.proj = ops.make_conv(target_ch + source_ch, out_ch, 1, generator)

    def forward(self, target, source):
        return self.proj(ops.concat_channels(target, source))


def _build_fusion(kind, target_ch, source_ch, out_ch, generator):
    if callable(kind) and not isinstance(kind, FusionKind):
        return kind(target_ch, source_ch, out_ch, generator)
    if kind == FusionKind.FFM:
        return FeatureFusionModule(target_ch, source_ch, out_ch, generator)
    if kind == FusionKind.SUM:
        return SumFusion(target_ch, source_ch, out_ch, generator)
    if kind == FusionKind.CONCAT:
        return ConcatFusion(target_ch, source_ch, out_ch, generator)
    raise ValueError(f"unsupported fusion kind: {kind!r}")


class FeatureCyclingBlock(nn.Module):
    """Two-branch generator block with alternating feature exchange.

    forward(image_feat, memory_feat) expects equal [B, C_in, H, W] shapes
    and returns two tensors of shape [B, C_out, H', W'] where H' = 2H when
    the block upsamples. Fusion slots take a FusionKind or a factory
    callable (target_ch, source_ch, out_ch, generator) -> nn.Module; the
    pass-through NONE kind is legal only on the memory side.

    With concat fusion the image side feeds the raw concatenation straight
    into the conv body (whose first conv then takes 2*C_in channels) and
    the residual shortcut becomes a 1x1 conv from the concatenation.
    """

    def __init__(self, in_ch: int, out_ch: int,
                 image_fusion=FusionKind.FFM, memory_fusion=FusionKind.FFM,
                 upsample: bool = True, generator: torch.Generator | None = None):
        super().__init__()
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.upsample = upsample
        self.image_kind = image_fusion
        self.memory_kind = memory_fusion

        if image_fusion == FusionKind.NONE:
            raise ValueError("pass-through fusion is only legal on the memory side")

        if image_fusion == FusionKind.CONCAT:
            self.fuse_in = None
            body_ch = 2 * in_ch
            self.image_shortcut = ops.make_conv(body_ch, out_ch, 1, generator)
        else:
            self.fuse_in = _build_fusion(image_fusion, in_ch, in_ch, out_ch, generator)
            body_ch = out_ch
            self.image_shortcut = None

        self.bn1 = ops.BatchNorm2d(body_ch)
        self.conv1 = ops.make_conv(body_ch, out_ch, 3, generator)
        self.bn2 = ops.BatchNorm2d(out_ch)
        self.conv2 = ops.make_conv(out_ch, out_ch, 3, generator)

        if memory_fusion == FusionKind.NONE:
            self.fuse_out = None
            self.memory_proj = None if in_ch == out_ch else ops.make_conv(in_ch, out_ch, 1, generator)
        else:
            self.fuse_out = _build_fusion(memory_fusion, in_ch, out_ch, out_ch, generator)
            self.memory_proj = None

    def body(self, h):
        h = self.conv1(torch.relu(self.bn1(h)))
        return self.conv2(torch.relu(self.bn2(h)))

    def forward(self, image_feat, memory_feat):
        if image_feat.shape != memory_feat.shape:
            raise ValueError(
                f"branch shape mismatch: image {tuple(image_feat.shape)} vs "
                f"memory {tuple(memory_feat.shape)}"
            )
        if image_feat.shape[1] != self.in_ch:
            raise ValueError(f"expected {self.in_ch} input channels, got {image_feat.shape[1]}")
        if self.upsample:
            image_feat = ops.upsample_nearest2x(image_feat)
            memory_feat = ops.upsample_nearest2x(memory_feat)

        if self.fuse_in is None:
            h = ops.concat_channels(image_feat, memory_feat)
            image_out = self.image_shortcut(h) + self.body(h)
        else:
            h = self.fuse_in(image_feat, memory_feat)
            image_out = h + self.body(h)

        if self.fuse_out is not None:
            memory_out = self.fuse_out(memory_feat, image_out)
        elif self.memory_proj is not None:
            memory_out = self.memory_proj(memory_feat)
        else:
            memory_out = memory_feat
        return image_out, memory_out


class ResidualBlock(nn.Module):
    """Pre-activation residual generator block (the single-branch baseline)."""

    def __init__(self, in_ch: int, out_ch: int, upsample: bool = True,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.upsample = upsample
        self.bn1 = ops.BatchNorm2d(in_ch)
        self.conv1 = ops.make_conv(in_ch, out_ch, 3, generator)
        self.bn2 = ops.BatchNorm2d(out_ch)
        self.conv2 = ops.make_conv(out_ch, out_ch, 3, generator)
        self.shortcut_conv = None
        if in_ch != out_ch:
            self.shortcut_conv = ops.make_conv(in_ch, out_ch, 1, generator)

    def forward(self, x):
        h = torch.relu(self.bn1(x))
        if self.upsample:
            h = ops.upsample_nearest2x(h)
        h = self.conv1(h)
        h = self.conv2(torch.relu(self.bn2(h)))
        sc = ops.upsample_nearest2x(x) if self.upsample else x
        if self.shortcut_conv is not None:
            sc = self.shortcut_conv(sc)
        return h + sc


def param_count(module: nn.Module) -> int:
    """Number of trainable scalars in a block or network."""
    return sum(p.numel() for p in module.parameters() if p.requires_grad)
