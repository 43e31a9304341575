"""Generator and discriminator assemblies for 32x32 synthesis.

The generator follows the classic SN-GAN layout: a dense stem lifts the
latent to a 4x4 map, three upsampling blocks grow it to 32x32, and a
BN-ReLU-conv-tanh head emits RGB. The block kind is selectable; the
two-branch kinds add a trainable constant input for the image branch and
thread a memory feature alongside. The discriminator is the matching
spectrally normalized residual stack ending in a global sum pool.
"""

from collections import OrderedDict
from dataclasses import dataclass, fields, replace

import torch
from torch import nn

from .blocks import FeatureCyclingBlock, FusionKind, ResidualBlock
from .substrate import ops
from .substrate.spectral import SNConv2d, SNLinear

BLOCK_KINDS = ("resblock", "fcb", "fcb_s", "fcb_c", "fcb_dagger")

# (image-side, memory-side) fusion for each two-branch kind.
FUSION_MAP = {
    "fcb": (FusionKind.FFM, FusionKind.FFM),
    "fcb_s": (FusionKind.SUM, FusionKind.SUM),
    "fcb_c": (FusionKind.CONCAT, FusionKind.CONCAT),
    "fcb_dagger": (FusionKind.FFM, FusionKind.NONE),
}

_G_INIT_OFFSET = 0
_D_INIT_OFFSET = 1


@dataclass(frozen=True)
class NetworkSpec:
    """Declarative description of one generator/discriminator pair."""

    block_kind: str = "fcb"
    g_channels: int = 256
    d_channels: int = 128
    latent_dim: int = 128
    depth: int = 3
    base_size: int = 4
    img_channels: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.block_kind not in BLOCK_KINDS:
            raise ValueError(f"unknown block kind {self.block_kind!r}; expected one of {BLOCK_KINDS}")
        for name in ("g_channels", "d_channels", "latent_dim", "depth", "base_size", "img_channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def image_size(self) -> int:
        return self.base_size * 2 ** self.depth

    def scaled(self, k: int) -> "NetworkSpec":
        """Divide every channel width by k (for cheap desk-scale configs)."""
        if self.g_channels % k or self.d_channels % k:
            raise ValueError(f"channel widths not divisible by {k}")
        return replace(self, g_channels=self.g_channels // k, d_channels=self.d_channels // k)

    def to_dict(self) -> dict:
        return {f.name: str(getattr(self, f.name)) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        kwargs = {}
        for f in fields(cls):
            if f.name in d:
                raw = d[f.name]
                kwargs[f.name] = raw if f.type is str else int(raw)
        return cls(**kwargs)


class Generator(nn.Module):
    """Latent -> image network; block kind comes from the spec.

    For the two-branch kinds the memory branch starts from the projected
    latent and the image branch from a trainable constant map shared over
    the batch; the final memory features are discarded. `fusions` may
    supply a custom (image, memory) fusion pair, which is the plug-in
    point for externally defined fusion modules.
    """

    def __init__(self, spec: NetworkSpec, fusions=None):
        super().__init__()
        self.spec = spec
        gen = torch.Generator().manual_seed(spec.seed + _G_INIT_OFFSET)
        ch = spec.g_channels
        self.stem = ops.make_dense(spec.latent_dim, spec.base_size ** 2 * ch, gen)
        self.two_branch = spec.block_kind != "resblock"
        if self.two_branch:
            self.image_constant = nn.Parameter(
                torch.randn(1, ch, spec.base_size, spec.base_size, generator=gen))
            image_fusion, memory_fusion = fusions or FUSION_MAP[spec.block_kind]
            self.blocks = nn.ModuleList(
                FeatureCyclingBlock(ch, ch, image_fusion, memory_fusion,
                                    upsample=True, generator=gen)
                for _ in range(spec.depth))
        else:
            if fusions is not None:
                raise ValueError("fusions only apply to two-branch block kinds")
            self.image_constant = None
            self.blocks = nn.ModuleList(
                ResidualBlock(ch, ch, upsample=True, generator=gen)
                for _ in range(spec.depth))
        self.head_bn = ops.BatchNorm2d(ch)
        self.head_conv = ops.make_conv(ch, spec.img_channels, 3, gen)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        if z.dim() != 2 or z.shape[1] != self.spec.latent_dim:
            raise ValueError(
                f"latent must be [B, {self.spec.latent_dim}], got {tuple(z.shape)}")
        ops.require_finite(z, "latent")
        batch = z.shape[0]
        base = self.spec.base_size
        memory = self.stem(z).reshape(batch, self.spec.g_channels, base, base)
        if self.two_branch:
            image = self.image_constant.expand(batch, -1, -1, -1)
            for block in self.blocks:
                image, memory = block(image, memory)
            h = image
        else:
            h = memory
            for block in self.blocks:
                h = block(h)
        return torch.tanh(self.head_conv(torch.relu(self.head_bn(h))))

    def has_uninitialized_stats(self) -> bool:
        return any(isinstance(m, ops.BatchNorm2d) and not m.stats_initialized
                   for m in self.modules())


class DInputBlock(nn.Module):
    """First discriminator block: consumes raw RGB, downsamples by 2."""

    def __init__(self, in_ch: int, out_ch: int, generator=None):
        super().__init__()
        self.conv1 = SNConv2d(in_ch, out_ch, 3, generator=generator)
        self.conv2 = SNConv2d(out_ch, out_ch, 3, generator=generator)
        self.shortcut_conv = SNConv2d(in_ch, out_ch, 1, generator=generator)

    def forward(self, x):
        h = ops.avgpool2x(self.conv2(torch.relu(self.conv1(x))))
        return h + self.shortcut_conv(ops.avgpool2x(x))


class DBlock(nn.Module):
    """Pre-activation discriminator residual block, optional downsample."""

    def __init__(self, in_ch: int, out_ch: int, down: bool, generator=None):
        super().__init__()
        self.down = down
        self.conv1 = SNConv2d(in_ch, out_ch, 3, generator=generator)
        self.conv2 = SNConv2d(out_ch, out_ch, 3, generator=generator)
        self.shortcut_conv = None
        if in_ch != out_ch or down:
            self.shortcut_conv = SNConv2d(in_ch, out_ch, 1, generator=generator)

    def forward(self, x):
        h = self.conv2(torch.relu(self.conv1(torch.relu(x))))
        if self.down:
            h = ops.avgpool2x(h)
        sc = self.shortcut_conv(x) if self.shortcut_conv is not None else x
        if self.down:
            sc = ops.avgpool2x(sc)
        return h + sc


class Discriminator(nn.Module):
    """Residual critic with spectral normalization on every weight."""

    def __init__(self, spec: NetworkSpec):
        super().__init__()
        self.spec = spec
        gen = torch.Generator().manual_seed(spec.seed + _D_INIT_OFFSET)
        ch = spec.d_channels
        self.blocks = nn.ModuleList([
            DInputBlock(spec.img_channels, ch, gen),
            DBlock(ch, ch, down=True, generator=gen),
            DBlock(ch, ch, down=False, generator=gen),
            DBlock(ch, ch, down=False, generator=gen),
        ])
        self.head = SNLinear(ch, 1, generator=gen)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        size = self.spec.image_size
        if x.dim() != 4 or x.shape[1:] != (self.spec.img_channels, size, size):
            raise ValueError(
                f"discriminator expects [B, {self.spec.img_channels}, {size}, {size}], "
                f"got {tuple(x.shape)}")
        ops.require_finite(x, "discriminator input")
        h = x
        for block in self.blocks:
            h = block(h)
        pooled = ops.global_sum_pool(torch.relu(h))
        return self.head(pooled).squeeze(1)


def build_networks(spec: NetworkSpec, fusions=None):
    return Generator(spec, fusions=fusions), Discriminator(spec)


def count_parameters(net: nn.Module) -> "OrderedDict[str, int]":
    """Per-block trainable parameter counts plus a 'total' entry.

    Parameters are grouped by their top-level attribute, with block lists
    split per block so the table mirrors the network layout.
    """
    groups: "OrderedDict[str, int]" = OrderedDict()
    for name, param in net.named_parameters():
        if not param.requires_grad:
            continue
        parts = name.split(".")
        key = ".".join(parts[:2]) if parts[0] == "blocks" and len(parts) > 2 else parts[0]
        groups[key] = groups.get(key, 0) + param.numel()
    groups["total"] = sum(groups.values())
    return groups
