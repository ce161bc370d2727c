"""Wavelet U-Net mapping network, residual channel attention, PatchGAN discriminator."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, DimensionError


def dwt_haar(x: torch.Tensor) -> torch.Tensor:
    """Orthonormal 2-D Haar transform, (B, C, H, W) -> (B, 4C, H/2, W/2).

    For a 2x2 block (a, b; c, d) the bands are LL=(a+b+c+d)/2,
    HL=(a-b+c-d)/2, LH=(a+b-c-d)/2, HH=(a-b-c+d)/2, grouped per input
    channel as [LL, HL, LH, HH].
    """
    squeeze = x.dim() == 3
    if squeeze:
        x = x.unsqueeze(0)
    B, C, H, W = x.shape
    if H % 2 or W % 2:
        raise DimensionError(f"DWT needs even spatial dims, got {H}x{W}")
    a = x[:, :, 0::2, 0::2]
    b = x[:, :, 0::2, 1::2]
    c = x[:, :, 1::2, 0::2]
    d = x[:, :, 1::2, 1::2]
    ll = (a + b + c + d) / 2
    hl = (a - b + c - d) / 2
    lh = (a + b - c - d) / 2
    hh = (a - b - c + d) / 2
    out = torch.stack([ll, hl, lh, hh], dim=2).reshape(B, 4 * C, H // 2, W // 2)
    return out[0] if squeeze else out


def iwt_haar(x: torch.Tensor) -> torch.Tensor:
    """Exact inverse of :func:`dwt_haar`."""
    squeeze = x.dim() == 3
    if squeeze:
        x = x.unsqueeze(0)
    B, C4, H, W = x.shape
    if C4 % 4:
        raise DimensionError(f"IWT needs a channel count divisible by 4, got {C4}")
    bands = x.reshape(B, C4 // 4, 4, H, W)
    ll, hl, lh, hh = bands.unbind(2)
    out = x.new_empty(B, C4 // 4, 2 * H, 2 * W)
    out[:, :, 0::2, 0::2] = (ll + hl + lh + hh) / 2
    out[:, :, 0::2, 1::2] = (ll - hl + lh - hh) / 2
    out[:, :, 1::2, 0::2] = (ll + hl - lh - hh) / 2
    out[:, :, 1::2, 1::2] = (ll - hl - lh + hh) / 2
    return out[0] if squeeze else out


class DWT(nn.Module):
    def forward(self, x):
        return dwt_haar(x)


class IWT(nn.Module):
    def forward(self, x):
        return iwt_haar(x)


RESIDUAL_INIT_SCALE = 0.1


def conv3x3(cin: int, cout: int) -> nn.Conv2d:
    return nn.Conv2d(cin, cout, 3, padding=1)


def he_init(module: nn.Module, nonlinearity: str = "relu") -> None:
    """Fan-in normal init for every conv in ``module``, zero biases."""
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_normal_(m.weight, mode="fan_in", nonlinearity=nonlinearity)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


class ChannelAttention(nn.Module):
    def __init__(self, channels: int, reduction: int = 16):
        super().__init__()
        hidden = max(channels // reduction, 1)
        self.reduce = nn.Conv2d(channels, hidden, 1)
        self.expand = nn.Conv2d(hidden, channels, 1)

    def forward(self, x):
        w = F.adaptive_avg_pool2d(x, 1)
        w = torch.sigmoid(self.expand(F.relu(self.reduce(w))))
        return x * w


class RCAB(nn.Module):
    """conv-ReLU-conv, channel attention, identity skip."""

    def __init__(self, channels: int, reduction: int = 16):
        super().__init__()
        self.conv1 = conv3x3(channels, channels)
        self.conv2 = conv3x3(channels, channels)
        self.ca = ChannelAttention(channels, reduction)

    def forward(self, x):
        if x.shape[1] != self.conv1.in_channels:
            raise DimensionError(f"RCAB expects {self.conv1.in_channels} channels, got {x.shape[1]}")
        return x + self.ca(self.conv2(F.relu(self.conv1(x))))


class ResidualGroup(nn.Module):
    def __init__(self, channels: int, n_rcab: int = 4, reduction: int = 16):
        super().__init__()
        if n_rcab < 1:
            raise ConfigError("a residual group needs at least one RCAB")
        for j in range(n_rcab):
            self.add_module(f"rcab{j}", RCAB(channels, reduction))
        self.n_rcab = n_rcab
        self.conv = conv3x3(channels, channels)

    def forward(self, x):
        h = x
        for j in range(self.n_rcab):
            h = getattr(self, f"rcab{j}")(h)
        return x + self.conv(h)


def rcab_forward(f: torch.Tensor, block: RCAB) -> torch.Tensor:
    return block(f)


def residual_group_forward(f: torch.Tensor, group: ResidualGroup) -> torch.Tensor:
    return group(f)


@dataclass
class LiteISPConfig:
    n_rcab_per_group: int = 4
    base_width: int = 64
    in_channels: int = 4
    out_channels: int = 3
    reduction: int = 16
    skips: str = "add"  # add | none

    def __post_init__(self):
        if self.n_rcab_per_group < 1:
            raise ConfigError("n_rcab_per_group must be >= 1")
        if self.skips not in ("add", "none"):
            raise ConfigError(f"liteisp.skips must be 'add' or 'none', got {self.skips!r}")
        if self.base_width % 2:
            raise ConfigError("base_width must be even")


class LiteISPNet(nn.Module):
    """Three-level Haar-wavelet U-Net on packed raw, 2x pixel-shuffle head.

    With ``base_width=64`` the channel plan is 64/64/128 in the encoder and a
    128-wide bottleneck; narrower widths scale every stage proportionally.
    """

    def __init__(self, config: LiteISPConfig | None = None):
        super().__init__()
        cfg = config or LiteISPConfig()
        self.config = cfg
        c1, c2 = cfg.base_width, 2 * cfg.base_width
        n, r = cfg.n_rcab_per_group, cfg.reduction

        self.enc1 = conv3x3(cfg.in_channels, c1)
        self.rg1 = ResidualGroup(c1, n, r)
        self.enc2 = conv3x3(4 * c1, c1)
        self.rg2 = ResidualGroup(c1, n, r)
        self.enc3 = conv3x3(4 * c1, c2)
        self.rg3 = ResidualGroup(c2, n, r)
        self.mid_in = conv3x3(4 * c2, c2)
        self.rg4 = ResidualGroup(c2, n, r)
        self.rg5 = ResidualGroup(c2, n, r)
        self.mid_out = conv3x3(c2, 4 * c2)
        self.rg6 = ResidualGroup(c2, n, r)
        self.dec3 = conv3x3(c2, 4 * c1)
        self.rg7 = ResidualGroup(c1, n, r)
        self.dec2 = conv3x3(c1, 4 * c1)
        self.rg8 = ResidualGroup(c1, n, r)
        self.dec1 = conv3x3(c1, c1)
        self.tail_up = conv3x3(c1, 4 * c1)
        self.tail_out = conv3x3(c1, cfg.out_channels)
        # most convs here feed no ReLU, so use unit gain; residual branches start small
        he_init(self, "linear")
        with torch.no_grad():
            for m in self.modules():
                if isinstance(m, RCAB):
                    he_init(m.conv1)
                    he_init(m.ca.reduce)
                    m.conv2.weight.mul_(RESIDUAL_INIT_SCALE)
                elif isinstance(m, ResidualGroup):
                    m.conv.weight.mul_(RESIDUAL_INIT_SCALE)

    def forward(self, x):
        squeeze = x.dim() == 3
        if squeeze:
            x = x.unsqueeze(0)
        if x.shape[1] != self.config.in_channels:
            raise DimensionError(f"expected {self.config.in_channels} input channels, got {x.shape[1]}")
        if x.shape[-2] % 8 or x.shape[-1] % 8:
            raise DimensionError(f"input spatial dims must be divisible by 8, got {tuple(x.shape[-2:])}")
        skip = self.config.skips == "add"

        s1 = self.rg1(self.enc1(x))
        s2 = self.rg2(self.enc2(dwt_haar(s1)))
        s3 = self.rg3(self.enc3(dwt_haar(s2)))
        h = self.mid_out(self.rg5(self.rg4(self.mid_in(dwt_haar(s3)))))

        h = iwt_haar(h)
        if skip:
            h = h + s3
        h = self.dec3(self.rg6(h))
        h = iwt_haar(h)
        if skip:
            h = h + s2
        h = self.dec2(self.rg7(h))
        h = iwt_haar(h)
        if skip:
            h = h + s1
        h = self.dec1(self.rg8(h))
        out = self.tail_out(F.pixel_shuffle(self.tail_up(h), 2))
        return out[0] if squeeze else out


def liteispnet_forward(x_packed: torch.Tensor, net: LiteISPNet) -> torch.Tensor:
    return net(x_packed)


class PatchDiscriminator(nn.Module):
    """4x4-kernel PatchGAN: three stride-2 then two stride-1 convolutions."""

    def __init__(self, in_channels: int = 3, width: int = 64, slope: float = 0.2):
        super().__init__()
        w = width
        self.slope = slope
        self.layer1 = nn.Conv2d(in_channels, w, 4, 2, 1)
        self.layer2 = nn.Conv2d(w, 2 * w, 4, 2, 1)
        self.bn2 = nn.BatchNorm2d(2 * w)
        self.layer3 = nn.Conv2d(2 * w, 4 * w, 4, 2, 1)
        self.bn3 = nn.BatchNorm2d(4 * w)
        self.layer4 = nn.Conv2d(4 * w, 8 * w, 4, 1, 1)
        self.bn4 = nn.BatchNorm2d(8 * w)
        self.layer5 = nn.Conv2d(8 * w, 1, 4, 1, 1)
        he_init(self)

    @staticmethod
    def output_size(n: int) -> int:
        for stride in (2, 2, 2, 1, 1):
            n = (n + 2 - 4) // stride + 1
        return n

    def forward(self, x):
        squeeze = x.dim() == 3
        if squeeze:
            x = x.unsqueeze(0)
        if min(x.shape[-2:]) < 20:
            raise DimensionError(f"discriminator input {tuple(x.shape[-2:])} too small (need >= 20)")
        act = lambda t: F.leaky_relu(t, self.slope)  # noqa: E731
        h = act(self.layer1(x))
        h = act(self.bn2(self.layer2(h)))
        h = act(self.bn3(self.layer3(h)))
        h = act(self.bn4(self.layer4(h)))
        out = self.layer5(h)
        return out[0] if squeeze else out


def discriminator_forward(img: torch.Tensor, disc: PatchDiscriminator) -> torch.Tensor:
    return disc(img)


def param_manifest(module: nn.Module | None, prefix: str = "") -> list[tuple[str, tuple[int, ...]]]:
    """(name, shape) for every learnable tensor, names prefixed with ``prefix.``."""
    if module is None:
        return []
    pre = f"{prefix}." if prefix else ""
    return [(pre + name, tuple(p.shape)) for name, p in module.named_parameters()]


def param_count(module_or_manifest) -> int:
    """Total number of learnable scalars."""
    if module_or_manifest is None:
        return 0
    if isinstance(module_or_manifest, nn.Module):
        manifest = param_manifest(module_or_manifest)
    else:
        manifest = module_or_manifest
    return sum(math.prod(shape) for _, shape in manifest)
