"""Masked reconstruction, perceptual and least-squares adversarial losses."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Protocol

import torch
import torch.nn as nn
import torch.nn.functional as F

from .assets import resolve_asset
from .errors import ConfigError, DimensionError, EmptyMaskWarning, LoadError, ParameterError


@dataclass
class LossWeights:
    lambda_l1: float = 1.0
    lambda_vgg: float = 1.0
    lambda_gan: float = 0.01

    def __post_init__(self):
        if min(self.lambda_l1, self.lambda_vgg, self.lambda_gan) < 0:
            raise ConfigError("loss weights must be nonnegative")


def _b(t):
    return t.unsqueeze(0) if t.dim() == 3 else t


def masked_l1(a: torch.Tensor, b: torch.Tensor, m: torch.Tensor | None = None) -> torch.Tensor:
    """Mean absolute difference over the elements where ``m`` is set.

    ``m`` has a single channel and is broadcast over the channels of ``a``.
    An empty mask yields 0 and an :class:`EmptyMaskWarning`.
    """
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    a4, b4 = _b(a), _b(b)
    if m is None:
        return (a4 - b4).abs().mean()
    m4 = _b(m).to(a4.dtype)
    if m4.shape[1] != 1 or m4.shape[-2:] != a4.shape[-2:]:
        raise DimensionError(f"mask {tuple(m.shape)} not broadcastable to {tuple(a.shape)}")
    denom = m4.expand(a4.shape[0], 1, *a4.shape[2:]).sum() * a4.shape[1]
    if denom == 0:
        warnings.warn("masked_l1 evaluated over an empty mask", EmptyMaskWarning, stacklevel=2)
        return (a4 - b4).sum() * 0.0
    return ((a4 - b4).abs() * m4).sum() / denom


def loss_gcm(y_gcm, y_warped, m) -> torch.Tensor:
    return masked_l1(y_gcm, y_warped, m)


def downsample_mask(m: torch.Tensor, scale: int) -> torch.Tensor:
    """Min-pool a binary mask: a coarse cell is valid only if its whole footprint is."""
    if scale == 1:
        return m
    H, W = m.shape[-2:]
    if H % scale or W % scale:
        raise DimensionError(f"mask size {H}x{W} not divisible by {scale}")
    squeeze = m.dim() == 3
    out = -F.max_pool2d(-_b(m), scale)
    return out[0] if squeeze else out


class PerceptualExtractor(Protocol):
    scales: list[int]

    def features(self, img: torch.Tensor) -> list[torch.Tensor]: ...


class RandomPyramidExtractor(nn.Module):
    """Frozen, seed-fixed pyramid of stride-2 3x3 convolutions (widths 16/32/64)."""

    def __init__(self, seed: int = 0, widths=(16, 32, 64)):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        cin = 3
        self.convs = nn.ModuleList()
        for w in widths:
            conv = nn.Conv2d(cin, w, 3, stride=2, padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * (2.0 / (cin * 9)) ** 0.5)
                conv.bias.zero_()
            self.convs.append(conv)
            cin = w
        self.scales = [2 ** (k + 1) for k in range(len(widths))]
        self.requires_grad_(False)
        self.eval()

    def features(self, img):
        h = _b(img)
        feats = []
        for conv in self.convs:
            h = F.relu(conv(h))
            feats.append(h)
        return feats


class VGGExtractor(nn.Module):
    """VGG-19 feature taps at relu1_2, relu2_2, relu3_4 and relu4_4.

    Weights come from a torchvision ``vgg19`` state dict on disk.
    """

    TAPS = {3: 1, 8: 2, 17: 4, 26: 8}

    def __init__(self, weights_path):
        super().__init__()
        path = resolve_asset(weights_path)
        if not path.is_file():
            raise LoadError(f"VGG-19 weights not found at {path}; download torchvision's vgg19 state dict "
                            "there or keep the default random-pyramid extractor")
        from torchvision.models import vgg19

        net = vgg19()
        try:
            net.load_state_dict(torch.load(path, map_location="cpu"))
        except Exception as exc:
            raise LoadError(f"incompatible VGG-19 weights at {path}: {exc}") from exc
        self.body = net.features[: max(self.TAPS) + 1]
        self.scales = list(self.TAPS.values())
        self.register_buffer("mean", torch.tensor([0.485, 0.456, 0.406])[None, :, None, None])
        self.register_buffer("std", torch.tensor([0.229, 0.224, 0.225])[None, :, None, None])
        self.requires_grad_(False)
        self.eval()

    def features(self, img):
        h = (_b(img) - self.mean) / self.std
        feats = []
        for i, layer in enumerate(self.body):
            h = layer(h)
            if i in self.TAPS:
                feats.append(h)
        return feats


def loss_isp(y_hat, y_warped, m, extractor: PerceptualExtractor | None, w: LossWeights = LossWeights()):
    """λ_l1·masked L1 + λ_vgg·mean over scales of masked L1 between feature maps."""
    loss = w.lambda_l1 * masked_l1(y_hat, y_warped, m)
    if w.lambda_vgg == 0:
        return loss
    if extractor is None:
        raise ConfigError("lambda_vgg > 0 requires a perceptual extractor")
    fa = extractor.features(y_hat)
    fb = extractor.features(y_warped)
    terms = []
    for s, a, b in zip(extractor.scales, fa, fb):
        ms = None if m is None else downsample_mask(m, s)
        if ms is not None and ms.shape[-2:] != a.shape[-2:]:
            raise DimensionError(f"feature map at scale {s} has size {tuple(a.shape[-2:])}")
        terms.append(masked_l1(a, b, ms))
    return loss + w.lambda_vgg * torch.stack(terms).mean()


def loss_gan_generator(d_out: torch.Tensor) -> torch.Tensor:
    return 0.5 * ((d_out - 1) ** 2).mean()


def loss_discriminator(d_real: torch.Tensor, d_fake: torch.Tensor) -> torch.Tensor:
    return 0.5 * ((d_real - 1) ** 2).mean() + 0.5 * (d_fake ** 2).mean()


def loss_total(components: dict, mode: str = "isp", w: LossWeights = LossWeights()):
    """L_GCM + L_ISP, plus λ_GAN·L_GAN in ``ispgan`` mode."""
    if mode not in ("isp", "ispgan"):
        raise ParameterError(f"unknown mode {mode!r}")
    needed = ["gcm", "isp"] + (["gan"] if mode == "ispgan" else [])
    missing = [k for k in needed if k not in components]
    if missing:
        raise ConfigError(f"mode {mode!r} needs loss components {missing}")
    total = components["gcm"] + components["isp"]
    if mode == "ispgan":
        total = total + w.lambda_gan * components["gan"]
    return total
