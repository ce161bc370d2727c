"""Global color mapping: a 1x1-conv network steered by a pooled guidance vector."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .backbone import he_init
from .errors import ConfigError, DimensionError

MODULATIONS = ("mul", "add", "affine")


@dataclass
class GCMConfig:
    spn: bool = True
    use_target_guidance: bool = True
    use_coords: bool = True
    modulation: str = "mul"
    hidden: int = 64
    guide_width: int = 32

    def __post_init__(self):
        if self.use_target_guidance and not self.spn:
            raise ConfigError("use_target_guidance requires spn")
        if self.modulation not in MODULATIONS:
            raise ConfigError(f"gcm.modulation must be one of {MODULATIONS}, got {self.modulation!r}")


class SPN(nn.ModuleList):
    """Stack of 1x1 convolutions; every output pixel depends only on its own input pixel.

    Guidance modulates the last hidden features just before the output projection.
    """

    def __init__(self, in_channels: int = 5, hidden: int = 64, modulation: str = "mul"):
        convs = [nn.Conv2d(in_channels, hidden, 1)] + [nn.Conv2d(hidden, hidden, 1) for _ in range(3)]
        super().__init__(convs + [nn.Conv2d(hidden, 3, 1)])
        self.hidden = hidden
        self.modulation = modulation
        assert all(conv.kernel_size == (1, 1) for conv in self)

    @property
    def in_channels(self) -> int:
        return self[0].in_channels

    def forward(self, x, guidance=None):
        h = x
        for i in range(len(self) - 1):
            h = F.relu(self[i](h))
        if guidance is not None:
            width = 2 * self.hidden if self.modulation == "affine" else self.hidden
            if guidance.shape[-1] != width:
                raise ConfigError(f"guidance width {guidance.shape[-1]} does not match SPN hidden width {self.hidden}")
            g = guidance[:, :, None, None]
            if self.modulation == "mul":
                h = h * g
            elif self.modulation == "add":
                h = h + g
            else:
                scale, shift = g.split(self.hidden, dim=1)
                h = h * scale + shift
        return self[-1](h)


class GuideNet(nn.ModuleList):
    """Strided 7x7 conv, two 3x3 convs, global average pool, 1x1 projection."""

    def __init__(self, in_channels: int = 8, width: int = 32, out_channels: int = 64):
        super().__init__([
            nn.Conv2d(in_channels, width, 7, stride=2, padding=1),
            nn.Conv2d(width, width, 3, padding=1),
            nn.Conv2d(width, width, 3, padding=1),
            nn.Conv2d(width, out_channels, 1),
        ])

    @property
    def in_channels(self) -> int:
        return self[0].in_channels

    def forward(self, x):
        c0, c1, c2, proj = self
        h = F.relu(c0(x))
        h = c2(F.relu(c1(h)))
        h = F.adaptive_avg_pool2d(h, 1)
        return proj(h)[:, :, 0, 0]


class GCM(nn.Module):
    """ỹ = C(x̂, y, τ): per-pixel color mapping of the demosaicked raw toward the target."""

    def __init__(self, config: GCMConfig | None = None):
        super().__init__()
        cfg = config or GCMConfig()
        if not cfg.spn:
            raise ConfigError("GCM needs an SPN; disable GCM at the training level instead")
        self.config = cfg
        coord_ch = 2 if cfg.use_coords else 0
        self.spn = SPN(3 + coord_ch, cfg.hidden, cfg.modulation)
        self.guide = None
        if cfg.use_target_guidance:
            out = 2 * cfg.hidden if cfg.modulation == "affine" else cfg.hidden
            self.guide = GuideNet(6 + coord_ch, cfg.guide_width, out)
        he_init(self)
        if cfg.use_coords:
            # start position-independent; random coordinate weights otherwise inject
            # a spatially varying color map that training has to undo first
            with torch.no_grad():
                self.spn[0].weight[:, 3:].zero_()

    def guidance(self, x_hat, y, tau=None):
        return guidenet_forward(x_hat, y, tau if self.config.use_coords else None, self.guide)

    def forward(self, x_hat, y=None, tau=None):
        squeeze = x_hat.dim() == 3
        x_hat = _batch(x_hat)
        if self.config.use_coords:
            if tau is None:
                raise ConfigError("coordinate map required when use_coords is set")
            tau = _batch(tau).to(x_hat.dtype).expand(x_hat.shape[0], -1, -1, -1)
        g = None
        if self.guide is not None:
            if y is None:
                raise ConfigError("target image required for guidance")
            g = self.guidance(x_hat, _batch(y), tau)
        out = spn_forward(x_hat, tau if self.config.use_coords else None, g, self.spn)
        return out[0] if squeeze else out


def _batch(t):
    return t.unsqueeze(0) if t.dim() == 3 else t


def guidenet_forward(x_hat, y, tau, guide: GuideNet) -> torch.Tensor:
    """Global (B, K) guidance vector from the concatenation (x̂, y[, τ])."""
    x_hat, y = _batch(x_hat), _batch(y)
    parts = [x_hat, y]
    if tau is not None:
        parts.append(_batch(tau).to(x_hat.dtype).expand(x_hat.shape[0], -1, -1, -1))
    if any(p.shape[-2:] != x_hat.shape[-2:] for p in parts):
        raise DimensionError("GuideNet inputs must share spatial size")
    inp = torch.cat(parts, 1)
    if inp.shape[1] != guide.in_channels:
        raise DimensionError(f"GuideNet expects {guide.in_channels} channels, got {inp.shape[1]}")
    return guide(inp)


def spn_forward(x_hat, tau, g, spn: SPN) -> torch.Tensor:
    x_hat = _batch(x_hat)
    inp = x_hat if tau is None else torch.cat([x_hat, _batch(tau).to(x_hat.dtype).expand(x_hat.shape[0], -1, -1, -1)], 1)
    if inp.shape[1] != spn.in_channels:
        raise DimensionError(f"SPN expects {spn.in_channels} channels, got {inp.shape[1]}")
    return spn(inp, g)


def gcm_forward(x_hat, y, tau, model: GCM) -> torch.Tensor:
    return model(x_hat, y, tau)
