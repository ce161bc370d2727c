"""Flow estimation, bilinear warping, validity masks and target alignment.

Flow convention: a field ``flow`` of shape (2, H, W) holds horizontal (u) and
vertical (v) displacements in pixels, and ``warp(img, flow)(p)`` samples
``img`` at ``p + flow(p)``.  Estimators return the flow that warps their
``ref`` argument onto their ``src`` argument.
"""
from __future__ import annotations

import logging
from typing import Protocol, runtime_checkable

import torch
import torch.nn.functional as F

from .assets import CACHE_ENV, resolve_asset
from .errors import ConfigError, DimensionError, LoadError, ParameterError

log = logging.getLogger(__name__)

STRATEGIES = ("none", "with_output", "with_demosaicked", "with_gcm")
DEFAULT_EPS = 1e-3


def _batched(t: torch.Tensor) -> tuple[torch.Tensor, bool]:
    if t.dim() == 3:
        return t.unsqueeze(0), True
    if t.dim() == 4:
        return t, False
    raise DimensionError(f"expected a (C,H,W) or (B,C,H,W) tensor, got shape {tuple(t.shape)}")


def warp(img: torch.Tensor, flow: torch.Tensor, padding: str = "zeros") -> torch.Tensor:
    """Bilinearly sample ``img`` at ``p + flow(p)``.

    Samples falling outside the image contribute zero (``padding="zeros"``) or
    are clamped to the nearest edge pixel (``padding="border"``).  Integer
    flows reproduce exact index shifts, and a zero flow is the identity.
    Differentiable with respect to both ``img`` and ``flow``.
    """
    x, squeeze = _batched(img)
    fl, _ = _batched(flow)
    B, C, H, W = x.shape
    if fl.shape[1] != 2 or fl.shape[2:] != (H, W):
        raise DimensionError(f"flow {tuple(flow.shape)} does not match image {tuple(img.shape)}")
    if fl.shape[0] != B:
        if fl.shape[0] != 1:
            raise DimensionError("flow batch size does not match image batch size")
        fl = fl.expand(B, -1, -1, -1)
    fl = fl.to(x.dtype)

    gy, gx = torch.meshgrid(
        torch.arange(H, dtype=x.dtype, device=x.device),
        torch.arange(W, dtype=x.dtype, device=x.device),
        indexing="ij",
    )
    sx = gx + fl[:, 0]
    sy = gy + fl[:, 1]
    if padding == "border":
        sx = sx.clamp(0, W - 1)
        sy = sy.clamp(0, H - 1)
    elif padding != "zeros":
        raise ParameterError(f"unknown padding mode {padding!r}")

    x0 = torch.floor(sx)
    y0 = torch.floor(sy)
    wx = sx - x0
    wy = sy - y0
    x0 = x0.long()
    y0 = y0.long()
    flat = x.reshape(B, C, H * W)

    out = torch.zeros_like(x)
    for dy, dx, w in (
        (0, 0, (1 - wy) * (1 - wx)),
        (0, 1, (1 - wy) * wx),
        (1, 0, wy * (1 - wx)),
        (1, 1, wy * wx),
    ):
        xi = x0 + dx
        yi = y0 + dy
        inb = (xi >= 0) & (xi < W) & (yi >= 0) & (yi < H)
        idx = (yi.clamp(0, H - 1) * W + xi.clamp(0, W - 1)).reshape(B, 1, H * W).expand(B, C, H * W)
        vals = torch.gather(flat, 2, idx).reshape(B, C, H, W)
        out = out + vals * (w * inb.to(x.dtype)).unsqueeze(1)
    return out[0] if squeeze else out


def valid_mask(flow: torch.Tensor, eps: float = DEFAULT_EPS) -> torch.Tensor:
    """Binary mask of pixels whose warp is fully formed from in-bounds samples."""
    fl, squeeze = _batched(flow)
    if not torch.isfinite(fl).all():
        raise ParameterError("flow contains non-finite values")
    ones = torch.ones(fl.shape[0], 1, *fl.shape[2:], dtype=fl.dtype, device=fl.device)
    m = (warp(ones, fl) >= 1 - eps).to(fl.dtype)
    return m[0] if squeeze else m


def constant_flow(u: float, v: float, H: int, W: int, dtype=torch.float32) -> torch.Tensor:
    flow = torch.empty(2, H, W, dtype=dtype)
    flow[0] = u
    flow[1] = v
    return flow


def upsample_flow(flow: torch.Tensor, scale: int) -> torch.Tensor:
    """Bilinearly resize a flow field by ``scale`` and rescale its vectors to match."""
    if int(scale) != scale or scale < 1:
        raise ParameterError(f"scale must be a positive integer, got {scale}")
    fl, squeeze = _batched(flow)
    if scale == 1:
        out = fl.clone()
    else:
        out = F.interpolate(fl, scale_factor=int(scale), mode="bilinear", align_corners=False) * scale
    return out[0] if squeeze else out


def _candidates(radius: int) -> list[tuple[int, int]]:
    # tie-break order: smallest L1 norm, then lexicographic (u, v)
    cands = [(u, v) for u in range(-radius, radius + 1) for v in range(-radius, radius + 1)]
    return sorted(cands, key=lambda c: (abs(c[0]) + abs(c[1]), c[0], c[1]))


def _shift_cost(src: torch.Tensor, ref: torch.Tensor, u: int, v: int):
    """Per-pixel |warp(ref, (u,v)) - src| summed over channels, and its validity."""
    B, C, H, W = src.shape
    diff = torch.zeros(B, H, W, dtype=src.dtype)
    valid = torch.zeros(H, W, dtype=src.dtype)
    i0, i1 = max(0, -v), min(H, H - v)
    j0, j1 = max(0, -u), min(W, W - u)
    if i1 <= i0 or j1 <= j0:
        return diff, valid
    d = (src[:, :, i0:i1, j0:j1] - ref[:, :, i0 + v:i1 + v, j0 + u:j1 + u]).abs().sum(1)
    diff[:, i0:i1, j0:j1] = d
    valid[i0:i1, j0:j1] = 1
    return diff, valid


def _check_pair(src: torch.Tensor, ref: torch.Tensor):
    s, squeeze = _batched(src)
    r, _ = _batched(ref)
    if s.shape != r.shape:
        raise DimensionError(f"src {tuple(src.shape)} and ref {tuple(ref.shape)} differ in shape")
    return s.detach(), r.detach(), squeeze


@torch.no_grad()
def brute_force_translation(src: torch.Tensor, ref: torch.Tensor, radius: int) -> torch.Tensor:
    """Exhaustive search for the constant integer flow aligning ``ref`` onto ``src``.

    Minimizes the mean L1 over the overlap of ``warp(ref, (u, v))`` and ``src``
    for all ``|u|, |v| <= radius``.
    """
    s, r, squeeze = _check_pair(src, ref)
    B, C, H, W = s.shape
    if radius < 0 or radius >= min(H, W):
        raise ParameterError(f"radius {radius} invalid for a {H}x{W} image")
    best = torch.full((B,), float("inf"), dtype=torch.float64)
    best_uv = torch.zeros(B, 2, dtype=s.dtype)
    for u, v in _candidates(radius):
        diff, valid = _shift_cost(s, r, u, v)
        cost = diff.sum((1, 2)).double() / (valid.sum().double() * C)
        better = cost < best
        best = torch.where(better, cost, best)
        best_uv[better] = torch.tensor([u, v], dtype=s.dtype)
    flow = best_uv[:, :, None, None].expand(B, 2, H, W).clone()
    return flow[0] if squeeze else flow


@torch.no_grad()
def block_match_flow(src: torch.Tensor, ref: torch.Tensor, block: int, radius: int) -> torch.Tensor:
    """Per-block integer L1 matching, bilinearly interpolated to a dense field."""
    s, r, squeeze = _check_pair(src, ref)
    B, C, H, W = s.shape
    if block < 4 or radius < 1:
        raise ParameterError("block must be >= 4 and radius >= 1")
    if block > min(H, W):
        raise ParameterError(f"block {block} exceeds image size {H}x{W}")
    nby, nbx = H // block, W // block
    Hc, Wc = nby * block, nbx * block
    best = torch.full((B, nby, nbx), float("inf"), dtype=torch.float64)
    best_uv = torch.zeros(B, 2, nby, nbx, dtype=s.dtype)
    for u, v in _candidates(radius):
        diff, valid = _shift_cost(s, r, u, v)
        num = F.avg_pool2d(diff[:, None, :Hc, :Wc], block)[:, 0].double()
        den = F.avg_pool2d(valid[None, None, :Hc, :Wc], block)[0, 0].double()
        cost = torch.where(den > 0, num / (den * C).clamp_min(1e-12), torch.full_like(num, float("inf")))
        better = cost < best
        best = torch.where(better, cost, best)
        best_uv[:, 0][better] = float(u)
        best_uv[:, 1][better] = float(v)
    flow = F.interpolate(best_uv, size=(Hc, Wc), mode="bilinear", align_corners=False)
    if (Hc, Wc) != (H, W):
        flow = F.pad(flow, (0, W - Wc, 0, H - Hc), mode="replicate")
    return flow[0] if squeeze else flow


@runtime_checkable
class FlowEstimator(Protocol):
    name: str
    deterministic: bool

    def estimate(self, src: torch.Tensor, ref: torch.Tensor) -> torch.Tensor: ...


class BruteForceTranslation:
    deterministic = True

    def __init__(self, radius: int = 8):
        self.radius = radius
        self.name = f"brute_translation(r={radius})"
        self.calls = 0

    def estimate(self, src, ref):
        self.calls += 1
        return brute_force_translation(src, ref, self.radius)


class BlockMatch:
    deterministic = True

    def __init__(self, block: int = 16, radius: int = 8):
        self.block = block
        self.radius = radius
        self.name = f"block_match(b={block},r={radius})"
        self.calls = 0

    def estimate(self, src, ref):
        self.calls += 1
        return block_match_flow(src, ref, self.block, self.radius)


class ExternalFlow:
    """Frozen TorchScript flow network called as ``module(src, ref) -> (B,2,H,W)``."""

    deterministic = False

    def __init__(self, module: torch.nn.Module, name: str = "external"):
        self.module = module.eval()
        for p in self.module.parameters():
            p.requires_grad_(False)
        self.name = name
        self.calls = 0

    @torch.no_grad()
    def estimate(self, src, ref):
        self.calls += 1
        s, r, squeeze = _check_pair(src, ref)
        flow = self.module(s.float(), r.float()).to(s.dtype)
        if flow.shape != (s.shape[0], 2, *s.shape[2:]):
            raise DimensionError(f"external estimator returned shape {tuple(flow.shape)}")
        return flow[0] if squeeze else flow


def external_flow_adapter(weights_path) -> ExternalFlow:
    """Load a pretrained TorchScript flow model from disk."""
    path = resolve_asset(weights_path)
    if not path.is_file():
        raise LoadError(
            f"flow weights not found at {path} (relative paths are also looked up under "
            f"${CACHE_ENV}); export a TorchScript module taking "
            "(src, ref) and returning a (B,2,H,W) flow, or set flow.estimator to "
            "'brute_translation' or 'block_match'"
        )
    try:
        module = torch.jit.load(str(path), map_location="cpu")
    except Exception as exc:  # torch raises a variety of types here
        raise LoadError(f"could not load TorchScript flow model from {path}: {exc}") from exc
    return ExternalFlow(module, name=f"external({path.name})")


def make_estimator(cfg: dict | None) -> FlowEstimator:
    """Build an estimator from a ``flow`` config section."""
    cfg = dict(cfg or {})
    kind = cfg.get("estimator", "brute_translation")
    if kind == "brute_translation":
        return BruteForceTranslation(int(cfg.get("radius", 8)))
    if kind == "block_match":
        return BlockMatch(int(cfg.get("block", 16)), int(cfg.get("radius", 8)))
    if kind == "external":
        try:
            return external_flow_adapter(cfg.get("weights_path", ""))
        except LoadError as exc:
            fallback = cfg.get("fallback")
            if not fallback:
                raise
            log.warning("%s; falling back to %s", exc, fallback)
            return make_estimator({**cfg, "estimator": fallback, "fallback": None})
    raise ConfigError(f"unknown flow estimator {kind!r}")


def _area_downsample(img: torch.Tensor, scale: int) -> torch.Tensor:
    return F.avg_pool2d(img, scale)


def align_target(
    strategy: str,
    y: torch.Tensor,
    estimator: FlowEstimator | None = None,
    *,
    demosaicked: torch.Tensor | None = None,
    gcm_out: torch.Tensor | None = None,
    output: torch.Tensor | None = None,
    eps: float = DEFAULT_EPS,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Warp the target ``y`` onto the reference picked by ``strategy``.

    Returns ``(y_warped, mask)``; both carry no gradient.  When ``y`` is an
    integer multiple larger than the reference, the flow is estimated against
    a downsampled target and upsampled before warping the full-size one.
    """
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown alignment strategy {strategy!r}; choose from {STRATEGIES}")
    yb, squeeze = _batched(y.detach())
    if strategy == "none":
        m = torch.ones(yb.shape[0], 1, *yb.shape[2:], dtype=yb.dtype)
        return (yb[0], m[0]) if squeeze else (yb, m)

    ref = {"with_output": output, "with_demosaicked": demosaicked, "with_gcm": gcm_out}[strategy]
    if ref is None:
        raise ConfigError(f"strategy {strategy!r} needs its reference image")
    if estimator is None:
        raise ConfigError("a flow estimator is required for alignment")
    rb, _ = _batched(ref.detach())
    rb = rb.clamp(0, 1).to(yb.dtype)

    scale = yb.shape[-1] // rb.shape[-1]
    if scale * rb.shape[-1] != yb.shape[-1] or scale * rb.shape[-2] != yb.shape[-2]:
        raise DimensionError(f"target {tuple(yb.shape)} is not an integer multiple of reference {tuple(rb.shape)}")
    y_small = yb if scale == 1 else _area_downsample(yb, scale)
    flow = estimator.estimate(rb, y_small).to(yb.dtype)
    if scale > 1:
        flow = upsample_flow(flow, scale)
    yw = warp(yb, flow)
    m = valid_mask(flow, eps)
    return (yw[0], m[0]) if squeeze else (yw, m)
