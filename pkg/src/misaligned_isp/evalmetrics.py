"""PSNR/SSIM and the three ground-truth alignment protocols."""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field

import torch
import torch.nn.functional as F

from .assets import resolve_asset
from .errors import ConfigError, DimensionError, ParameterError, UndefinedMetricError
from .flowalign import FlowEstimator, align_target

log = logging.getLogger(__name__)

PSNR_CAP = 100.0
PROTOCOLS = ("original", "align_gt_with_raw", "align_gt_with_result")


def _b(t):
    return t.unsqueeze(0) if t.dim() == 3 else t


def psnr(a: torch.Tensor, b: torch.Tensor, m: torch.Tensor | None = None) -> float:
    """PSNR in dB on [0,1] images, over the RGB elements selected by ``m``."""
    a4 = _b(a).double().clamp(0, 1)
    b4 = _b(b).double().clamp(0, 1)
    if a4.shape != b4.shape:
        raise DimensionError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    sq = (a4 - b4) ** 2
    if m is None:
        mse = sq.mean()
    else:
        m4 = _b(m).double().expand(a4.shape[0], 1, *a4.shape[2:])
        n = m4.sum() * a4.shape[1]
        if n == 0:
            raise UndefinedMetricError("PSNR over an empty mask")
        mse = (sq * m4).sum() / n
    if mse == 0:
        return PSNR_CAP
    return min(float(10 * torch.log10(1.0 / mse)), PSNR_CAP)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> torch.Tensor:
    x = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    g = torch.exp(-(x ** 2) / (2 * sigma ** 2))
    g = g / g.sum()
    return (g[:, None] * g[None, :])[None, None]


def ssim_map(a: torch.Tensor, b: torch.Tensor, window: int = 11) -> torch.Tensor:
    """Local SSIM over valid (unpadded) windows, per channel."""
    a4 = _b(a).double().clamp(0, 1)
    b4 = _b(b).double().clamp(0, 1)
    if a4.shape != b4.shape:
        raise DimensionError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    if min(a4.shape[-2:]) < window:
        raise DimensionError(f"SSIM needs images of at least {window}x{window}")
    B, C, H, W = a4.shape
    k = _gaussian_window(window).expand(C, 1, window, window)
    conv = lambda t: F.conv2d(t, k, groups=C)  # noqa: E731
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    mu_a, mu_b = conv(a4), conv(b4)
    var_a = conv(a4 * a4) - mu_a ** 2
    var_b = conv(b4 * b4) - mu_b ** 2
    cov = conv(a4 * b4) - mu_a * mu_b
    return ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))


def ssim(a: torch.Tensor, b: torch.Tensor, m: torch.Tensor | None = None, window: int = 11) -> float:
    """Mean SSIM (11x11 Gaussian window, sigma 1.5), channel-averaged.

    With a mask, only windows lying entirely inside the valid region count.
    """
    smap = ssim_map(a, b, window)
    if m is None:
        return float(smap.mean())
    mw = -F.max_pool2d(-_b(m).double(), window, stride=1)
    mw = mw.expand(smap.shape[0], smap.shape[1], *smap.shape[2:])
    n = mw.sum()
    if n == 0:
        raise UndefinedMetricError("SSIM over an empty mask")
    return float((smap * mw).sum() / n)


@dataclass
class EvalRecord:
    index: int
    psnr: float
    ssim: float
    valid_fraction: float
    lpips: float | None = None


@dataclass
class EvalReport:
    protocol: str
    records: list = field(default_factory=list)
    lpips_note: str | None = None

    @property
    def mean_psnr(self) -> float:
        return sum(r.psnr for r in self.records) / len(self.records)

    @property
    def mean_ssim(self) -> float:
        return sum(r.ssim for r in self.records) / len(self.records)

    @property
    def mean_valid_fraction(self) -> float:
        return sum(r.valid_fraction for r in self.records) / len(self.records)

    def summary(self) -> dict:
        s = {"summary": True, "protocol": self.protocol, "n": len(self.records),
             "psnr": self.mean_psnr, "ssim": self.mean_ssim, "valid_fraction": self.mean_valid_fraction}
        lp = [r.lpips for r in self.records if r.lpips is not None]
        if lp:
            s["lpips"] = sum(lp) / len(lp)
        elif self.lpips_note:
            s["lpips_omitted"] = self.lpips_note
        return s

    def to_jsonl(self) -> str:
        lines = []
        for r in self.records:
            d = {k: v for k, v in asdict(r).items() if v is not None}
            d["protocol"] = self.protocol
            lines.append(json.dumps(d))
        lines.append(json.dumps(self.summary()))
        return "\n".join(lines) + "\n"


def evaluate(
    results: torch.Tensor,
    targets: torch.Tensor,
    protocol: str = "original",
    estimator: FlowEstimator | None = None,
    gcm_outputs: torch.Tensor | None = None,
    lpips_fn=None,
    lpips_note: str | None = None,
    eps: float = 1e-3,
) -> EvalReport:
    """Score batched outputs against targets under one protocol.

    ``original`` compares directly.  ``align_gt_with_raw`` warps each target
    onto the GCM output of the trained model, ``align_gt_with_result`` onto the
    result itself; both then score only the valid-mask pixels.
    """
    if protocol not in PROTOCOLS:
        raise ParameterError(f"unknown protocol {protocol!r}; choose from {PROTOCOLS}")
    res = _b(results).detach().clamp(0, 1)
    tgt = _b(targets).detach()
    if protocol == "align_gt_with_raw":
        if gcm_outputs is None:
            raise ConfigError("align_gt_with_raw needs the GCM outputs of the trained model")
        gcm = _b(gcm_outputs).detach()
    report = EvalReport(protocol, lpips_note=lpips_note)
    for i in range(res.shape[0]):
        y, out = tgt[i], res[i]
        if protocol == "original":
            m = None
        else:
            ref = gcm[i] if protocol == "align_gt_with_raw" else out
            y, m = align_target("with_gcm", y, estimator, gcm_out=ref, eps=eps)
        frac = 1.0 if m is None else float(m.mean())
        lp = None
        if lpips_fn is not None:
            a, b = (out, y) if m is None else (out * m, y * m)
            lp = float(lpips_fn(a, b))
        report.records.append(EvalRecord(i, psnr(out, y, m), ssim(out, y, m), frac, lp))
    return report


def lpips_plugin(path=None):
    """Return an LPIPS callable from the ``lpips`` package, or ``(None, reason)``.

    The return value is ``(fn, note)`` where ``fn`` maps two (3,H,W) images in
    [0,1] to a float.  Absence of the package or weights is not fatal.
    """
    try:
        import lpips  # type: ignore
    except ImportError:
        note = "lpips package not installed"
        warnings.warn(f"LPIPS column omitted: {note}", stacklevel=2)
        return None, note
    try:
        kwargs = {"net": "alex", "version": "0.1"}
        if path is not None:
            kwargs["model_path"] = str(resolve_asset(path))
        model = lpips.LPIPS(**kwargs).eval()
    except Exception as exc:
        note = f"LPIPS load failed: {exc}"
        warnings.warn(note, stacklevel=2)
        return None, note

    @torch.no_grad()
    def fn(a, b):
        return float(model(_b(a).float() * 2 - 1, _b(b).float() * 2 - 1).mean())

    return fn, None

