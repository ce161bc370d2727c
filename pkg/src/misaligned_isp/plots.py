"""Report figures rendered to files with the Agg backend."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_history(history: list[dict], path) -> Path:
    """Training losses per epoch (left) and validation PSNR where recorded (right)."""
    fig, (ax_l, ax_p) = plt.subplots(1, 2, figsize=(10, 3.5))
    epochs = [r["epoch"] for r in history]
    for key in ("gcm", "isp", "gan", "disc", "total"):
        vals = [r.get(key) for r in history]
        if any(v for v in vals):
            ax_l.plot(epochs, [v if v is not None else float("nan") for v in vals], label=key)
    ax_l.set_xlabel("epoch")
    ax_l.set_ylabel("loss")
    ax_l.set_yscale("log")
    ax_l.legend(fontsize=8)
    for key in ("val_isp_psnr", "val_gcm_psnr"):
        pts = [(r["epoch"], r[key]) for r in history if key in r]
        if pts:
            ax_p.plot(*zip(*pts), marker="o", label=key[4:])
    ax_p.set_xlabel("epoch")
    ax_p.set_ylabel("PSNR (dB)")
    if ax_p.lines:
        ax_p.legend(fontsize=8)
    return _save(fig, path)


def plot_ablation(rows: list[dict], path, title: str = "") -> Path:
    """Grouped bars of held-out PSNR per variant."""
    keys = [k for k in ("isp_psnr", "gcm_psnr") if any(k in r for r in rows)]
    fig, ax = plt.subplots(figsize=(1.6 * len(rows) + 2, 3.5))
    width = 0.8 / max(len(keys), 1)
    for j, k in enumerate(keys):
        xs = [i + (j - (len(keys) - 1) / 2) * width for i in range(len(rows))]
        ax.bar(xs, [r.get(k, 0.0) for r in rows], width, label=k.replace("_psnr", ""))
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels([r["variant"] for r in rows])
    ax.set_ylabel("PSNR (dB)")
    vals = [r[k] for r in rows for k in keys if k in r]
    if vals:
        ax.set_ylim(min(vals) - 2, max(vals) + 1)
    if keys:
        ax.legend(fontsize=8)
    if title:
        ax.set_title(title)
    return _save(fig, path)


def plot_samples(panels: dict, path, max_rows: int = 4) -> Path:
    """Image grid: one column per entry of ``panels`` (name -> (B,3,H,W)), one row per sample."""
    names = [n for n, v in panels.items() if v is not None]
    rows = min(max_rows, min(panels[n].shape[0] for n in names))
    fig, axes = plt.subplots(rows, len(names), figsize=(2 * len(names), 2 * rows), squeeze=False)
    for i in range(rows):
        for j, n in enumerate(names):
            img = panels[n][i].detach().clamp(0, 1)
            if img.shape[0] == 1:
                img = img.expand(3, -1, -1)
            axes[i][j].imshow(img.permute(1, 2, 0).cpu().numpy())
            axes[i][j].set_xticks([])
            axes[i][j].set_yticks([])
            if i == 0:
                axes[i][j].set_title(n, fontsize=9)
    return _save(fig, path)


def plot_eval(report, path) -> Path:
    """Per-image PSNR and SSIM bars for one protocol."""
    recs = report.records
    fig, (ax_p, ax_s) = plt.subplots(1, 2, figsize=(10, 3))
    idx = [r.index for r in recs]
    ax_p.bar(idx, [r.psnr for r in recs])
    ax_p.axhline(report.mean_psnr, color="k", lw=1, ls="--")
    ax_p.set_ylabel("PSNR (dB)")
    ax_s.bar(idx, [r.ssim for r in recs], color="tab:orange")
    ax_s.axhline(report.mean_ssim, color="k", lw=1, ls="--")
    ax_s.set_ylabel("SSIM")
    for ax in (ax_p, ax_s):
        ax.set_xlabel("image")
    fig.suptitle(report.protocol)
    return _save(fig, path)

