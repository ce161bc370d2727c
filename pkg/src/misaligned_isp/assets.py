"""Location of external artifacts (flow weights, perceptual nets, LPIPS)."""
from __future__ import annotations

import os
from pathlib import Path

CACHE_ENV = "MISALIGNED_ISP_CACHE"


def resolve_asset(path) -> Path:
    """Return ``path`` as given if it exists or is absolute, else look it up under $MISALIGNED_ISP_CACHE."""
    p = Path(path).expanduser()
    if p.is_absolute() or p.exists():
        return p
    root = os.environ.get(CACHE_ENV)
    if root:
        cand = Path(root).expanduser() / p
        if cand.exists():
            return cand
    return p
