"""Raw frames, Bayer packing/demosaicking, coordinate maps and synthetic pairs.

Images are ``torch.Tensor`` objects laid out channel-major (C, H, W) with
values nominally in [0, 1].  Raw mosaics stay as ``uint16`` numpy arrays
until they are packed or demosaicked.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image
from scipy.ndimage import gaussian_filter

from .errors import DimensionError, LoadError, MetadataError, ParameterError
from .flowalign import valid_mask, warp

BAYER_PATTERNS = ("RGGB", "BGGR", "GRBG", "GBRG")
_COLOR_INDEX = {"R": 0, "G": 1, "B": 2}


@dataclass
class RawFrame:
    mosaic: np.ndarray
    bayer_pattern: str = "RGGB"
    black_level: int = 0
    white_level: int = 65535

    def __post_init__(self):
        self.mosaic = np.asarray(self.mosaic)
        if self.mosaic.ndim != 2:
            raise DimensionError(f"mosaic must be 2-D, got shape {self.mosaic.shape}")
        if self.mosaic.shape[0] % 2 or self.mosaic.shape[1] % 2:
            raise DimensionError(f"mosaic dimensions must be even, got {self.mosaic.shape}")
        if self.bayer_pattern not in BAYER_PATTERNS:
            raise MetadataError(f"unknown Bayer pattern {self.bayer_pattern!r}")
        if not (0 <= self.black_level < self.white_level <= 65535):
            raise MetadataError(
                f"need 0 <= black_level < white_level <= 65535, got {self.black_level}, {self.white_level}"
            )
        self.mosaic = self.mosaic.astype(np.uint16, copy=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.mosaic.shape

    def normalized(self) -> np.ndarray:
        v = (self.mosaic.astype(np.float64) - self.black_level) / (self.white_level - self.black_level)
        return np.clip(v, 0.0, 1.0)

    def color_sites(self) -> np.ndarray:
        """Per-pixel color index (0=R, 1=G, 2=B) of the mosaic."""
        tile = np.array([_COLOR_INDEX[c] for c in self.bayer_pattern]).reshape(2, 2)
        h, w = self.mosaic.shape
        return np.tile(tile, (h // 2, w // 2))


def pack_bayer(raw: RawFrame) -> torch.Tensor:
    """Pack a 2Hx2W mosaic into a (4, H, W) tensor ordered (R, G_r, G_b, B).

    G_r is the green sample sharing a row with red, G_b the one sharing a row
    with blue, whatever the source pattern.
    """
    v = raw.normalized()
    p = raw.bayer_pattern
    pos = [(0, 0), (0, 1), (1, 0), (1, 1)]
    r_pos = pos[p.index("R")]
    b_pos = pos[p.index("B")]
    greens = [pos[i] for i, c in enumerate(p) if c == "G"]
    g_r = next(g for g in greens if g[0] == r_pos[0])
    g_b = next(g for g in greens if g[0] == b_pos[0])
    planes = [v[dy::2, dx::2] for dy, dx in (r_pos, g_r, g_b, b_pos)]
    return torch.from_numpy(np.stack(planes).astype(np.float32))


_KERNEL_G = np.array([[0, 1, 0], [1, 4, 1], [0, 1, 0]], dtype=np.float64) / 4
_KERNEL_RB = np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]], dtype=np.float64) / 4


def demosaic_simple(raw: RawFrame) -> torch.Tensor:
    """Bilinear demosaicking to a (3, 2H, 2W) image aligned with the mosaic.

    Implemented as normalized convolution, so sampled values are kept and
    spatially constant inputs are reproduced exactly, borders included.
    """
    v = torch.from_numpy(raw.normalized())
    sites = torch.from_numpy(raw.color_sites())
    out = []
    for c, kernel in ((0, _KERNEL_RB), (1, _KERNEL_G), (2, _KERNEL_RB)):
        m = (sites == c).to(torch.float64)
        k = torch.from_numpy(kernel)[None, None]
        num = F.conv2d((v * m)[None, None], k, padding=1)[0, 0]
        den = F.conv2d(m[None, None], k, padding=1)[0, 0]
        out.append(num / den)
    return torch.stack(out).clamp(0, 1).to(torch.float32)


def mosaic_from_rgb(rgb: np.ndarray, pattern: str = "RGGB") -> np.ndarray:
    """Sample a (3, H, W) linear image on a Bayer lattice."""
    _, h, w = rgb.shape
    tile = np.array([_COLOR_INDEX[c] for c in pattern]).reshape(2, 2)
    sites = np.tile(tile, (h // 2, w // 2))
    return np.take_along_axis(rgb, sites[None], axis=0)[0]


def coordinate_map(H: int, W: int, dtype=torch.float32) -> torch.Tensor:
    """(2, H, W) map of normalized x (channel 0) and y (channel 1) in [-1, 1]."""
    if H < 2 or W < 2:
        raise DimensionError(f"coordinate map needs H, W >= 2, got {H}x{W}")
    xs = torch.linspace(-1, 1, W, dtype=torch.float64)
    ys = torch.linspace(-1, 1, H, dtype=torch.float64)
    return torch.stack([xs[None, :].expand(H, W), ys[:, None].expand(H, W)]).to(dtype)


# --------------------------------------------------------------------------- synthetic data

@dataclass
class GenParams:
    """Degradation and misalignment applied by :func:`synth_pair`.

    ``translation`` is the content displacement (dx, dy) of the target relative
    to the aligned scene; the stored flow is the field that warps the scene onto
    the target, i.e. ``-translation`` for a pure shift.
    """

    color_matrix: list = field(default_factory=lambda: np.eye(3).tolist())
    gamma: float = 1 / 2.2
    vignette: float = 0.0
    flow_kind: str = "zero"  # zero | translate | affine | smooth
    translation: tuple = (0, 0)
    affine: list = field(default_factory=lambda: [[0.0, 0.0], [0.0, 0.0]])
    smooth_amplitude: float = 0.0
    smooth_sigma: float = 8.0
    flow_seed: int = 0
    noise_std: float = 0.0
    bayer_pattern: str = "RGGB"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["translation"] = list(self.translation)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GenParams":
        d = dict(d)
        if "translation" in d:
            d["translation"] = tuple(d["translation"])
        return cls(**d)


@dataclass
class SyntheticPair:
    raw: RawFrame
    target: torch.Tensor
    aligned_gt: torch.Tensor
    true_flow: torch.Tensor
    gen_params: dict


def make_flow(gen: GenParams, H: int, W: int) -> torch.Tensor:
    kind = gen.flow_kind
    if kind == "zero":
        return torch.zeros(2, H, W)
    if kind == "translate":
        dx, dy = gen.translation
        flow = torch.empty(2, H, W)
        flow[0] = -float(dx)
        flow[1] = -float(dy)
        return flow
    if kind == "affine":
        A = np.asarray(gen.affine, dtype=np.float64)
        cx, cy = (W - 1) / 2, (H - 1) / 2
        yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
        px, py = xx - cx, yy - cy
        dx, dy = gen.translation
        u = A[0, 0] * px + A[0, 1] * py - dx
        v = A[1, 0] * px + A[1, 1] * py - dy
        return torch.from_numpy(np.stack([u, v]).astype(np.float32))
    if kind == "smooth":
        rng = np.random.default_rng(gen.flow_seed)
        f = np.stack([gaussian_filter(rng.standard_normal((H, W)), gen.smooth_sigma, mode="wrap") for _ in range(2)])
        f *= gen.smooth_amplitude / max(np.abs(f).max(), 1e-12)
        return torch.from_numpy(f.astype(np.float32))
    raise ParameterError(f"unknown flow kind {kind!r}")


def vignette_gain(H: int, W: int, strength: float) -> np.ndarray:
    """Radial gain 1 - s*r^2 with r = 1 at the image corners."""
    tau = coordinate_map(H, W, torch.float64).numpy()
    r2 = (tau[0] ** 2 + tau[1] ** 2) / 2
    return 1.0 - strength * r2


def synth_pair(scene: torch.Tensor, gen: GenParams, seed: int = 0) -> SyntheticPair:
    """Degrade an sRGB scene into a raw frame and a misaligned target."""
    if scene.dim() != 3 or scene.shape[0] != 3:
        raise DimensionError(f"scene must be (3, H, W), got {tuple(scene.shape)}")
    if not 0 <= gen.vignette < 1:
        raise ParameterError(f"vignette strength must lie in [0, 1), got {gen.vignette}")
    _, H, W = scene.shape
    if H % 2 or W % 2:
        raise DimensionError("scene dimensions must be even")
    rng = np.random.default_rng(seed)
    s = scene.detach().double().clamp(0, 1).numpy()

    linear = s ** (1.0 / gen.gamma)
    C = np.asarray(gen.color_matrix, dtype=np.float64)
    cam = np.einsum("ij,jhw->ihw", np.linalg.inv(C), linear)
    cam = cam * vignette_gain(H, W, gen.vignette)[None]
    mono = mosaic_from_rgb(cam, gen.bayer_pattern)
    if gen.noise_std > 0:
        mono = mono + rng.normal(0.0, gen.noise_std, mono.shape)
    mosaic = np.round(np.clip(mono, 0, 1) * 65535).astype(np.uint16)
    raw = RawFrame(mosaic, gen.bayer_pattern, 0, 65535)

    aligned = scene.detach().float().clamp(0, 1)
    flow = make_flow(gen, H, W)
    if gen.flow_kind == "zero":
        target = aligned.clone()
    else:
        # outside the valid mask, fill with edge replication instead of black
        target = warp(aligned, flow)
        m = valid_mask(flow)
        target = torch.where(m.bool(), target, warp(aligned, flow, padding="border"))
    return SyntheticPair(raw, target, aligned.clone(), flow, gen.to_dict())


def random_scene(size: int, rng: np.random.Generator) -> torch.Tensor:
    """Smooth multi-scale texture with a few soft-edged blobs, values in [0.03, 0.97]."""
    img = np.zeros((3, size, size))
    for sigma, weight in ((size / 6, 1.0), (size / 16, 0.6), (2.0, 0.35)):
        n = rng.standard_normal((3, size, size))
        mix = rng.uniform(0.3, 1.0, (3, 3))
        n = np.einsum("ij,jhw->ihw", mix, n)
        img += weight * np.stack([gaussian_filter(c, sigma, mode="reflect") for c in n]) / max(sigma ** -0.5, 1e-3) * 0.15
    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(rng.integers(3, 7)):
        cx, cy = rng.uniform(0, size, 2)
        rad = rng.uniform(size / 12, size / 4)
        d = np.sqrt((xx - cx) ** 2 + (yy - cy) ** 2)
        edge = 1 / (1 + np.exp((d - rad) / 1.2))
        img += edge[None] * rng.uniform(-0.5, 0.5, (3, 1, 1))
    img = (img - img.mean()) / (img.std() + 1e-8) * 0.2 + rng.uniform(0.35, 0.6)
    return torch.from_numpy(np.clip(img, 0.03, 0.97).astype(np.float32))


def random_color_matrix(rng: np.random.Generator, jitter: float = 0.0) -> np.ndarray:
    """A sensor-to-sRGB color matrix whose inverse maps [0,1]^3 into [0,1]^3.

    The inverse (the simulated sensor response) has positive entries, so raw
    values stay non-negative and below the white level.
    """
    base = np.array([[0.62, 0.28, 0.10], [0.15, 0.70, 0.15], [0.06, 0.30, 0.64]])
    gains = np.array([0.55, 0.9, 0.7])
    if jitter:
        gains = gains * rng.uniform(1 - jitter, 1 + jitter, 3)
        gains = gains / max(gains.max(), 1.0)
    cam = gains[:, None] * base
    return np.linalg.inv(cam)


def make_synthetic_dataset(
    n: int,
    size: int = 64,
    flow: str = "translate",
    seed: int = 0,
    *,
    max_shift: int = 6,
    shift_bias: tuple = (0, 0),
    vignette: float = 0.3,
    gamma: float = 1 / 2.2,
    color_jitter: float = 0.0,
    noise_std: float = 0.0,
) -> list[SyntheticPair]:
    """Generate ``n`` pairs; translations are integers in ``bias +/- max_shift``
    clipped to ``[-max_shift, max_shift]``."""
    rng = np.random.default_rng(seed)
    pairs = []
    for k in range(n):
        scene = random_scene(size, rng)
        gp = GenParams(
            color_matrix=random_color_matrix(rng, color_jitter).tolist(),
            gamma=gamma,
            vignette=vignette,
            flow_kind=flow,
            noise_std=noise_std,
            flow_seed=int(rng.integers(2**31)),
        )
        if flow in ("translate", "affine"):
            t = rng.integers(-max_shift, max_shift + 1, 2) + np.asarray(shift_bias)
            t = np.clip(t, -max_shift, max_shift)
            gp.translation = (int(t[0]), int(t[1]))
        if flow == "affine":
            gp.affine = (rng.uniform(-0.03, 0.03, (2, 2))).tolist()
        if flow == "smooth":
            gp.smooth_amplitude = float(max_shift)
        pairs.append(synth_pair(scene, gp, seed=seed * 100003 + k))
    return pairs


# --------------------------------------------------------------------------- augmentation

def _hflip(t):
    return t.flip(-1)


def _vflip(t):
    return t.flip(-2)


def _rot(t):
    # (x, y) -> (H-1-y, x): counter-clockwise in the (x, y) pixel frame
    return t.transpose(-1, -2).flip(-1)


def _transform_image(t: torch.Tensor, ops) -> torch.Tensor:
    for op in ops:
        t = op(t)
    return t


def _transform_flow(flow: torch.Tensor, hflip: bool, vflip: bool, rot: bool) -> torch.Tensor:
    f = flow
    if hflip:
        f = _hflip(f)
        f = torch.stack([-f[0], f[1]])
    if vflip:
        f = _vflip(f)
        f = torch.stack([f[0], -f[1]])
    if rot:
        f = _rot(f)
        f = torch.stack([-f[1], f[0]])
    return f.contiguous()


def _transform_raw(raw: RawFrame, ops) -> RawFrame:
    mosaic = torch.from_numpy(raw.mosaic.astype(np.int32))
    sites = torch.from_numpy(raw.color_sites())
    mosaic = _transform_image(mosaic, ops)
    sites = _transform_image(sites, ops)
    letters = "RGB"
    pattern = "".join(letters[int(i)] for i in sites[:2, :2].reshape(-1))
    return RawFrame(mosaic.numpy().astype(np.uint16), pattern, raw.black_level, raw.white_level)


def draw_transform(seed: int) -> tuple[bool, bool, bool]:
    rng = np.random.default_rng(seed)
    h, v, r = rng.random(3) < 0.5
    return bool(h), bool(v), bool(r)


def augment(pair: SyntheticPair, seed: int, force: tuple[bool, bool, bool] | None = None) -> SyntheticPair:
    """Apply one random flip/rotation jointly to raw, images and flow.

    ``force=(hflip, vflip, rot90)`` bypasses the random draw.
    """
    hflip, vflip, rot = force if force is not None else draw_transform(seed)
    ops = [op for op, on in ((_hflip, hflip), (_vflip, vflip), (_rot, rot)) if on]
    if not ops:
        return pair
    return SyntheticPair(
        raw=_transform_raw(pair.raw, ops),
        target=_transform_image(pair.target, ops).contiguous(),
        aligned_gt=_transform_image(pair.aligned_gt, ops).contiguous(),
        true_flow=_transform_flow(pair.true_flow, hflip, vflip, rot),
        gen_params=pair.gen_params,
    )


def consistency_error(pair: SyntheticPair) -> float:
    """Max |warp(aligned_gt, true_flow) - target| over the valid region."""
    m = valid_mask(pair.true_flow)
    diff = (warp(pair.aligned_gt, pair.true_flow) - pair.target).abs() * m
    return float(diff.max())


def split_indices(n: int, seed: int = 0, fractions=(0.8, 0.1, 0.1)) -> tuple[list, list, list]:
    """Seed-fixed train/val/test split of ``range(n)``."""
    perm = np.random.default_rng(seed).permutation(n).tolist()
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    return sorted(perm[:n_train]), sorted(perm[n_train:n_train + n_val]), sorted(perm[n_train + n_val:])


# --------------------------------------------------------------------------- file formats

RAWP_MAGIC = b"RAWP"
RAWP_VERSION = 1
FLO2_MAGIC = b"FLO2"


def write_rawp(path, raw: RawFrame, sidecar_extra: dict | None = None) -> None:
    """Write the mosaic to ``path`` and its metadata to ``<stem>.json``."""
    path = Path(path)
    h, w = raw.mosaic.shape
    with open(path, "wb") as fh:
        fh.write(RAWP_MAGIC + bytes([RAWP_VERSION]) + struct.pack("<II", h, w))
        fh.write(raw.mosaic.astype("<u2").tobytes())
    meta = {"bayer_pattern": raw.bayer_pattern, "black_level": int(raw.black_level),
            "white_level": int(raw.white_level)}
    meta.update(sidecar_extra or {})
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def read_rawp(path) -> RawFrame:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 13 or data[:4] != RAWP_MAGIC:
        raise LoadError(f"{path} is not a RAWP file")
    if data[4] != RAWP_VERSION:
        raise LoadError(f"{path}: unsupported RAWP version {data[4]}")
    h, w = struct.unpack("<II", data[5:13])
    payload = np.frombuffer(data, dtype="<u2", offset=13)
    if payload.size != h * w:
        raise LoadError(f"{path}: payload holds {payload.size} samples, expected {h * w}")
    sidecar = path.with_suffix(".json")
    if not sidecar.exists():
        raise MetadataError(f"missing sidecar {sidecar}")
    meta = json.loads(sidecar.read_text())
    try:
        return RawFrame(payload.reshape(h, w).astype(np.uint16), meta["bayer_pattern"],
                        int(meta["black_level"]), int(meta["white_level"]))
    except KeyError as exc:
        raise MetadataError(f"{sidecar} lacks key {exc}") from exc


def write_png(path, img: torch.Tensor) -> None:
    a = img.detach().float().clamp(0, 1).mul(255).round().to(torch.uint8)
    Image.fromarray(a.permute(1, 2, 0).numpy()).save(path)


def read_png(path) -> torch.Tensor:
    a = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(a).permute(2, 0, 1).contiguous()


def write_flo2(path, flow: torch.Tensor) -> None:
    _, h, w = flow.shape
    with open(path, "wb") as fh:
        fh.write(FLO2_MAGIC + struct.pack("<II", h, w))
        fh.write(flow.detach().permute(1, 2, 0).numpy().astype("<f4").tobytes())


def read_flo2(path) -> torch.Tensor:
    data = Path(path).read_bytes()
    if data[:4] != FLO2_MAGIC:
        raise LoadError(f"{path} is not a FLO2 file")
    h, w = struct.unpack("<II", data[4:12])
    arr = np.frombuffer(data, dtype="<f4", offset=12)
    if arr.size != h * w * 2:
        raise LoadError(f"{path}: truncated flow payload")
    return torch.from_numpy(arr.reshape(h, w, 2).copy()).permute(2, 0, 1).contiguous()


def save_dataset(pairs: list[SyntheticPair], out_dir) -> Path:
    """Write pairs under ``out_dir/pairs`` using the NNNN.* layout.

    ``NNNN.json`` is shared: it carries the raw sidecar keys plus the
    generator parameters under ``gen_params``.
    """
    d = Path(out_dir) / "pairs"
    d.mkdir(parents=True, exist_ok=True)
    for k, p in enumerate(pairs):
        stem = d / f"{k:04d}"
        write_rawp(stem.with_suffix(".rawp"), p.raw, {"gen_params": p.gen_params})
        write_png(f"{stem}.target.png", p.target)
        write_png(f"{stem}.gt.png", p.aligned_gt)
        write_flo2(f"{stem}.flow.bin", p.true_flow)
    return d


def load_dataset(root) -> list[SyntheticPair]:
    d = Path(root) / "pairs"
    if not d.is_dir():
        raise LoadError(f"no pairs/ directory under {root}")
    pairs = []
    for raw_path in sorted(d.glob("*.rawp")):
        stem = raw_path.with_suffix("")
        meta = json.loads(raw_path.with_suffix(".json").read_text())
        pairs.append(SyntheticPair(
            raw=read_rawp(raw_path),
            target=read_png(f"{stem}.target.png"),
            aligned_gt=read_png(f"{stem}.gt.png"),
            true_flow=read_flo2(f"{stem}.flow.bin"),
            gen_params=meta.get("gen_params", {}),
        ))
    return pairs
