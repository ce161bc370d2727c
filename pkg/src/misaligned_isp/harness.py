"""Joint GCM + LiteISPNet training, checkpoints and ablation suites."""
from __future__ import annotations

import base64
import copy
import dataclasses
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .backbone import LiteISPConfig, LiteISPNet, PatchDiscriminator
from .errors import ConfigError, LoadError, ParameterError
from .evalmetrics import psnr
from .flowalign import align_target, make_estimator
from .gcm import GCM, GCMConfig
from .losses import (
    LossWeights,
    RandomPyramidExtractor,
    VGGExtractor,
    loss_discriminator,
    loss_gan_generator,
    loss_gcm,
    loss_isp,
    loss_total,
    masked_l1,
)
from .rawdata import (
    GenParams,
    SyntheticPair,
    augment,
    coordinate_map,
    demosaic_simple,
    make_synthetic_dataset,
    pack_bayer,
    split_indices,
    synth_pair,
)

log = logging.getLogger(__name__)


# --------------------------------------------------------------------------- configuration

@dataclass
class OptimConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    lr: float = 1e-4
    lr_halve_epoch: int = 50
    epochs: int = 100
    batch: int = 16
    steps_per_epoch: int | None = None
    separate_optimizers: bool = False


@dataclass
class GANConfig:
    start_epoch: int = 0


@dataclass
class DataConfig:
    root: str | None = None
    n: int = 64
    size: int = 64
    flow: str = "translate"
    max_shift: int = 6
    shift_bias: tuple = (0, 0)
    vignette: float = 0.3
    color_jitter: float = 0.0
    noise_std: float = 0.0
    seed: int = 0
    augment: bool = True


@dataclass
class TrainConfig:
    mode: str = "isp"
    align_strategy: str = "with_gcm"
    optimizer: OptimConfig = field(default_factory=OptimConfig)
    flow: dict = field(default_factory=lambda: {"estimator": "brute_translation", "radius": 8})
    gcm: GCMConfig = field(default_factory=GCMConfig)
    liteisp: LiteISPConfig = field(default_factory=LiteISPConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    gan: GANConfig = field(default_factory=GANConfig)
    data: DataConfig = field(default_factory=DataConfig)
    perceptual: dict = field(default_factory=lambda: {"kind": "random_pyramid", "seed": 0})
    eps: float = 1e-3
    seed: int = 0
    train_isp: bool = True
    eval_every: int = 10
    out_dir: str | None = None

    def __post_init__(self):
        if self.mode not in ("isp", "ispgan"):
            raise ConfigError(f"mode must be 'isp' or 'ispgan', got {self.mode!r}")
        if self.align_strategy == "with_gcm" and not self.gcm.spn:
            raise ConfigError("align_strategy 'with_gcm' needs gcm.spn enabled")
        if self.align_strategy == "with_output" and not self.train_isp:
            raise ConfigError("align_strategy 'with_output' needs the ISP network")
        if not self.train_isp and not self.gcm.spn:
            raise ConfigError("nothing to train: both GCM and ISP are disabled")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return _from_dict(cls, d)


def _from_dict(cls, d):
    if not isinstance(d, dict):
        raise ConfigError(f"expected an object for {cls.__name__}, got {type(d).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(d) - set(fields)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for name, value in d.items():
        ftype = fields[name].type
        sub = _NESTED.get(ftype)
        if sub is not None:
            kwargs[name] = _from_dict(sub, value)
        elif isinstance(value, list) and name == "shift_bias":
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


_NESTED = {
    "OptimConfig": OptimConfig,
    "GCMConfig": GCMConfig,
    "LiteISPConfig": LiteISPConfig,
    "LossWeights": LossWeights,
    "GANConfig": GANConfig,
    "DataConfig": DataConfig,
}


def load_config(path) -> TrainConfig:
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    preset = d.pop("preset", None)
    base = PRESETS[preset]().to_dict() if preset else {}
    return TrainConfig.from_dict(_deep_merge(base, d))


def _deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def desk_config(**overrides) -> TrainConfig:
    """Small CPU-scale setting: 64x64 crops, batch 8, narrow LiteISPNet."""
    cfg = TrainConfig(
        optimizer=OptimConfig(lr=1e-3, lr_halve_epoch=150, epochs=200, batch=8),
        liteisp=LiteISPConfig(n_rcab_per_group=1, base_width=16),
        flow={"estimator": "brute_translation", "radius": 6},
        eval_every=25,
    )
    return _deep_replace(cfg, overrides)


def paper_zrr_config(**overrides) -> TrainConfig:
    """448x448 crops, batch 16, Adam 1e-4 halved after epoch 50 of 100."""
    cfg = TrainConfig(
        optimizer=OptimConfig(lr=1e-4, lr_halve_epoch=50, epochs=100, batch=16),
        liteisp=LiteISPConfig(n_rcab_per_group=4, base_width=64),
        flow={"estimator": "external", "weights_path": "pwcnet.pt", "fallback": "block_match"},
        data=DataConfig(size=448),
    )
    return _deep_replace(cfg, overrides)


PRESETS = {"desk": desk_config, "paper_zrr": paper_zrr_config}


def _deep_replace(cfg: TrainConfig, overrides: dict) -> TrainConfig:
    return TrainConfig.from_dict(_deep_merge(cfg.to_dict(), overrides)) if overrides else cfg


def lr_at(epoch: int, opt: OptimConfig) -> float:
    return opt.lr if epoch < opt.lr_halve_epoch else opt.lr / 2


# --------------------------------------------------------------------------- models and data

class JointModel(nn.Module):
    """Container whose parameter names form the checkpoint manifest."""

    def __init__(self, cfg: TrainConfig):
        super().__init__()
        torch.manual_seed(cfg.seed)
        self.gcm = GCM(cfg.gcm) if cfg.gcm.spn else None
        self.liteisp = LiteISPNet(cfg.liteisp) if cfg.train_isp else None
        self.disc = PatchDiscriminator() if cfg.mode == "ispgan" and cfg.train_isp else None


def build_models(cfg: TrainConfig) -> JointModel:
    return JointModel(cfg)


def build_extractor(cfg: TrainConfig):
    kind = cfg.perceptual.get("kind", "random_pyramid")
    if kind == "random_pyramid":
        return RandomPyramidExtractor(seed=int(cfg.perceptual.get("seed", 0)))
    if kind == "vgg":
        return VGGExtractor(cfg.perceptual.get("weights_path", ""))
    raise ConfigError(f"unknown perceptual extractor {kind!r}")


@dataclass
class Batch:
    packed: torch.Tensor
    x_hat: torch.Tensor
    y: torch.Tensor
    tau: torch.Tensor
    gt: torch.Tensor


def prepare_batch(pairs: list[SyntheticPair]) -> Batch:
    H, W = pairs[0].target.shape[-2:]
    return Batch(
        packed=torch.stack([pack_bayer(p.raw) for p in pairs]),
        x_hat=torch.stack([demosaic_simple(p.raw) for p in pairs]),
        y=torch.stack([p.target for p in pairs]),
        tau=coordinate_map(H, W)[None].expand(len(pairs), -1, -1, -1),
        gt=torch.stack([p.aligned_gt for p in pairs]),
    )


def get_pairs(cfg: TrainConfig) -> list[SyntheticPair]:
    d = cfg.data
    if d.root:
        from .rawdata import load_dataset

        return load_dataset(d.root)
    return make_synthetic_dataset(
        d.n, d.size, d.flow, d.seed, max_shift=d.max_shift, shift_bias=d.shift_bias,
        vignette=d.vignette, color_jitter=d.color_jitter, noise_std=d.noise_std,
    )


# --------------------------------------------------------------------------- checkpoints

@dataclass
class Checkpoint:
    tensors: dict
    config: dict
    epoch: int
    rng_state: str
    history: list = field(default_factory=list)

    @classmethod
    def capture(cls, models: JointModel, cfg: TrainConfig, epoch: int, history=None) -> "Checkpoint":
        tensors = {k: v.detach().clone() for k, v in models.state_dict().items()}
        rng = base64.b64encode(torch.get_rng_state().numpy().tobytes()).decode()
        return cls(tensors, cfg.to_dict(), epoch, rng, list(history or []))

    def build_models(self) -> JointModel:
        cfg = TrainConfig.from_dict(self.config)
        models = build_models(cfg)
        models.load_state_dict(self.tensors)
        return models

    def manifest(self) -> list[dict]:
        out, offset = [], 0
        for name, t in self.tensors.items():
            dtype = "float32" if t.is_floating_point() else "int64"
            nbytes = t.numel() * (4 if dtype == "float32" else 8)
            out.append({"name": name, "shape": list(t.shape), "dtype": dtype, "offset": offset})
            offset += nbytes
        return out

    def save(self, path) -> Path:
        """Write ``<path>/manifest.json`` and ``<path>/params.bin``."""
        d = Path(path)
        d.mkdir(parents=True, exist_ok=True)
        chunks = []
        for t in self.tensors.values():
            a = t.detach().cpu().numpy()
            a = a.astype("<f4") if t.is_floating_point() else a.astype("<i8")
            chunks.append(a.tobytes())
        (d / "params.bin").write_bytes(b"".join(chunks))
        meta = {"tensors": self.manifest(), "config": self.config, "epoch": self.epoch,
                "rng_state": self.rng_state, "history": self.history}
        (d / "manifest.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
        return d

    @classmethod
    def load(cls, path) -> "Checkpoint":
        d = Path(path)
        try:
            meta = json.loads((d / "manifest.json").read_text())
            blob = (d / "params.bin").read_bytes()
        except OSError as exc:
            raise LoadError(f"cannot read checkpoint at {d}: {exc}") from exc
        tensors = {}
        for entry in meta["tensors"]:
            dt = "<f4" if entry["dtype"] == "float32" else "<i8"
            n = math.prod(entry["shape"])
            a = np.frombuffer(blob, dtype=dt, count=n, offset=entry["offset"]).reshape(entry["shape"])
            tensors[entry["name"]] = torch.from_numpy(a.copy())
        return cls(tensors, meta["config"], meta["epoch"], meta["rng_state"], meta.get("history", []))


def module_hash(module: nn.Module | None) -> str:
    h = hashlib.sha256()
    if module is not None:
        for name, t in module.state_dict().items():
            h.update(name.encode())
            h.update(t.detach().cpu().numpy().tobytes())
    return h.hexdigest()


# --------------------------------------------------------------------------- training

class TrainingDiverged(RuntimeError):
    pass


@dataclass
class Trainer:
    """Models, optimizers and frozen helpers for one training run."""

    cfg: TrainConfig
    models: JointModel
    estimator: object
    extractor: object
    opt_g: list
    opt_d: torch.optim.Optimizer | None
    epoch: int = 0
    step: int = 0

    @classmethod
    def create(cls, cfg: TrainConfig, models: JointModel | None = None) -> "Trainer":
        models = models or build_models(cfg)
        o = cfg.optimizer
        betas = (o.beta1, o.beta2)
        groups = [m for m in (models.gcm, models.liteisp) if m is not None]
        if o.separate_optimizers:
            opt_g = [torch.optim.Adam(m.parameters(), lr=o.lr, betas=betas) for m in groups]
        else:
            opt_g = [torch.optim.Adam([p for m in groups for p in m.parameters()], lr=o.lr, betas=betas)]
        opt_d = torch.optim.Adam(models.disc.parameters(), lr=o.lr, betas=betas) if models.disc else None
        extractor = build_extractor(cfg) if cfg.train_isp and cfg.loss.lambda_vgg > 0 else None
        return cls(cfg, models, make_estimator(cfg.flow), extractor, opt_g, opt_d)

    def set_lr(self, lr: float):
        for opt in self.opt_g + ([self.opt_d] if self.opt_d else []):
            for g in opt.param_groups:
                g["lr"] = lr


def train_step(batch: Batch, trainer: Trainer) -> dict:
    """One generator update (and one discriminator update in ispgan mode)."""
    cfg, models = trainer.cfg, trainer.models
    models.train()
    y_gcm = models.gcm(batch.x_hat, batch.y, batch.tau) if models.gcm is not None else None
    y_hat = models.liteisp(batch.packed) if models.liteisp is not None else None
    yw, m = align_target(
        cfg.align_strategy, batch.y, trainer.estimator,
        demosaicked=batch.x_hat, gcm_out=y_gcm, output=y_hat, eps=cfg.eps,
    )
    zero = batch.y.new_zeros(())
    comps = {"gcm": loss_gcm(y_gcm, yw, m) if y_gcm is not None else zero,
             "isp": loss_isp(y_hat, yw, m, trainer.extractor, cfg.loss) if y_hat is not None else zero}
    use_gan = models.disc is not None and trainer.epoch >= cfg.gan.start_epoch
    if use_gan:
        comps["gan"] = loss_gan_generator(models.disc(y_hat))
    total = loss_total(comps, "ispgan" if use_gan else "isp", cfg.loss)
    if not torch.isfinite(total):
        _dump_divergence(trainer, batch, comps)
        raise TrainingDiverged(f"non-finite loss at epoch {trainer.epoch} step {trainer.step}: "
                               f"{ {k: float(v) for k, v in comps.items()} }")
    for opt in trainer.opt_g:
        opt.zero_grad(set_to_none=True)
    total.backward()
    for opt in trainer.opt_g:
        opt.step()
    report = {k: float(v.detach()) for k, v in comps.items()}
    report["total"] = float(total.detach())
    report["valid_fraction"] = float(m.mean())
    if use_gan:
        trainer.opt_d.zero_grad(set_to_none=True)
        l_d = loss_discriminator(models.disc(yw), models.disc(y_hat.detach()))
        l_d.backward()
        trainer.opt_d.step()
        report["disc"] = float(l_d.detach())
    trainer.step += 1
    return report


def _dump_divergence(trainer: Trainer, batch: Batch, comps: dict):
    if not trainer.cfg.out_dir:
        return
    path = Path(trainer.cfg.out_dir) / f"diverged_step{trainer.step}.pt"
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({"batch": dataclasses.asdict(batch), "losses": comps, "epoch": trainer.epoch,
                "step": trainer.step, "seed": trainer.cfg.seed}, path)
    log.error("diagnostic dump written to %s", path)


@torch.no_grad()
def predict(models: JointModel, pairs: list[SyntheticPair], chunk: int = 8):
    """Return (isp_out, gcm_out) for ``pairs``; either may be None."""
    models.eval()
    outs, gcms = [], []
    for i in range(0, len(pairs), chunk):
        b = prepare_batch(pairs[i:i + chunk])
        if models.liteisp is not None:
            outs.append(models.liteisp(b.packed))
        if models.gcm is not None:
            gcms.append(models.gcm(b.x_hat, b.y, b.tau))
    cat = lambda xs: torch.cat(xs) if xs else None  # noqa: E731
    return cat(outs), cat(gcms)


def corner_region(H: int, W: int, threshold: float = 0.6) -> torch.Tensor:
    """Boolean (H, W) map of pixels far from the centre, where vignetting is strongest."""
    tau = coordinate_map(H, W)
    return (tau ** 2).sum(0) / 2 > threshold


def heldout_metrics(models: JointModel, pairs: list[SyntheticPair], estimator=None, eps=1e-3) -> dict:
    """PSNR of the ISP and GCM outputs against the aligned ground truth.

    With an estimator, also the GCM masked L1 against the target warped onto it.
    """
    out, gcm = predict(models, pairs)
    gt = torch.stack([p.aligned_gt for p in pairs])
    res = {}
    if out is not None:
        res["isp_psnr"] = float(np.mean([psnr(out[i], gt[i]) for i in range(len(pairs))]))
    if gcm is not None:
        res["gcm_psnr"] = float(np.mean([psnr(gcm[i], gt[i]) for i in range(len(pairs))]))
        res["gcm_corner_l1"] = float((gcm - gt).abs().mean(1)[:, corner_region(*gt.shape[-2:])].mean())
        if estimator is not None:
            y = torch.stack([p.target for p in pairs])
            yw, m = align_target("with_gcm", y, estimator, gcm_out=gcm, eps=eps)
            res["gcm_l1_warped"] = float(masked_l1(gcm, yw, m))
    return res


def _epoch_order(n: int, seed: int, epoch: int) -> list[int]:
    return np.random.default_rng([seed, epoch]).permutation(n).tolist()


def fit(cfg: TrainConfig, pairs: list[SyntheticPair] | None = None, progress=None) -> Checkpoint:
    """Train for ``cfg.optimizer.epochs`` epochs and return the final checkpoint.

    The learning rate is halved from ``lr_halve_epoch`` on.  The validation
    split is scored every ``eval_every`` epochs; with ``out_dir`` set the
    latest checkpoint is written after every epoch.
    """
    pairs = pairs if pairs is not None else get_pairs(cfg)
    train_idx, val_idx, _ = split_indices(len(pairs), cfg.data.seed)
    trainer = Trainer.create(cfg)
    history: list[dict] = []
    o = cfg.optimizer
    steps = o.steps_per_epoch or max(1, math.ceil(len(train_idx) / o.batch))
    frozen_hash = module_hash(trainer.extractor)
    out_dir = Path(cfg.out_dir) if cfg.out_dir else None

    for epoch in range(o.epochs):
        trainer.epoch = epoch
        trainer.set_lr(lr_at(epoch, o))
        order = [train_idx[i] for i in _epoch_order(len(train_idx), cfg.seed, epoch)]
        losses = []
        for s in range(steps):
            chunk = [order[(s * o.batch + k) % len(order)] for k in range(o.batch)]
            items = [pairs[i] for i in chunk]
            if cfg.data.augment:
                items = [augment(p, seed=(cfg.seed * 1_000_003 + epoch * 10_007 + i)) for p, i in zip(items, chunk)]
            losses.append(train_step(prepare_batch(items), trainer))
        record = {"epoch": epoch, "lr": lr_at(epoch, o)}
        record.update({k: float(np.mean([l[k] for l in losses])) for k in losses[0]})
        if val_idx and cfg.eval_every and ((epoch + 1) % cfg.eval_every == 0 or epoch + 1 == o.epochs):
            record.update({f"val_{k}": v for k, v in heldout_metrics(trainer.models, [pairs[i] for i in val_idx]).items()})
        history.append(record)
        if module_hash(trainer.extractor) != frozen_hash:
            raise RuntimeError("perceptual extractor parameters changed during training")
        if progress:
            progress(record)
        if out_dir:
            Checkpoint.capture(trainer.models, cfg, epoch + 1, history).save(out_dir / "last")
    return Checkpoint.capture(trainer.models, cfg, o.epochs, history)


# --------------------------------------------------------------------------- marker test

@torch.no_grad()
def marker_displacement(models: JointModel, pair: SyntheticPair, pos=None, size: int = 4,
                        amplitude: float = 0.5) -> float:
    """Distance in pixels between an injected scene marker and its response in the output.

    The marker is a bright ``size`` x ``size`` square added to the aligned
    scene with its corner on an even coordinate, so it covers whole Bayer
    cells and carries no sub-cell phase bias.  Both versions go through the
    raw degradation and the ISP network; the centroid of the thresholded
    absolute output difference is compared to the marker centre.
    """
    gt = pair.aligned_gt
    _, H, W = gt.shape
    cy, cx = pos if pos is not None else (H // 2, W // 2)
    y0, x0 = (cy - size // 2) & ~1, (cx - size // 2) & ~1
    if y0 < 0 or x0 < 0 or y0 + size > H or x0 + size > W:
        raise ParameterError(f"marker at {pos} does not fit in {H}x{W}")
    marked = gt.clone()
    marked[:, y0:y0 + size, x0:x0 + size] += amplitude
    marked = marked.clamp(0, 1)
    centre_y, centre_x = y0 + (size - 1) / 2, x0 + (size - 1) / 2
    gen = GenParams.from_dict({**pair.gen_params, "noise_std": 0.0})
    base_raw = synth_pair(gt, gen).raw
    mark_raw = synth_pair(marked, gen).raw
    models.eval()
    out0 = models.liteisp(pack_bayer(base_raw)[None])[0]
    out1 = models.liteisp(pack_bayer(mark_raw)[None])[0]
    diff = (out1 - out0).abs().sum(0)
    diff = torch.where(diff >= 0.2 * diff.max(), diff, torch.zeros_like(diff))
    ys, xs = torch.meshgrid(torch.arange(H, dtype=diff.dtype), torch.arange(W, dtype=diff.dtype), indexing="ij")
    total = diff.sum()
    my = float((diff * ys).sum() / total)
    mx = float((diff * xs).sum() / total)
    return math.hypot(mx - centre_x, my - centre_y)


# --------------------------------------------------------------------------- ablations

SUITES = ("alignment", "gcm_components", "rcab_count")


def ablation_variants(suite: str) -> list[tuple[str, dict]]:
    if suite == "alignment":
        return [
            ("baseline-none", {"align_strategy": "none", "gcm": {"spn": False, "use_target_guidance": False}}),
            ("align-with-output", {"align_strategy": "with_output", "gcm": {"spn": False, "use_target_guidance": False}}),
            ("align-with-demosaicked", {"align_strategy": "with_demosaicked", "gcm": {"spn": False, "use_target_guidance": False}}),
            ("align-with-gcm", {"align_strategy": "with_gcm"}),
        ]
    if suite == "gcm_components":
        return [
            ("N/A", {"align_strategy": "none", "gcm": {"spn": False, "use_target_guidance": False}}),
            ("SPN", {"align_strategy": "with_gcm", "gcm": {"use_target_guidance": False, "use_coords": False}}),
            ("SPN+y", {"align_strategy": "with_gcm", "gcm": {"use_target_guidance": True, "use_coords": False}}),
            ("SPN+y+tau", {"align_strategy": "with_gcm", "gcm": {"use_target_guidance": True, "use_coords": True}}),
        ]
    if suite == "rcab_count":
        return [(str(n), {"liteisp": {"n_rcab_per_group": n}}) for n in (2, 4, 8, 20)]
    raise ConfigError(f"unknown ablation suite {suite!r}; choose from {SUITES}")


@dataclass
class AblationReport:
    suite: str
    rows: list

    def to_jsonl(self) -> str:
        return "".join(json.dumps({"suite": self.suite, **r}) + "\n" for r in self.rows)

    def table(self) -> str:
        cols = ["variant", "isp_psnr", "gcm_psnr", "gcm_corner_l1", "params"]
        cols = [c for c in cols if any(c in r for r in self.rows)]
        lines = ["\t".join(cols)]
        for r in self.rows:
            cells = []
            for c in cols:
                v = r.get(c)
                if v is None:
                    cells.append("-")
                elif isinstance(v, float):
                    cells.append(f"{v:.4f}" if abs(v) < 1 else f"{v:.2f}")
                else:
                    cells.append(str(v))
            lines.append("\t".join(cells))
        return "\n".join(lines)


def run_ablation(suite: str, cfg: TrainConfig, pairs: list[SyntheticPair] | None = None,
                 variants: list[str] | None = None, progress=None) -> AblationReport:
    """Train one model per variant on identical data and seeds; score the test split."""
    pairs = pairs if pairs is not None else get_pairs(cfg)
    _, _, test_idx = split_indices(len(pairs), cfg.data.seed)
    test = [pairs[i] for i in test_idx]
    rows = []
    for name, override in ablation_variants(suite):
        if variants is not None and name not in variants:
            continue
        if not cfg.train_isp and override.get("align_strategy") == "none" and not override.get("gcm", {}).get("spn", True):
            rows.append({"variant": name})
            continue
        vcfg = _deep_replace(cfg, override)
        ckpt = fit(vcfg, pairs, progress)
        models = ckpt.build_models()
        row = {"variant": name}
        row.update(heldout_metrics(models, test))
        if models.liteisp is not None:
            row["params"] = sum(p.numel() for p in models.liteisp.parameters())
        rows.append(row)
        log.info("ablation %s/%s: %s", suite, name, row)
    return AblationReport(suite, rows)
