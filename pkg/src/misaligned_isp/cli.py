"""Command-line entry point: synth-data, train, eval, infer, ablate.

Exit codes: 0 success, 2 usage or configuration error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import torch

from .errors import ConfigError, ISPError
from .evalmetrics import PROTOCOLS, evaluate, lpips_plugin
from .flowalign import align_target, make_estimator
from .harness import (
    SUITES,
    Checkpoint,
    TrainConfig,
    _deep_replace,
    desk_config,
    fit,
    get_pairs,
    load_config,
    prepare_batch,
    predict,
    run_ablation,
)
from .plots import plot_ablation, plot_eval, plot_history, plot_samples
from .rawdata import make_synthetic_dataset, pack_bayer, read_rawp, save_dataset, split_indices, write_png

log = logging.getLogger("misaligned_isp")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _config(args) -> TrainConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else desk_config()
    over = {}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "data", None):
        over["data"] = {"root": str(args.data)}
    if getattr(args, "epochs", None) is not None:
        over["optimizer"] = {"epochs": args.epochs}
    return _deep_replace(cfg, over)


def _emit(lines: str):
    sys.stdout.write(lines)
    sys.stdout.flush()


def cmd_synth_data(args) -> int:
    pairs = make_synthetic_dataset(
        args.n, args.size, args.flow, args.seed, max_shift=args.max_shift,
        shift_bias=tuple(args.shift_bias), vignette=args.vignette,
        color_jitter=args.color_jitter, noise_std=args.noise_std,
    )
    d = save_dataset(pairs, args.out)
    _emit(json.dumps({"pairs": len(pairs), "dir": str(d)}) + "\n")
    return EXIT_OK


def cmd_train(args) -> int:
    out = Path(args.out)
    cfg = _deep_replace(_config(args), {"out_dir": str(out)})
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True))

    def progress(rec):
        log.info("epoch %d: %s", rec["epoch"], {k: round(v, 4) for k, v in rec.items() if k != "epoch"})

    ck = fit(cfg, progress=progress)
    ck.save(out / "final")
    (out / "history.jsonl").write_text("".join(json.dumps(r) + "\n" for r in ck.history))
    if ck.history:
        plot_history(ck.history, out / "history.png")
    _emit(json.dumps({"epochs": ck.epoch, "checkpoint": str(out / "final"),
                      **({"last": ck.history[-1]} if ck.history else {})}) + "\n")
    return EXIT_OK


def _select(pairs, split: str, seed: int):
    if split == "all":
        return list(range(len(pairs)))
    tr, va, te = split_indices(len(pairs), seed)
    return {"train": tr, "val": va, "test": te}[split]


def cmd_eval(args) -> int:
    ck = Checkpoint.load(args.checkpoint)
    cfg = TrainConfig.from_dict(ck.config)
    if args.data:
        cfg = _deep_replace(cfg, {"data": {"root": str(args.data)}})
    models = ck.build_models()
    if models.liteisp is None:
        raise ConfigError("checkpoint has no ISP network to evaluate")
    pairs = get_pairs(cfg)
    idx = _select(pairs, args.split, cfg.data.seed)
    if not idx:
        raise ConfigError(f"split {args.split!r} is empty for {len(pairs)} pairs")
    sel = [pairs[i] for i in idx]
    out, gcm = predict(models, sel)
    targets = torch.stack([p.target for p in sel])
    if args.protocol == "align_gt_with_raw" and gcm is None:
        raise ConfigError("align_gt_with_raw needs a checkpoint trained with GCM")
    estimator = make_estimator(cfg.flow)
    lp_fn, lp_note = (None, "not requested")
    if args.lpips:
        lp_fn, lp_note = lpips_plugin(None if args.lpips == "default" else args.lpips)
    report = evaluate(out, targets, args.protocol, estimator, gcm_outputs=gcm,
                      lpips_fn=lp_fn, lpips_note=lp_note, eps=cfg.eps)
    text = report.to_jsonl()
    _emit(text)
    if args.out:
        d = Path(args.out)
        d.mkdir(parents=True, exist_ok=True)
        (d / f"eval_{args.protocol}.jsonl").write_text(text)
        plot_eval(report, d / f"eval_{args.protocol}.png")
        b = prepare_batch(sel)
        panels = {"x_hat": b.x_hat, "gcm": gcm, "isp": out, "target": b.y}
        if gcm is not None:
            panels["target_warped"] = align_target("with_gcm", b.y, estimator, gcm_out=gcm, eps=cfg.eps)[0]
        panels["aligned_gt"] = b.gt
        plot_samples(panels, d / "samples.png")
    return EXIT_OK


def cmd_infer(args) -> int:
    ck = Checkpoint.load(args.checkpoint)
    models = ck.build_models()
    if models.liteisp is None:
        raise ConfigError("checkpoint has no ISP network")
    models.eval()
    raw = read_rawp(args.raw)
    with torch.no_grad():
        rgb = models.liteisp(pack_bayer(raw))
    write_png(args.out, rgb)
    _emit(json.dumps({"input": str(args.raw), "output": str(args.out), "shape": list(rgb.shape)}) + "\n")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _config(args)
    report = run_ablation(args.suite, cfg, variants=args.variants)
    text = report.to_jsonl()
    _emit(text)
    log.info("\n%s", report.table())
    if args.out:
        d = Path(args.out)
        d.mkdir(parents=True, exist_ok=True)
        (d / f"ablation_{args.suite}.jsonl").write_text(text)
        (d / f"ablation_{args.suite}.txt").write_text(report.table() + "\n")
        rows = [r for r in report.rows if len(r) > 1]
        if rows:
            plot_ablation(rows, d / f"ablation_{args.suite}.png", title=args.suite)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="misaligned-isp", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth-data", help="generate a synthetic misaligned dataset")
    s.add_argument("--n", type=int, default=64)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--flow", choices=["zero", "translate", "affine", "smooth"], default="translate")
    s.add_argument("--max-shift", type=int, default=6)
    s.add_argument("--shift-bias", type=int, nargs=2, default=[0, 0], metavar=("DX", "DY"))
    s.add_argument("--vignette", type=float, default=0.3)
    s.add_argument("--color-jitter", type=float, default=0.0)
    s.add_argument("--noise-std", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth_data)

    s = sub.add_parser("train", help="train GCM + LiteISPNet")
    s.add_argument("--config", help="JSON config (default: desk preset)")
    s.add_argument("--data", help="dataset directory written by synth-data")
    s.add_argument("--epochs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="score a checkpoint under one protocol")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data")
    s.add_argument("--protocol", choices=PROTOCOLS, default="original")
    s.add_argument("--split", choices=["train", "val", "test", "all"], default="test")
    s.add_argument("--lpips", help="LPIPS weights path, or 'default' for the package weights")
    s.add_argument("--out", help="directory for the JSON-lines report and figures")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("infer", help="render a RAWP file to PNG")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--raw", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("ablate", help="run one ablation suite")
    s.add_argument("--suite", choices=SUITES, required=True)
    s.add_argument("--config")
    s.add_argument("--data")
    s.add_argument("--epochs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--variants", nargs="+", help="subset of variant names")
    s.add_argument("--out")
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ISPError, OSError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
