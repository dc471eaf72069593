"""Command line entry point: ``egojoint <verb> ...``.

Configuration is a JSON file (``--config``) plus ``--set key.sub=value``
overrides; relative paths resolve under $EGOJOINT_RUN_ROOT (default ./runs).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import pipeline as pl
from .config import ExperimentConfig, apply_overrides

log = logging.getLogger("egojoint")


def _config(args, stage: str, extra: list[str] | None = None) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    overrides = [f'stage="{stage}"'] + list(extra or []) + list(args.set or [])
    if getattr(args, "data", None):
        overrides.append(f"data={json.dumps(str(args.data))}")
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    return apply_overrides(cfg, overrides)


def cmd_gen_data(args) -> int:
    from .synth import SynthConfig, TEMPLATE_KINDS, generate_dataset, write_dataset

    templates = args.templates.split(",") if args.templates else [t for t in TEMPLATE_KINDS if t != "stand-still"]
    cfg = SynthConfig(image_size=args.image_size)
    samples = generate_dataset(templates, args.count, args.scene_seed, args.seed, cfg)
    out = pl.resolve(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(samples, out, cfg)
    print(f"wrote {len(samples)} samples to {out}")
    return 0


def cmd_train_vae(args) -> int:
    cfg = _config(args, "vae")
    path = pl.run_stage1(cfg, args.out, args.resume, args.stop_at)
    print(path)
    return 0


def cmd_train_dit(args) -> int:
    extra = ["model.use_mask=false"] if args.no_mask else []
    if args.stage == 2:
        cfg = _config(args, "t2m_pretrain", extra)
        path = pl.run_stage2(cfg, args.init, args.out, args.resume, args.stop_at)
    else:
        cfg = _config(args, "joint", extra)
        path = pl.run_stage3(cfg, args.init, args.out, args.resume, stop_at=args.stop_at)
    print(path)
    return 0


def cmd_sample(args) -> int:
    from PIL import Image

    model, vae, stats, cfg = pl.load_generator(args.ckpt)
    cfg = apply_overrides(cfg, list(args.set or []))
    samples, skeleton, _ = pl.load_samples(args.init_sample)
    if args.index is not None:
        if not 0 <= args.index < len(samples):
            raise SystemExit(f"--index {args.index} outside the {len(samples)}-sample dataset")
        samples = [samples[args.index]]
    if args.prompt:
        from dataclasses import replace

        samples = [replace(s, text=args.prompt) for s in samples]
    gen = pl.generate(model, vae, stats, cfg, samples, args.mode, skeleton, seed=args.seed, steps=args.steps)
    out = pl.resolve(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "mode": args.mode,
        "ckpt": str(args.ckpt),
        "data": str(args.init_sample),
        "index": args.index,
        "seed": args.seed,
        "steps": args.steps or cfg.sampling.steps,
        "representation": cfg.representation,
        "fps": samples[0].motion.fps,
        "skeleton": skeleton.to_dict(),
        "texts": [s.text for s in samples],
    }
    pl.write_generated(out / "generated.egtw", gen, meta)
    for k, g in enumerate(gen):
        if g.video is not None:
            strip = np.concatenate(list(g.video), axis=1)
            Image.fromarray(strip).save(out / f"video_{k:03d}.png")
    (out / "metadata.json").write_text(json.dumps({k: v for k, v in meta.items() if k != "skeleton"}, indent=2))
    print(out)
    return 0


def _provider(args):
    from . import metrics as mt

    if args.pose_provider == "gt":
        return mt.gt_pose_provider
    if args.pose_provider == "perturbed":
        return mt.perturbed_pose_provider(args.sigma_m, args.sigma_deg, args.seed or 0)
    if not args.pose_dir:
        raise SystemExit("--pose-provider file needs --pose-dir")
    return mt.file_pose_provider(args.pose_dir)


def cmd_evaluate(args) -> int:
    samples, skeleton, _ = pl.load_samples(args.data)
    gen_path = pl.resolve(args.gen)
    if gen_path.is_dir() and not (gen_path / "generated.egtw").exists():
        agg = pl.evaluate_run(gen_path, args.data, args.mode, args.seed or 0, args.steps, _provider(args))
        rows = None
    else:
        f = gen_path / "generated.egtw" if gen_path.is_dir() else gen_path
        gen, meta = pl.read_generated(f)
        if meta.get("index") is not None:
            samples = [samples[meta["index"]]]
        metrics = tuple(m.strip() for m in args.metrics.split(","))
        rows = pl.evaluate_samples(samples, gen, skeleton, _provider(args), metrics=metrics)
        agg = pl.aggregate(rows, samples if ("fid" in metrics or "rprec" in metrics) else None)
    if args.report:
        out = pl.resolve(args.report)
        out.parent.mkdir(parents=True, exist_ok=True)
        pl.write_rows(out, (rows or []) + [{"index": "mean", **agg}])
    print(json.dumps(agg, indent=2))
    return 0


def cmd_report(args) -> int:
    runs = {}
    for item in args.runs:
        name, _, d = item.partition("=")
        runs[name if d else Path(name).name] = d or name
    rows = pl.report(runs, args.out, args.mode)
    for r in rows:
        print(",".join(str(r[k]) for k in r))
    return 0


def cmd_mask_dump(args) -> int:
    from .mask import build_interaction_mask

    cfg = _config(args, "joint")
    m = cfg.model
    mask = build_interaction_mask(m.layout(True), m.compression, m.rate_ratio, enabled=m.use_mask)
    out = pl.resolve(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    mask.to_csv(out.with_suffix(".csv"))
    mask.to_png(out.with_suffix(".png"))
    print(out.with_suffix(".csv"), out.with_suffix(".png"))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="egojoint", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp):
        sp.add_argument("--config", help="experiment config JSON")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override (repeatable)")
        sp.add_argument("--seed", type=int)

    g = sub.add_parser("gen-data", help="render a synthetic text/video/motion dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, default=8)
    g.add_argument("--templates", help="comma-separated action templates")
    g.add_argument("--scene-seed", type=int, default=0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--image-size", type=int, default=64)
    g.set_defaults(fn=cmd_gen_data)

    v = sub.add_parser("train-vae", help="stage 1: motion VAE")
    common(v)
    v.add_argument("--data")
    v.add_argument("--out", required=True)
    v.add_argument("--resume")
    v.add_argument("--stop-at", type=int, help="stop at this step, keeping the full schedule (resumable)")
    v.set_defaults(fn=cmd_train_vae)

    d = sub.add_parser("train-dit", help="stage 2 (text-to-motion) or 3 (joint)")
    common(d)
    d.add_argument("--stage", type=int, choices=(2, 3), required=True)
    d.add_argument("--data")
    d.add_argument("--init", required=True, help="VAE checkpoint for stage 2, stage-2 checkpoint for stage 3")
    d.add_argument("--out", required=True)
    d.add_argument("--resume")
    d.add_argument("--stop-at", type=int, help="stop at this step, keeping the full schedule (resumable)")
    d.add_argument("--no-mask", action="store_true", help="full attention (w/o IM ablation)")
    d.set_defaults(fn=cmd_train_dit)

    s = sub.add_parser("sample", help="reverse diffusion in one of the three modes")
    s.add_argument("--mode", choices=("t2vm", "tm2v", "tv2m"), required=True)
    s.add_argument("--ckpt", required=True)
    s.add_argument("--init-sample", required=True, help="dataset supplying first frames and conditions")
    s.add_argument("--index", type=int, help="single sample index (default: all)")
    s.add_argument("--prompt", help="replace the dataset text")
    s.add_argument("--steps", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_sample)

    e = sub.add_parser("evaluate", help="consistency and distribution metrics")
    e.add_argument("--data", required=True)
    e.add_argument("--gen", required=True, help="sample output (dir or file) or a trained run dir")
    e.add_argument("--metrics", default="trans,rot,hand,fid,rprec")
    e.add_argument("--pose-provider", choices=("gt", "perturbed", "file"), default="gt")
    e.add_argument("--pose-dir")
    e.add_argument("--sigma-m", type=float, default=0.05)
    e.add_argument("--sigma-deg", type=float, default=2.0)
    e.add_argument("--mode", default="tv2m", help="sampling mode when --gen is a run dir")
    e.add_argument("--steps", type=int)
    e.add_argument("--seed", type=int)
    e.add_argument("--report")
    e.set_defaults(fn=cmd_evaluate)

    r = sub.add_parser("report", help="variant comparison table from evaluated runs")
    r.add_argument("--runs", nargs="+", required=True, metavar="NAME=DIR")
    r.add_argument("--out", required=True)
    r.add_argument("--mode", default="tv2m")
    r.set_defaults(fn=cmd_report)

    m = sub.add_parser("mask-dump", help="write the interaction mask as CSV and PNG")
    common(m)
    m.add_argument("--out", required=True, help="output path prefix")
    m.set_defaults(fn=cmd_mask_dump)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
