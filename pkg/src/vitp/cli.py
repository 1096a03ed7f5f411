"""Command-line entry point: pretrain, export, finetune, eval, sweep,
gradcheck, bench.

Every command with any randomness demands an explicit seed (flag or config
key); there is no wall-clock seeding anywhere. Outputs land in
runs/<config-digest>/ so re-running identical inputs overwrites identical
bytes.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from . import checkpoint as ck
from . import harness, runs
from . import trainer as tr
from .bench import run_bench
from .blocks import param
from .gradcheck import standard_op_battery
from .pipeline import VrlConfigError
from .segmentation import (FinetuneConfig, evaluate_head, finetune_segmentation,
                           make_seg_split)
from .tensor import DivergenceError


def _resolve_config(args) -> tr.TrainConfig:
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as f:
            text = f.read()
        cfg = tr.config_from_text(text, require_seed=args.seed is None)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        return cfg
    if args.seed is None:
        raise ValueError("--seed is required (no wall-clock seeding)")
    return tr.preset_config(args.preset, seed=args.seed)


def cmd_pretrain(args) -> int:
    cfg = _resolve_config(args)
    digest = tr.config_digest(cfg, extra="pretrain")
    run_dir = runs.create_run_dir(args.out, digest)
    ckpt_path = os.path.join(run_dir, "ckpt.bin")
    curve_path = os.path.join(run_dir, "curve.csv")
    manifest = runs.start_manifest(run_dir, "pretrain", digest, cfg.seed,
                                   [ckpt_path, curve_path])
    tr.pretrain(cfg, curve_path=curve_path, checkpoint_path=ckpt_path,
                resume=args.resume, log_every=args.log_every,
                stop_after=args.stop_after)
    runs.finish_manifest(run_dir, manifest)
    print(run_dir)
    return 0


def cmd_export(args) -> int:
    arrays, _m, _v, _s, meta = ck.load_checkpoint(args.ckpt)
    cfg = tr.config_from_meta(meta)
    vit_cfg, hw = _vit_cfg_of(cfg)
    params = {n: param(a, dtype=a.dtype) for n, a in arrays.items()
              if n.startswith("vit.")}
    out = args.out or (os.path.splitext(args.ckpt)[0] + ".backbone.bin")
    ck.export_backbone(out, params, vit_cfg, hw)
    print(out)
    return 0


def _vit_cfg_of(cfg: tr.TrainConfig):
    from .vit import VitConfig

    return (VitConfig(patch_size=cfg.patch_size, embed_dim=cfg.vit_dim,
                      depth=cfg.vit_depth, heads=cfg.vit_heads),
            (cfg.image_size, cfg.image_size))


def _ft_config(args) -> FinetuneConfig:
    return FinetuneConfig(steps=args.steps, seed=args.seed,
                          freeze_backbone=args.freeze_backbone)


def cmd_finetune(args) -> int:
    backbone, vit_cfg, hw = ck.load_backbone(args.backbone)
    ft = _ft_config(args)
    train = make_seg_split(args.seed, count=args.train_count, size=hw[0])
    eval_set = make_seg_split(args.seed, count=args.eval_count, size=hw[0],
                              split="eval")
    if args.fraction < 1.0:
        train = harness.fraction_subset(train, args.fraction, args.seed)
    digest = ft.digest(extra=f"finetune:{args.backbone}:{args.fraction}")
    run_dir = runs.create_run_dir(args.out, digest)
    head_path = os.path.join(run_dir, "head.bin")
    tuned_path = os.path.join(run_dir, "backbone_tuned.bin")
    manifest = runs.start_manifest(run_dir, "finetune", digest, args.seed,
                                   [head_path, tuned_path])
    head, report = finetune_segmentation(backbone, vit_cfg, train, eval_set, ft)
    ck.export_backbone(tuned_path, backbone, vit_cfg, hw)
    ck.save_head(head_path, head, {
        "miou": repr(report.value), "seed": args.seed,
        "eval_count": args.eval_count, "train_count": args.train_count,
        "fraction": args.fraction, "steps": args.steps,
        "freeze_backbone": int(args.freeze_backbone),
        "excluded": ",".join(str(c) for c in report.excluded),
        "backbone": os.path.abspath(args.backbone),
        "backbone_tuned": os.path.abspath(tuned_path),
    })
    runs.finish_manifest(run_dir, manifest)
    print(f"{head_path} mIoU={report.value!r}")
    return 0


def cmd_eval(args) -> int:
    backbone, vit_cfg, hw = ck.load_backbone(args.backbone)
    head, meta = ck.load_head(args.head)
    eval_set = make_seg_split(args.seed, count=int(meta["eval_count"]),
                              size=hw[0], split="eval")
    ft = FinetuneConfig(seed=args.seed)
    excluded = tuple(int(c) for c in meta.get("excluded", "").split(",") if c)
    report = evaluate_head(backbone, vit_cfg, head, eval_set, ft, exclude=excluded)
    stored = float(meta["miou"])
    match = report.value == stored
    print(f"mIoU={report.value!r} stored={stored!r} match={match}")
    return 0 if match else 1


def cmd_sweep(args) -> int:
    cfg = _resolve_config(args)
    cfg = replace(cfg, total_steps=args.total_steps)
    seeds = tuple(int(s) for s in args.seeds.split(",")) if args.seeds else (cfg.seed,)
    digest = tr.config_digest(cfg, extra=f"sweep:{args.kind}:{seeds}")
    run_dir = runs.create_run_dir(args.out, digest)
    train = make_seg_split(cfg.seed, count=args.train_count, size=cfg.image_size)
    eval_set = make_seg_split(cfg.seed, count=args.eval_count,
                              size=cfg.image_size, split="eval")
    ft = FinetuneConfig(steps=args.finetune_steps, seed=cfg.seed)
    ctx = harness.SweepContext(base_cfg=cfg, train=train, eval_set=eval_set, ft=ft)
    out_csv = os.path.join(run_dir, f"sweep_{args.kind}.csv")
    out_svg = os.path.join(run_dir, f"sweep_{args.kind}.svg")
    manifest = runs.start_manifest(run_dir, f"sweep:{args.kind}", digest,
                                   cfg.seed, [out_csv, out_svg])
    if args.kind == "vrl":
        rows = harness.sweep_vrl(ctx, out_csv, seeds=seeds)
    elif args.kind == "steps":
        rows = harness.sweep_steps(ctx, out_csv, seeds=seeds)
    elif args.kind == "lmsize":
        rows = harness.sweep_lm_size(ctx, out_csv, seeds=seeds)
    elif args.kind == "recipe":
        rows = harness.sweep_recipe(ctx, out_csv, seeds=seeds)
    else:
        raise ValueError(f"unknown sweep kind {args.kind!r}")
    harness.write_rows_svg(out_svg, rows, title=f"{args.kind} sweep (mIoU)")
    runs.finish_manifest(run_dir, manifest)
    print(out_csv)
    return 0


def cmd_gradcheck(args) -> int:
    results = standard_op_battery(eps=args.eps, seed=args.seed or 0)
    threshold = 1e-4
    failed = False
    print(f"{'op':<24}{'max rel err':>14}  status")
    for name, rep in results:
        ok = rep.max_rel_err <= threshold
        failed |= not ok
        print(f"{name:<24}{rep.max_rel_err:>14.3e}  {'ok' if ok else 'FAIL'}")
    return 1 if failed else 0


def cmd_bench(args) -> int:
    run_bench(repeats=args.repeats)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vitp",
                                description="desk-scale instruction pretraining "
                                            "for vision encoders")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed_required=False):
        sp.add_argument("--seed", type=int, default=None, required=seed_required)
        sp.add_argument("--out", default="runs")

    sp = sub.add_parser("pretrain", help="run instruction pretraining")
    common(sp)
    sp.add_argument("--config", help="key=value config file")
    sp.add_argument("--preset", default="desk-default",
                    choices=sorted(tr.PRESETS))
    sp.add_argument("--resume", help="checkpoint to continue from")
    sp.add_argument("--stop-after", type=int, default=None,
                    help="interrupt after this step (schedule unchanged)")
    sp.add_argument("--log-every", type=int, default=0)
    sp.set_defaults(fn=cmd_pretrain)

    sp = sub.add_parser("export", help="extract the vision backbone")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--out")
    sp.set_defaults(fn=cmd_export)

    sp = sub.add_parser("finetune", help="segmentation transfer")
    common(sp, seed_required=True)
    sp.add_argument("--backbone", required=True)
    sp.add_argument("--steps", type=int, default=500)
    sp.add_argument("--train-count", type=int, default=48)
    sp.add_argument("--eval-count", type=int, default=60)
    sp.add_argument("--fraction", type=float, default=1.0)
    sp.add_argument("--freeze-backbone", action="store_true")
    sp.set_defaults(fn=cmd_finetune)

    sp = sub.add_parser("eval", help="re-evaluate a stored head")
    common(sp, seed_required=True)
    sp.add_argument("--backbone", required=True)
    sp.add_argument("--head", required=True)
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("sweep", help="ablation sweeps")
    common(sp)
    sp.add_argument("--kind", required=True,
                    choices=("vrl", "steps", "lmsize", "recipe"))
    sp.add_argument("--config")
    sp.add_argument("--preset", default="desk-default",
                    choices=sorted(tr.PRESETS))
    sp.add_argument("--seeds", help="comma-separated seed list")
    sp.add_argument("--total-steps", type=int, default=300)
    sp.add_argument("--finetune-steps", type=int, default=300)
    sp.add_argument("--train-count", type=int, default=48)
    sp.add_argument("--eval-count", type=int, default=60)
    sp.set_defaults(fn=cmd_sweep)

    sp = sub.add_parser("gradcheck", help="finite-difference gradient table")
    sp.add_argument("--eps", type=float, default=5e-4)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(fn=cmd_gradcheck)

    sp = sub.add_parser("bench", help="numba vs numpy kernel benchmark")
    sp.add_argument("--repeats", type=int, default=30)
    sp.set_defaults(fn=cmd_bench)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (VrlConfigError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error: missing file: {e}", file=sys.stderr)
        return 1
    except (ck.CheckpointFormatError, DivergenceError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
