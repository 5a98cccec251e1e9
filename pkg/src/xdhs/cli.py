"""Command-line surface: synthetic data generation, training runs,
evaluation, FLOPs accounting, and split creation."""

from __future__ import annotations

import os

# honor the worker cap before numpy wires up its thread pools
_threads = os.environ.get("XDHS_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse
import sys

import numpy as np

from . import config as C
from . import data as D
from . import metrics as M
from . import model as mdl
from . import train as T
from .rng import Rng


class _OutputTracker:
    """Collects written paths so a failed command leaves nothing behind."""

    def __init__(self):
        self.paths = []

    def add(self, path) -> str:
        self.paths.append(path)
        return path

    def cleanup(self):
        for p in self.paths:
            try:
                os.remove(p)
            except OSError:
                pass


def _check_out(path, force: bool):
    if os.path.exists(path) and not force:
        raise FileExistsError(f"{path} exists; use --force to overwrite")


def _train_config(cfg: C.Config, phase: str) -> T.TrainConfig:
    step = cfg.get("train.lr_step")
    schedule = T.Schedule(
        base_lr=cfg.get("train.base_lr"),
        gamma=cfg.get("train.lr_gamma"),
        step_iters=step if step > 0 else None,
        total_iters=cfg.get("train.iters"),
    )
    bg = cfg.get("loss.background")
    return T.TrainConfig(
        phase=phase,
        k=cfg.get("model.k"),
        seed=cfg.get("seed"),
        schedule=schedule,
        hidden=cfg.get("model.hidden"),
        batch_size=cfg.get("train.batch_size"),
        loss_kind=cfg.get("loss.kind"),
        focal_gamma=cfg.get("loss.gamma"),
        focal_alpha=cfg.get("loss.alpha"),
        background_class=bg if bg > 0 else None,
        cascade=cfg.get("train.cascade"),
        cascade_iters=cfg.get("train.cascade_iters"),
        momentum=cfg.get("train.momentum"),
        weight_decay=cfg.get("train.weight_decay"),
        augment=cfg.get("train.augment"),
        log_eval=cfg.get("train.log_eval"),
    )


def cmd_gen_synthetic(args, out: _OutputTracker) -> int:
    cfg = C.apply_overrides(C.parse_config(args.config), args.set)
    names = cfg.domain_names()
    target = cfg.get("target")
    if target and target not in names:
        names.append(target)
    if not names:
        raise C.ConfigError("config lists no domains")
    os.makedirs(args.out_dir, exist_ok=True)
    seed = cfg.get("seed")
    sig_seed = cfg.get("synth.signature_seed")
    if sig_seed < 0:
        sig_seed = seed
    for name in names:
        base = os.path.join(args.out_dir, name)
        for ext in (".hsc", ".hsl", ".split"):
            _check_out(base + ext, args.force)
    for name in names:
        spec = D.DomainDescriptor(
            name=name,
            bands=cfg.domain_field(name, "bands"),
            classes=cfg.domain_field(name, "classes"),
            spectral_range=(cfg.domain_field(name, "range_low"),
                            cfg.domain_field(name, "range_high")),
        )
        cube, labels = D.gen_synthetic(
            spec, H=cfg.get("synth.height"), W=cfg.get("synth.width"),
            blob_count=cfg.get("synth.blob_count"),
            noise_std=cfg.get("synth.noise_std"), seed=seed,
            unlabeled_fraction=cfg.get("synth.unlabeled_fraction"),
            signature_seed=sig_seed)
        split = D.make_split(labels, cfg.get("split.per_class"), seed)
        base = os.path.join(args.out_dir, name)
        D.write_hsc(cube, out.add(base + ".hsc"))
        D.write_hsl(labels, out.add(base + ".hsl"))
        D.write_split(split, out.add(base + ".split"))
        counts = [int(np.count_nonzero(labels.labels == c))
                  for c in range(1, labels.C + 1)]
        print(f"{name}: H={labels.H} W={labels.W} B={cube.B} C={labels.C} "
              f"labeled={sum(counts)} per-class={counts}")
    return 0


def cmd_split(args, out: _OutputTracker) -> int:
    labels = D.read_hsl(args.labels)
    split = D.make_split(labels, args.per_class, args.seed)
    _check_out(args.out, args.force)
    D.write_split(split, out.add(args.out))
    print(f"train={len(split.train)} test={len(split.test)}")
    return 0


def cmd_pretrain(args, out: _OutputTracker) -> int:
    cfg = C.apply_overrides(C.parse_config(args.config), args.set)
    tcfg = _train_config(cfg, "pretrain")
    names = cfg.domain_names()
    if not names:
        raise C.ConfigError("config lists no source domains")
    domains = [T.load_domain(args.data_dir, n) for n in names]
    os.makedirs(args.out_dir, exist_ok=True)
    ckpt_path = os.path.join(args.out_dir, "pretrain.ckpt")
    csv_path = os.path.join(args.out_dir, "pretrain_loss.csv")
    _check_out(ckpt_path, args.force)
    _check_out(csv_path, args.force)
    model, rows = T.run_pretrain(domains, tcfg)
    ckpt = T.checkpoint_from_model(model, phase="pretrain", seed=tcfg.seed,
                                   iteration=len(rows))
    for i, d in enumerate(domains):
        ckpt.meta[f"domain.{i}.name"] = d.name
    T.save_checkpoint(ckpt, out.add(ckpt_path))
    T.write_csv(out.add(csv_path), T.PRETRAIN_CSV_HEADER, rows)
    print(f"wrote {ckpt_path} ({len(rows)} iterations, final loss {rows[-1][2]:.6g})")
    return 0


def _cmd_target(args, out: _OutputTracker, phase: str) -> int:
    cfg = C.apply_overrides(C.parse_config(args.config), args.set)
    tcfg = _train_config(cfg, phase)
    target = cfg.get("target")
    if not target:
        raise C.ConfigError("config must set `target` for this command")
    domain = T.load_domain(args.data_dir, target)
    os.makedirs(args.out_dir, exist_ok=True)
    stem = "finetune" if phase == "finetune" else "scratch"
    ckpt_path = os.path.join(args.out_dir, f"{stem}.ckpt")
    csv_path = os.path.join(args.out_dir, f"{stem}_curve.csv")
    _check_out(ckpt_path, args.force)
    _check_out(csv_path, args.force)
    if phase == "finetune":
        pretrained = T.load_checkpoint(args.from_ckpt)
        model, rows = T.run_finetune(pretrained, domain, tcfg)
    else:
        model, rows = T.run_scratch(domain, tcfg)
    ckpt = T.checkpoint_from_model(model, phase=phase, seed=tcfg.seed,
                                   iteration=len(rows))
    ckpt.meta["domain.0.name"] = domain.name
    T.save_checkpoint(ckpt, out.add(ckpt_path))
    T.write_csv(out.add(csv_path), T.CURVE_CSV_HEADER, rows)
    final = rows[-1]
    print(f"wrote {ckpt_path}; final loss {final[2]:.6g}, "
          f"test OA {100.0 * final[3]:.1f}%")
    return 0


def cmd_evaluate(args, out: _OutputTracker) -> int:
    ckpt = T.load_checkpoint(args.checkpoint)
    model = T.model_from_checkpoint(ckpt)
    cube = D.read_hsc(args.cube)
    labels = D.read_hsl(args.labels)
    split = D.read_split(args.split)
    pixels = split.test if args.subset == "test" else split.train
    rows, cols = D.coords_to_arrays(pixels)
    std_cube, _ = D.standardize(cube)
    rep = M.evaluate(model, std_cube.values, labels.labels, rows, cols,
                     domain_index=args.domain if hasattr(model, "domains") else None)
    text = M.report_text(rep)
    if args.out:
        _check_out(args.out, args.force)
        with open(out.add(args.out), "w", encoding="utf-8") as f:
            f.write(text)
    sys.stdout.write(text)
    print(f"OA = {100.0 * rep.oa:.1f}%")
    return 0


def cmd_flops(args, out: _OutputTracker) -> int:
    if args.arch == "backbone":
        specs = mdl.backbone_layer_specs(args.bands, args.classes, args.k)
    elif args.arch == "contextual":
        specs = mdl.contextual_layer_specs(args.bands, args.classes, args.k)
    else:
        raise ValueError(f"unknown architecture {args.arch!r}")
    print(mdl.flops(specs, args.H, args.W))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="xdhs",
        description="Cross-domain hyperspectral classification training engine")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", required=True)
            sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                            help="override a config value")
        sp.add_argument("--force", action="store_true",
                        help="overwrite existing outputs")

    sp = sub.add_parser("gen-synthetic", help="generate synthetic domains")
    common(sp)
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(fn=cmd_gen_synthetic)

    sp = sub.add_parser("split", help="create a train/test split file")
    sp.add_argument("--labels", required=True)
    sp.add_argument("--per-class", type=int, required=True)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--force", action="store_true")
    sp.set_defaults(fn=cmd_split)

    sp = sub.add_parser("pretrain", help="cross-domain pretraining")
    common(sp)
    sp.add_argument("--data-dir", required=True)
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(fn=cmd_pretrain)

    sp = sub.add_parser("finetune", help="finetune from a pretrained checkpoint")
    common(sp)
    sp.add_argument("--from", dest="from_ckpt", required=True)
    sp.add_argument("--data-dir", required=True)
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(fn=lambda a, o: _cmd_target(a, o, "finetune"))

    sp = sub.add_parser("train-scratch", help="train a backbone from scratch")
    common(sp)
    sp.add_argument("--data-dir", required=True)
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(fn=lambda a, o: _cmd_target(a, o, "scratch"))

    sp = sub.add_parser("evaluate", help="evaluate a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--cube", required=True)
    sp.add_argument("--labels", required=True)
    sp.add_argument("--split", required=True)
    sp.add_argument("--subset", choices=("train", "test"), default="test")
    sp.add_argument("--domain", type=int, default=0,
                    help="domain index for cross-domain checkpoints")
    sp.add_argument("--out", default="")
    sp.add_argument("--force", action="store_true")
    sp.set_defaults(fn=cmd_evaluate)

    sp = sub.add_parser("flops", help="FLOPs of an architecture spec")
    sp.add_argument("--arch", choices=("backbone", "contextual"), required=True)
    sp.add_argument("--H", type=int, required=True)
    sp.add_argument("--W", type=int, required=True)
    sp.add_argument("--bands", type=int, required=True)
    sp.add_argument("--classes", type=int, required=True)
    sp.add_argument("--k", type=int, required=True)
    sp.set_defaults(fn=cmd_flops)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    tracker = _OutputTracker()
    try:
        return args.fn(args, tracker)
    except Exception as e:  # one-line diagnostic, partial outputs removed
        tracker.cleanup()
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
