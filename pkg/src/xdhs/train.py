"""SGD optimization and the three training runs (cross-domain pretraining
with optional two-step cascade, finetuning from a transplant, training from
scratch), plus binary checkpoint persistence."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import data as D
from . import metrics as M
from . import model as mdl
from . import ops
from .rng import Rng
from .tensor import Tape, Tensor, backward

_CKPT_MAGIC = b"XDHSCK1\x00"


class TrainingDiverged(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# optimizer and schedule

@dataclass
class SgdState:
    momentum: float = 0.9
    weight_decay: float = 0.0005
    velocity: dict = field(default_factory=dict)


@dataclass
class Schedule:
    base_lr: float
    gamma: float = 0.1
    step_iters: Optional[int] = None  # absent -> constant lr
    total_iters: int = 100

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0,1]")


def lr_at(schedule: Schedule, it: int) -> float:
    if not 0 <= it < schedule.total_iters:
        raise ValueError(f"iteration {it} outside schedule")
    if schedule.step_iters is None:
        return schedule.base_lr
    return schedule.base_lr * schedule.gamma ** (it // schedule.step_iters)


def sgd_step(params: dict, grads: dict, state: SgdState, base_lr: float,
             groups: Sequence[mdl.ParamGroup],
             active: Optional[set] = None) -> None:
    """One momentum-SGD update: g += wd*w (conv groups only);
    v = momentum*v - lr_eff*g; w += v."""
    for group in groups:
        lr_eff = base_lr * group.lr_multiplier
        for name in group.params:
            if active is not None and name not in active:
                continue
            w = params[name]
            g = grads.get(name)
            if g is None:
                g = np.zeros_like(w.data)
            if not np.all(np.isfinite(g)):
                raise TrainingDiverged(f"non-finite gradient for parameter {name}")
            g = g.astype(w.dtype, copy=False)
            if group.weight_decay_enabled and state.weight_decay:
                g = g + np.asarray(state.weight_decay, dtype=w.dtype) * w.data
            v = state.velocity.get(name)
            if v is None:
                v = np.zeros_like(w.data)
            v = np.asarray(state.momentum, dtype=w.dtype) * v - np.asarray(lr_eff, dtype=w.dtype) * g
            state.velocity[name] = v
            w.data[...] = w.data + v


# ---------------------------------------------------------------------------
# domains and configuration

@dataclass
class Domain:
    name: str
    cube: D.HyperCube
    labels: D.LabelMap
    split: D.Split


def load_domain(data_dir, name: str) -> Domain:
    base = os.path.join(data_dir, name)
    return Domain(
        name=name,
        cube=D.read_hsc(base + ".hsc"),
        labels=D.read_hsl(base + ".hsl"),
        split=D.read_split(base + ".split"),
    )


@dataclass
class TrainConfig:
    phase: str  # pretrain | finetune | scratch
    k: int
    seed: int
    schedule: Schedule
    hidden: int = mdl.HIDDEN
    batch_size: int = 256  # pretrain mini-batch per domain; targets use full batch
    loss_kind: str = "focal"  # focal | softmax
    focal_gamma: float = 5.0
    focal_alpha: float = 0.25
    background_class: Optional[int] = None
    cascade: str = "off"  # auto | off | on
    cascade_iters: int = 1000
    momentum: float = 0.9
    weight_decay: float = 0.0005
    augment: bool = True
    log_eval: bool = True
    dtype: object = np.float32


class _TrainDomain:
    """Per-domain training state: standardized mirror variants, pixel sets,
    and a private sampling stream keyed by (seed, domain name)."""

    def __init__(self, domain: Domain, seed: int, augment: bool, dtype):
        self.name = domain.name
        self.labels_orig = domain.labels.labels
        self.C = domain.labels.C
        std_cube, _ = D.standardize(domain.cube)
        self.H, self.W = std_cube.H, std_cube.W
        self.n_variants = D.mirror_variant_count(self.H, self.W) if augment else 1
        self.cubes = [D.apply_variant(std_cube.values, v).astype(dtype)
                      for v in range(self.n_variants)]
        self.label_maps = [D.apply_variant(self.labels_orig, v)
                           for v in range(self.n_variants)]
        self.train_rows, self.train_cols = D.coords_to_arrays(domain.split.train)
        self.test_rows, self.test_cols = D.coords_to_arrays(domain.split.test)
        self.n_train = self.train_rows.size
        self.labeled_count = int(np.count_nonzero(self.labels_orig))
        self.rng = Rng.derive(seed, f"train/{domain.name}")

    def pick_variant(self) -> int:
        if self.n_variants == 1:
            return 0
        return self.rng.randint_below(self.n_variants)

    def batch_mask(self, variant: int, batch_size: Optional[int]):
        """Training pixel mask in the mirrored frame; None = full train set."""
        if batch_size is None or batch_size >= self.n_train:
            rows, cols = self.train_rows, self.train_cols
        else:
            idx = self.rng.sample_without_replacement(self.n_train, batch_size)
            rows, cols = self.train_rows[idx], self.train_cols[idx]
        return D.transform_coords(rows, cols, self.H, self.W, variant)


def _domain_loss(tape: Tape, logits: Tensor, td: _TrainDomain, variant: int,
                 rows, cols, cfg: TrainConfig, kind: str) -> Tensor:
    labels = td.label_maps[variant]
    if kind == "softmax":
        return ops.softmax_ce_loss(tape, logits, labels, rows, cols)
    if kind == "focal":
        return ops.focal_loss(tape, logits, labels, rows, cols,
                              cfg.focal_gamma, cfg.focal_alpha,
                              cfg.background_class)
    raise ValueError(f"unknown loss kind {kind!r}")


def _active_param_names(model: mdl.CrossDomainModel, domain_indices) -> set:
    sections = {"shared"} | {f"inlet{i}" for i in domain_indices} \
        | {f"head{i}" for i in domain_indices}
    return {n for n in model.named_parameters() if model.section_of(n) in sections}


def pretrain_iteration(model: mdl.CrossDomainModel, tds, active_indices,
                       cfg: TrainConfig, state: SgdState, groups, lr: float) -> float:
    """One cross-domain iteration: per-domain mini-batch losses summed,
    one backward pass, one SGD step over the active parameter groups."""
    tape = Tape()
    total = None
    for i in active_indices:
        td = tds[i]
        v = td.pick_variant()
        rows, cols = td.batch_mask(v, cfg.batch_size)
        logits = model.forward_domain(tape, i, td.cubes[v], mode="train")
        loss = _domain_loss(tape, logits, td, v, rows, cols, cfg, "softmax")
        total = loss if total is None else ops.add(tape, total, loss)
    params = model.named_parameters()
    grads_by_tensor = backward(tape, total, params=params.values())
    grads = {name: grads_by_tensor[t] for name, t in params.items()}
    active = _active_param_names(model, active_indices) \
        if len(active_indices) < model.K else None
    sgd_step(params, grads, state, lr, groups, active=active)
    return float(total.data)


def run_pretrain(domains: Sequence[Domain], cfg: TrainConfig):
    """Cross-domain pretraining; returns (model, csv rows [iter, lr, loss])."""
    if cfg.phase != "pretrain":
        raise ValueError("config phase must be 'pretrain'")
    if not domains:
        raise ValueError("pretraining needs at least one domain")
    rng = Rng.derive(cfg.seed, "init")
    specs = [(d.cube.B, d.labels.C) for d in domains]
    model = mdl.build_cross_domain(specs, cfg.k, rng, hidden=cfg.hidden,
                                   dtype=cfg.dtype)
    tds = [_TrainDomain(d, cfg.seed, cfg.augment, cfg.dtype) for d in domains]
    state = SgdState(momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    rows = []
    it = 0

    sizes = [td.labeled_count for td in tds]
    order = sorted(range(len(tds)), key=lambda i: (-sizes[i], i))
    engage = False
    if len(tds) > 1:
        if cfg.cascade == "on":
            engage = True
        elif cfg.cascade == "auto":
            engage = sizes[order[0]] >= 2 * sizes[order[1]]
    if engage:
        largest = order[0]
        groups1 = mdl.param_groups(model, "pretrain", 1)
        for _ in range(cfg.cascade_iters):
            loss = pretrain_iteration(model, tds, [largest], cfg, state,
                                      groups1, cfg.schedule.base_lr)
            rows.append((it, cfg.schedule.base_lr, loss))
            it += 1

    groups = mdl.param_groups(model, "pretrain", len(tds))
    all_idx = list(range(len(tds)))
    for i in range(cfg.schedule.total_iters):
        lr = lr_at(cfg.schedule, i)
        loss = pretrain_iteration(model, tds, all_idx, cfg, state, groups, lr)
        rows.append((it, lr, loss))
        it += 1
    return model, rows


def _run_target(bb: mdl.Backbone, domain: Domain, cfg: TrainConfig):
    """Full-batch single-domain training loop shared by finetune/scratch."""
    td = _TrainDomain(domain, cfg.seed, cfg.augment, cfg.dtype)
    groups = mdl.param_groups(bb, cfg.phase, 1)
    state = SgdState(momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    params = bb.named_parameters()
    rows = []
    for i in range(cfg.schedule.total_iters):
        lr = lr_at(cfg.schedule, i)
        tape = Tape()
        v = td.pick_variant()
        rows_px, cols_px = td.batch_mask(v, None)
        logits = bb.forward(tape, td.cubes[v], mode="train")
        loss = _domain_loss(tape, logits, td, v, rows_px, cols_px, cfg, cfg.loss_kind)
        grads_by_tensor = backward(tape, loss, params=params.values())
        grads = {name: grads_by_tensor[t] for name, t in params.items()}
        sgd_step(params, grads, state, lr, groups)
        if cfg.log_eval:
            rep = M.evaluate(bb, td.cubes[0], td.labels_orig,
                             td.test_rows, td.test_cols)
            rows.append((i, lr, float(loss.data), rep.oa, rep.aa, rep.kappa))
        else:
            rows.append((i, lr, float(loss.data),
                         float("nan"), float("nan"), float("nan")))
    return bb, rows


def run_finetune(pretrained, domain: Domain, cfg: TrainConfig):
    """Finetune a fresh backbone whose shared layers come from a pretrained
    cross-domain model; returns (model, learning-curve rows)."""
    if cfg.phase != "finetune":
        raise ValueError("config phase must be 'finetune'")
    if isinstance(pretrained, Checkpoint):
        pretrained = model_from_checkpoint(pretrained, dtype=cfg.dtype)
    if pretrained.k != cfg.k:
        raise ValueError(f"k mismatch: checkpoint has {pretrained.k}, config wants {cfg.k}")
    rng = Rng.derive(cfg.seed, "init")
    bb = mdl.build_backbone(domain.cube.B, domain.labels.C, cfg.k, rng,
                            hidden=cfg.hidden, dtype=cfg.dtype)
    mdl.transplant_shared(pretrained, bb)
    return _run_target(bb, domain, cfg)


def run_scratch(domain: Domain, cfg: TrainConfig):
    """Train a backbone from fresh Gaussian init on a single domain."""
    if cfg.phase != "scratch":
        raise ValueError("config phase must be 'scratch'")
    rng = Rng.derive(cfg.seed, "init")
    bb = mdl.build_backbone(domain.cube.B, domain.labels.C, cfg.k, rng,
                            hidden=cfg.hidden, dtype=cfg.dtype)
    return _run_target(bb, domain, cfg)


# ---------------------------------------------------------------------------
# checkpoints

@dataclass
class Checkpoint:
    tensors: dict  # name -> float32 ndarray
    meta: dict     # str -> str


def checkpoint_from_model(model, *, phase: str, seed: int, iteration: int) -> Checkpoint:
    tensors = {}
    for name, t in model.named_parameters().items():
        tensors[name] = t.data.astype(np.float32)
    for name, b in model.named_buffers().items():
        tensors[name] = b.astype(np.float32)
    meta = {
        "phase": phase,
        "k": str(model.k),
        "hidden": str(model.hidden),
        "seed": str(seed),
        "iteration": str(iteration),
    }
    if isinstance(model, mdl.CrossDomainModel):
        meta["n_domains"] = str(model.K)
        for i, (b, c) in enumerate(model.domains):
            meta[f"domain.{i}.bands"] = str(b)
            meta[f"domain.{i}.classes"] = str(c)
    else:
        meta["n_domains"] = "1"
        meta["domain.0.bands"] = str(model.bands)
        meta["domain.0.classes"] = str(model.classes)
    return Checkpoint(tensors=tensors, meta=meta)


def model_from_checkpoint(ckpt: Checkpoint, dtype=np.float32):
    """Rebuild the model purely from checkpoint metadata and tensors."""
    k = int(ckpt.meta["k"])
    hidden = int(ckpt.meta["hidden"])
    n = int(ckpt.meta["n_domains"])
    domains = [(int(ckpt.meta[f"domain.{i}.bands"]),
                int(ckpt.meta[f"domain.{i}.classes"])) for i in range(n)]
    if ckpt.meta["phase"] == "pretrain":
        model = mdl.CrossDomainModel(domains, k, rng=None, hidden=hidden, dtype=dtype)
    else:
        b, c = domains[0]
        model = mdl.Backbone(b, c, k, rng=None, hidden=hidden, dtype=dtype)
    params = model.named_parameters()
    buffers = model.named_buffers()
    for name, arr in ckpt.tensors.items():
        if name in params:
            params[name].data[...] = arr.astype(dtype)
        elif name in buffers:
            buffers[name][...] = arr.astype(dtype)
        else:
            raise ValueError(f"checkpoint tensor {name!r} has no home in the model")
    return model


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    meta_text = "".join(f"{k} = {v}\n" for k, v in sorted(ckpt.meta.items()))
    meta_bytes = meta_text.encode("utf-8")
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<II", 1, len(meta_bytes)))
        f.write(meta_bytes)
        f.write(struct.pack("<I", len(ckpt.tensors)))
        for name in sorted(ckpt.tensors):
            arr = np.ascontiguousarray(ckpt.tensors[name], dtype="<f4")
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:8] != _CKPT_MAGIC:
        raise D.FormatError(f"{path}: bad checkpoint magic")
    off = 8
    try:
        version, meta_len = struct.unpack_from("<II", blob, off)
        off += 8
        if version != 1:
            raise D.FormatError(f"{path}: unsupported checkpoint version {version}")
        meta_text = blob[off:off + meta_len].decode("utf-8")
        if len(blob[off:off + meta_len]) != meta_len:
            raise D.FormatError(f"{path}: truncated metadata")
        off += meta_len
        meta = {}
        for line in meta_text.splitlines():
            if not line.strip():
                continue
            key, _, value = line.partition(" = ")
            meta[key] = value
        (count,) = struct.unpack_from("<I", blob, off)
        off += 4
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", blob, off)
            off += 4
            name = blob[off:off + name_len].decode("utf-8")
            off += name_len
            (ndim,) = struct.unpack_from("<I", blob, off)
            off += 4
            dims = struct.unpack_from(f"<{ndim}I", blob, off)
            off += 4 * ndim
            size = int(np.prod(dims)) if ndim else 1
            end = off + 4 * size
            if end > len(blob):
                raise D.FormatError(f"{path}: truncated tensor payload for {name!r}")
            tensors[name] = np.frombuffer(blob, dtype="<f4", count=size,
                                          offset=off).reshape(dims).copy()
            off = end
    except struct.error as e:
        raise D.FormatError(f"{path}: truncated checkpoint ({e})") from e
    return Checkpoint(tensors=tensors, meta=meta)


# ---------------------------------------------------------------------------
# CSV emission

PRETRAIN_CSV_HEADER = "iter,lr,loss"
CURVE_CSV_HEADER = "iter,lr,loss,oa,aa,kappa"


def _fmt(x) -> str:
    if isinstance(x, int):
        return str(x)
    return f"{x:.6g}"


def write_csv(path, header: str, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(header + "\n")
        for row in rows:
            f.write(",".join(_fmt(x) for x in row) + "\n")
