"""Network construction: single-domain backbone, cross-domain multi-inlet
model with a shared trunk, layer specifications, FLOPs accounting,
transplant of the shared portion, and learning-rate parameter groups."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import ops
from .ops import BatchNormState
from .rng import Rng
from .tensor import Tape, Tensor

HIDDEN = 128  # every hidden layer carries 128 filters


@dataclass
class LayerSpec:
    kind: str  # conv | bn | relu | residual_begin | residual_end | concat | maxpool
    kernel: int = 0
    in_channels: int = 0
    out_channels: int = 0
    pad: int = 0

    def __post_init__(self):
        if self.kind == "conv" and self.pad != (self.kernel - 1) // 2:
            raise ValueError("conv pad must be (kernel-1)/2")


def _conv_spec(k: int, cin: int, cout: int) -> LayerSpec:
    return LayerSpec("conv", kernel=k, in_channels=cin, out_channels=cout, pad=(k - 1) // 2)


def backbone_layer_specs(bands: int, classes: int, k: int, hidden: int = HIDDEN) -> list:
    """Layer listing of the backbone: 5x5 + 1x1 data-analysis convs, k
    two-conv residual modules, and a 1x1 classifier (depth 2 + 2k + 1)."""
    specs = [
        _conv_spec(5, bands, hidden), LayerSpec("bn"), LayerSpec("relu"),
        _conv_spec(1, hidden, hidden), LayerSpec("bn"), LayerSpec("relu"),
    ]
    for _ in range(k):
        specs += [
            LayerSpec("residual_begin"),
            _conv_spec(1, hidden, hidden), LayerSpec("bn"), LayerSpec("relu"),
            _conv_spec(1, hidden, hidden), LayerSpec("bn"),
            LayerSpec("residual_end"), LayerSpec("relu"),
        ]
    specs.append(_conv_spec(1, hidden, classes))
    return specs


def contextual_layer_specs(bands: int, classes: int, k: int, hidden: int = HIDDEN) -> list:
    """Layer listing of the older contextual architecture; used only by the
    FLOPs analyzer (multi-scale 1/3/5 bank, concat, residual modules, and a
    three-conv classifier)."""
    specs = [
        _conv_spec(1, bands, hidden),
        _conv_spec(3, bands, hidden), LayerSpec("maxpool", kernel=3),
        _conv_spec(5, bands, hidden), LayerSpec("maxpool", kernel=5),
        LayerSpec("concat", out_channels=3 * hidden),
        _conv_spec(1, 3 * hidden, hidden),
    ]
    for _ in range(k):
        specs += [
            LayerSpec("residual_begin"),
            _conv_spec(1, hidden, hidden),
            _conv_spec(1, hidden, hidden),
            LayerSpec("residual_end"),
        ]
    specs += [
        _conv_spec(1, hidden, hidden),
        _conv_spec(1, hidden, hidden),
        _conv_spec(1, hidden, classes),
    ]
    return specs


def flops(specs: Sequence[LayerSpec], H: int, W: int) -> int:
    """Multiply-and-add count x2 over conv layers; everything else is free."""
    total = 0
    for s in specs:
        if s.kind == "conv":
            total += 2 * H * W * s.out_channels * s.kernel * s.kernel * s.in_channels
    return total


# ---------------------------------------------------------------------------
# trainable layers

class Conv:
    def __init__(self, name: str, cin: int, cout: int, k: int, rng: Optional[Rng],
                 dtype=np.float32):
        self.name = name
        self.pad = (k - 1) // 2
        if rng is None:
            data = np.zeros((cout, cin, k, k), dtype=dtype)
            self.weight = Tensor(data, requires_grad=True, name=f"{name}/weight")
        else:
            self.weight = ops.gaussian_init((cout, cin, k, k), 0.001, rng,
                                            dtype=dtype, name=f"{name}/weight")

    def forward(self, tape: Tape, x: Tensor) -> Tensor:
        return ops.conv2d(tape, x, self.weight, self.pad)


class BN:
    def __init__(self, name: str, channels: int, dtype=np.float32):
        self.name = name
        self.state = BatchNormState(channels, dtype=dtype, name=name)

    def forward(self, tape: Tape, x: Tensor, mode: str) -> Tensor:
        self.state.mode = mode
        return ops.batchnorm(tape, x, self.state)


class InletBlock:
    """Data-analysis layers: 5x5 conv B->hidden and 1x1 conv, each with BN+ReLU."""

    def __init__(self, name: str, bands: int, hidden: int, rng, dtype):
        self.name = name
        self.bands = bands
        self.conv1 = Conv(f"{name}/conv1", bands, hidden, 5, rng, dtype)
        self.bn1 = BN(f"{name}/bn1", hidden, dtype)
        self.conv2 = Conv(f"{name}/conv2", hidden, hidden, 1, rng, dtype)
        self.bn2 = BN(f"{name}/bn2", hidden, dtype)

    def forward(self, tape, x, mode):
        x = ops.relu(tape, self.bn1.forward(tape, self.conv1.forward(tape, x), mode))
        x = ops.relu(tape, self.bn2.forward(tape, self.conv2.forward(tape, x), mode))
        return x

    def layers(self):
        return [self.conv1, self.bn1, self.conv2, self.bn2]


class ResModule:
    """Two 1x1 convs with BN, conv-BN-ReLU-conv-BN, skip add, trailing ReLU."""

    def __init__(self, name: str, hidden: int, rng, dtype):
        self.name = name
        self.conv1 = Conv(f"{name}/conv1", hidden, hidden, 1, rng, dtype)
        self.bn1 = BN(f"{name}/bn1", hidden, dtype)
        self.conv2 = Conv(f"{name}/conv2", hidden, hidden, 1, rng, dtype)
        self.bn2 = BN(f"{name}/bn2", hidden, dtype)

    def forward(self, tape, x, mode):
        y = ops.relu(tape, self.bn1.forward(tape, self.conv1.forward(tape, x), mode))
        y = self.bn2.forward(tape, self.conv2.forward(tape, y), mode)
        return ops.relu(tape, ops.add(tape, x, y))

    def layers(self):
        return [self.conv1, self.bn1, self.conv2, self.bn2]


class Trunk:
    """Shared mid-level feature analysis: k residual modules."""

    def __init__(self, k: int, hidden: int, rng, dtype, prefix: str = "shared"):
        self.k = k
        self.modules = [ResModule(f"{prefix}/res{i}", hidden, rng, dtype)
                        for i in range(k)]

    def forward(self, tape, x, mode):
        for m in self.modules:
            x = m.forward(tape, x, mode)
        return x

    def layers(self):
        return [l for m in self.modules for l in m.layers()]


class Head:
    """Task-specific 1x1 classifier conv, hidden -> C logits, no BN/ReLU."""

    def __init__(self, name: str, hidden: int, classes: int, rng, dtype):
        self.name = name
        self.classes = classes
        self.conv = Conv(f"{name}/conv", hidden, classes, 1, rng, dtype)

    def forward(self, tape, x):
        return self.conv.forward(tape, x)

    def layers(self):
        return [self.conv]


def _collect_params(layers) -> dict:
    params = {}
    for l in layers:
        if isinstance(l, Conv):
            params[l.weight.name] = l.weight
        elif isinstance(l, BN):
            params[l.state.gamma.name] = l.state.gamma
            params[l.state.beta.name] = l.state.beta
    return params


def _collect_buffers(layers) -> dict:
    bufs = {}
    for l in layers:
        if isinstance(l, BN):
            bufs[f"{l.name}/running_mean"] = l.state.running_mean
            bufs[f"{l.name}/running_var"] = l.state.running_var
    return bufs


def _cube_to_chw(cube_values: np.ndarray, dtype) -> Tensor:
    x = np.ascontiguousarray(cube_values.transpose(2, 0, 1).astype(dtype))
    return Tensor(x)


class Backbone:
    """Single-domain network: data layers, shared residual stack, task conv."""

    def __init__(self, bands: int, classes: int, k: int, rng: Optional[Rng],
                 hidden: int = HIDDEN, dtype=np.float32):
        self.bands = bands
        self.classes = classes
        self.k = k
        self.hidden = hidden
        self.dtype = dtype
        self.data = InletBlock("data", bands, hidden, rng, dtype)
        self.shared = Trunk(k, hidden, rng, dtype)
        self.task = Head("task", hidden, classes, rng, dtype)

    @property
    def depth(self) -> int:
        return 2 + 2 * self.k + 1

    def forward(self, tape: Tape, cube_values: np.ndarray, mode: str = "eval") -> Tensor:
        if cube_values.shape[2] != self.bands:
            raise ValueError(f"band mismatch: model expects {self.bands}, "
                             f"cube has {cube_values.shape[2]}")
        x = _cube_to_chw(cube_values, self.dtype)
        x = self.data.forward(tape, x, mode)
        x = self.shared.forward(tape, x, mode)
        return self.task.forward(tape, x)

    def _all_layers(self):
        return self.data.layers() + self.shared.layers() + self.task.layers()

    def named_parameters(self) -> dict:
        return _collect_params(self._all_layers())

    def named_buffers(self) -> dict:
        return _collect_buffers(self._all_layers())

    def section_of(self, name: str) -> str:
        return name.split("/")[0]  # data | shared | task


class CrossDomainModel:
    """K per-domain inlets and heads around one physically shared trunk."""

    def __init__(self, domains: Sequence[tuple], k: int, rng: Optional[Rng],
                 hidden: int = HIDDEN, dtype=np.float32):
        if len(domains) < 1:
            raise ValueError("need at least one domain")
        self.domains = [(int(b), int(c)) for b, c in domains]
        self.k = k
        self.hidden = hidden
        self.dtype = dtype
        self.inlets = [InletBlock(f"inlet{d}", b, hidden, rng, dtype)
                       for d, (b, _) in enumerate(self.domains)]
        self.shared = Trunk(k, hidden, rng, dtype)
        self.heads = [Head(f"head{d}", hidden, c, rng, dtype)
                      for d, (_, c) in enumerate(self.domains)]

    @property
    def K(self) -> int:
        return len(self.domains)

    def forward_domain(self, tape: Tape, domain_index: int,
                       cube_values: np.ndarray, mode: str = "eval") -> Tensor:
        bands = self.domains[domain_index][0]
        if cube_values.shape[2] != bands:
            raise ValueError(f"band mismatch: domain {domain_index} expects "
                             f"{bands}, cube has {cube_values.shape[2]}")
        x = _cube_to_chw(cube_values, self.dtype)
        x = self.inlets[domain_index].forward(tape, x, mode)
        x = self.shared.forward(tape, x, mode)
        return self.heads[domain_index].forward(tape, x)

    def _all_layers(self):
        layers = []
        for i in self.inlets:
            layers += i.layers()
        layers += self.shared.layers()
        for h in self.heads:
            layers += h.layers()
        return layers

    def named_parameters(self) -> dict:
        return _collect_params(self._all_layers())

    def named_buffers(self) -> dict:
        return _collect_buffers(self._all_layers())

    def section_of(self, name: str) -> str:
        return name.split("/")[0]  # inlet<d> | shared | head<d>


def build_backbone(bands: int, classes: int, k: int, rng: Rng,
                   hidden: int = HIDDEN, dtype=np.float32) -> Backbone:
    if bands < 1 or classes < 2:
        raise ValueError("need bands >= 1 and classes >= 2")
    if k < 1:
        raise ValueError("residual module count k must be >= 1")
    return Backbone(bands, classes, k, rng, hidden=hidden, dtype=dtype)


def build_cross_domain(domains: Sequence[tuple], k: int, rng: Rng,
                       hidden: int = HIDDEN, dtype=np.float32) -> CrossDomainModel:
    if len(domains) < 1:
        raise ValueError("domain list is empty")
    if k < 1:
        raise ValueError("residual module count k must be >= 1")
    return CrossDomainModel(domains, k, rng, hidden=hidden, dtype=dtype)


# ---------------------------------------------------------------------------
# transplant and learning-rate groups

def transplant_shared(pretrained: CrossDomainModel, target: Backbone) -> Backbone:
    """Copy trunk conv weights, BN affine parameters, and BN running stats
    from the pretrained model into the target backbone; data/task layers of
    the target keep their fresh initialization."""
    if pretrained.k != target.k:
        raise ValueError(f"k mismatch: pretrained {pretrained.k}, target {target.k}")
    if pretrained.hidden != target.hidden:
        raise ValueError("hidden width mismatch")
    for src, dst in zip(pretrained.shared.modules, target.shared.modules):
        for s, d in zip(src.layers(), dst.layers()):
            if isinstance(s, Conv):
                d.weight.data[...] = s.weight.data.astype(d.weight.dtype)
            else:
                d.state.gamma.data[...] = s.state.gamma.data
                d.state.beta.data[...] = s.state.beta.data
                d.state.running_mean[...] = s.state.running_mean
                d.state.running_var[...] = s.state.running_var
    return target


@dataclass
class ParamGroup:
    name: str
    params: list
    lr_multiplier: float
    weight_decay_enabled: bool


def param_groups(model, phase: str, N: int = 1) -> list:
    """Partition every trainable parameter into learning-rate groups.

    pretrain: inlets/heads x1.0, trunk x1/N; finetune: data x10, rest x1;
    scratch: all x1. BN gamma/beta never receive weight decay.
    """
    if phase not in ("pretrain", "finetune", "scratch"):
        raise ValueError(f"unknown phase {phase!r}")
    if N < 1:
        raise ValueError("N must be >= 1")

    def multiplier(section: str) -> float:
        if phase == "pretrain":
            return 1.0 / N if section == "shared" else 1.0
        if phase == "finetune":
            return 10.0 if section == "data" else 1.0
        return 1.0

    groups: dict[tuple, ParamGroup] = {}
    for name in model.named_parameters():
        section = model.section_of(name)
        is_bn = name.endswith("/gamma") or name.endswith("/beta")
        key = (section, is_bn)
        if key not in groups:
            groups[key] = ParamGroup(
                name=f"{section}/{'bn' if is_bn else 'conv'}",
                params=[],
                lr_multiplier=multiplier(section),
                weight_decay_enabled=not is_bn,
            )
        groups[key].params.append(name)
    return list(groups.values())
