"""Dense tensor container and reverse-mode differentiation tape."""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np

_FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    """N-dimensional float value, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str = ""):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def assert_finite(self) -> None:
        if not np.all(np.isfinite(self.data)):
            raise ValueError(f"tensor {self.name or '<anon>'} contains NaN/Inf")

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


class Node:
    __slots__ = ("inputs", "output", "backward_fn", "kind")

    def __init__(self, kind, inputs, output, backward_fn):
        self.kind = kind
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of operations; backward walks it exactly once in reverse."""

    def __init__(self):
        self.nodes: list[Node] = []
        self._produced: set[int] = set()

    def record(self, kind: str, inputs: Sequence[Tensor], output: Tensor,
               backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> None:
        self.nodes.append(Node(kind, list(inputs), output, backward_fn))
        self._produced.add(id(output))

    def needs_grad(self, t: Tensor) -> bool:
        return t.requires_grad or id(t) in self._produced


def backward(tape: Tape, loss: Tensor,
             params: Optional[Iterable[Tensor]] = None) -> dict:
    """Reverse-mode accumulation over the tape.

    Returns a dict mapping Tensor -> gradient array. Parameters listed in
    `params` but never reached get an explicit zero gradient. Gradients on
    tensors reached by multiple paths are summed.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    by_id: dict[int, Tensor] = {id(loss): loss}
    for node in reversed(tape.nodes):
        g_out = grads.get(id(node.output))
        if g_out is None:
            continue
        in_grads = node.backward_fn(g_out)
        for t, g in zip(node.inputs, in_grads):
            if g is None or not tape.needs_grad(t):
                continue
            key = id(t)
            by_id[key] = t
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g
    result: dict[Tensor, np.ndarray] = {}
    for key, g in grads.items():
        t = by_id[key]
        if t is loss:
            continue
        result[t] = g
        if t.requires_grad:
            t.grad = g
    if params is not None:
        for p in params:
            if p not in result:
                result[p] = np.zeros_like(p.data)
                if p.requires_grad:
                    p.grad = result[p]
    return result


def finite_diff_grad(f: Callable[[Tape, Tensor], Tensor], x: Tensor,
                     eps: float) -> np.ndarray:
    """Central-difference gradient of the scalar `f(tape, x)` w.r.t. `x`.

    Returns a float64 array of `x`'s shape. `x.data` is perturbed in place
    and restored.
    """
    flat = x.data.reshape(-1)
    cd = np.zeros(flat.size, dtype=np.float64)
    for i in range(flat.size):
        orig = flat.flat[i]
        flat.flat[i] = orig + eps
        lp = float(f(Tape(), x).data)
        flat.flat[i] = orig - eps
        lm = float(f(Tape(), x).data)
        flat.flat[i] = orig
        cd[i] = (lp - lm) / (2.0 * eps)
    return cd.reshape(x.shape)


def finite_diff_check(f: Callable[[Tape, Tensor], Tensor], x: Tensor,
                      eps: float) -> float:
    """Max relative error between analytic and central-difference gradients.

    `f(tape, x)` must return a scalar Tensor. Error per coordinate is
    |analytic - cd| / max(|analytic|, |cd|, 1e-8).
    """
    tape = Tape()
    loss = f(tape, x)
    analytic = backward(tape, loss, params=[x])[x].astype(np.float64).reshape(-1)
    cd = finite_diff_grad(f, x, eps).reshape(-1)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(cd)), 1e-8)
    return float(np.max(np.abs(analytic - cd) / denom))
