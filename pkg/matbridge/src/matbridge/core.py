"""Readers, converters, and report generation."""

import struct
from dataclasses import dataclass

import h5py
import numpy as np
import scipy.io

_HSC_MAGIC = b"HSC1"
_HSL_MAGIC = b"HSL1"


class BridgeError(ValueError):
    """Raised for unreadable, malformed, or mismatched inputs."""


# ---------------------------------------------------------------------------
# .mat reading

def _pick_variable(names, path, var):
    if var is not None:
        if var not in names:
            raise BridgeError(
                f"{path}: no variable {var!r} (has: {', '.join(sorted(names))})"
            )
        return var
    data_names = [n for n in names if not n.startswith("__") and n != "#refs#"]
    if len(data_names) != 1:
        raise BridgeError(
            f"{path}: expected exactly one array variable, found "
            f"{len(data_names)} ({', '.join(sorted(data_names))}); use --cube-var/--gt-var"
        )
    return data_names[0]


def load_mat_array(path, var=None) -> np.ndarray:
    """Load one numeric array from a .mat file (v5 or v7.3/HDF5)."""
    try:
        is_hdf5 = h5py.is_hdf5(path)
    except OSError as exc:
        raise BridgeError(f"{path}: {exc}") from exc
    if is_hdf5:
        with h5py.File(path, "r") as f:
            name = _pick_variable(list(f.keys()), path, var)
            node = f[name]
            if not isinstance(node, h5py.Dataset):
                raise BridgeError(f"{path}: variable {name!r} is not a plain array")
            arr = node[()]
        # MATLAB stores column-major; h5py reports the axes reversed.
        arr = np.asarray(arr).T
    else:
        try:
            contents = scipy.io.loadmat(path)
        except (OSError, ValueError, NotImplementedError) as exc:
            raise BridgeError(f"{path}: {exc}") from exc
        name = _pick_variable(list(contents.keys()), path, var)
        arr = np.asarray(contents[name])
    if arr.dtype == object or arr.dtype.names is not None:
        raise BridgeError(f"{path}: variable {name!r} is not a numeric array")
    if np.iscomplexobj(arr):
        raise BridgeError(f"{path}: variable {name!r} is complex-valued")
    return arr


@dataclass
class MatPair:
    """A hyperspectral cube and its ground-truth map, as loaded."""

    cube: np.ndarray  # [H, W, B]
    gt: np.ndarray  # [H, W] non-negative integers
    cube_path: str = ""
    gt_path: str = ""

    def __post_init__(self):
        if self.cube.ndim != 3:
            raise BridgeError(
                f"{self.cube_path}: cube must be H x W x B, got shape {self.cube.shape}"
            )
        gt = np.asarray(self.gt)
        if gt.ndim == 3 and gt.shape[2] == 1:
            gt = gt[:, :, 0]
        if gt.ndim != 2:
            raise BridgeError(
                f"{self.gt_path}: ground truth must be H x W, got shape {gt.shape}"
            )
        if gt.shape != self.cube.shape[:2]:
            raise BridgeError(
                f"ground truth dims {gt.shape} do not match cube spatial dims "
                f"{self.cube.shape[:2]}"
            )
        if not np.issubdtype(gt.dtype, np.integer):
            rounded = np.rint(gt)
            if not np.array_equal(rounded, gt):
                raise BridgeError(f"{self.gt_path}: ground truth has non-integer values")
            gt = rounded.astype(np.int64)
        if np.any(gt < 0):
            raise BridgeError(f"{self.gt_path}: ground truth has negative labels")
        self.gt = gt.astype(np.int64)

    @property
    def H(self) -> int:
        return self.cube.shape[0]

    @property
    def W(self) -> int:
        return self.cube.shape[1]

    @property
    def B(self) -> int:
        return self.cube.shape[2]


def load_pair(cube_path, gt_path, cube_var=None, gt_var=None) -> MatPair:
    cube = load_mat_array(cube_path, cube_var)
    gt = load_mat_array(gt_path, gt_var)
    return MatPair(cube, gt, str(cube_path), str(gt_path))


# ---------------------------------------------------------------------------
# remap / band lists

def read_remap(path) -> dict:
    """Parse a remap file of `old new` integer lines; '#' starts a comment."""
    remap = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise BridgeError(f"{path}:{lineno}: expected 'old new', got {raw!r}")
            try:
                old, new = int(parts[0]), int(parts[1])
            except ValueError:
                raise BridgeError(f"{path}:{lineno}: labels must be integers") from None
            if old < 0 or new < 0:
                raise BridgeError(f"{path}:{lineno}: labels must be non-negative")
            if old in remap:
                raise BridgeError(f"{path}:{lineno}: duplicate source label {old}")
            remap[old] = new
    return remap


def parse_band_list(text) -> list:
    """Parse '3,5,10-12' into sorted unique band indices."""
    out = set()
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, _, hi = part.partition("-")
            try:
                lo, hi = int(lo), int(hi)
            except ValueError:
                raise BridgeError(f"bad band range {part!r}") from None
            if lo > hi:
                raise BridgeError(f"bad band range {part!r}")
            out.update(range(lo, hi + 1))
        else:
            try:
                out.add(int(part))
            except ValueError:
                raise BridgeError(f"bad band index {part!r}") from None
    if any(b < 0 for b in out):
        raise BridgeError("band indices must be non-negative")
    return sorted(out)


def _apply_remap(gt: np.ndarray, remap: dict) -> np.ndarray:
    table_size = int(gt.max()) + 1 if gt.size else 1
    table = np.zeros(table_size, dtype=np.int64)
    for old, new in remap.items():
        if old < table_size:
            table[old] = new
    return table[gt]


# ---------------------------------------------------------------------------
# output formats

def write_hsc(cube: np.ndarray, path) -> None:
    """Write an HSC v1 cube: magic, (version, H, W, B) uint32 LE, float32 data."""
    h, w, b = cube.shape
    with open(path, "wb") as f:
        f.write(_HSC_MAGIC)
        f.write(struct.pack("<IIII", 1, h, w, b))
        f.write(np.ascontiguousarray(cube, dtype="<f4").tobytes())


def write_hsl(labels: np.ndarray, C: int, path) -> None:
    """Write an HSL v1 label map: magic, (version, H, W) uint32 + C uint16 LE, uint16 data."""
    h, w = labels.shape
    if C > 0xFFFF or np.any(labels > C):
        raise BridgeError(f"labels exceed class count C={C}")
    with open(path, "wb") as f:
        f.write(_HSL_MAGIC)
        f.write(struct.pack("<IIIH", 1, h, w, C))
        f.write(np.ascontiguousarray(labels, dtype="<u2").tobytes())


def convert(pair: MatPair, out_prefix, remap=None, drop_bands=None):
    """Emit <out_prefix>.hsc and <out_prefix>.hsl; returns the two paths."""
    cube = pair.cube
    if drop_bands:
        bad = [b for b in drop_bands if b >= pair.B]
        if bad:
            raise BridgeError(f"--drop-bands indices {bad} out of range for B={pair.B}")
        keep = [b for b in range(pair.B) if b not in set(drop_bands)]
        if not keep:
            raise BridgeError("--drop-bands removes every band")
        cube = cube[:, :, keep]
    gt = _apply_remap(pair.gt, remap) if remap is not None else pair.gt
    C = int(gt.max()) if gt.size else 0
    hsc_path = str(out_prefix) + ".hsc"
    hsl_path = str(out_prefix) + ".hsl"
    write_hsc(cube.astype(np.float32), hsc_path)
    write_hsl(gt, C, hsl_path)
    return hsc_path, hsl_path


# ---------------------------------------------------------------------------
# inspection

def class_counts(gt: np.ndarray) -> dict:
    """Labeled-pixel count per class, excluding label 0."""
    values, counts = np.unique(gt, return_counts=True)
    return {int(v): int(n) for v, n in zip(values, counts) if v != 0}


def inspect_pair(pair: MatPair) -> str:
    counts = class_counts(pair.gt)
    lines = [
        f"H x W x B: {pair.H} x {pair.W} x {pair.B}",
        f"classes (excluding 0): {len(counts)}",
    ]
    for cls in sorted(counts):
        lines.append(f"  class {cls}: {counts[cls]}")
    lines.append(f"total labeled: {sum(counts.values())}")
    return "\n".join(lines)
