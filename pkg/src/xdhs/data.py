"""Hyperspectral cubes, label maps, binary file formats, splits, mirroring,
standardization, pixel-mask batching, and the synthetic domain generator."""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .rng import Rng

_HSC_MAGIC = b"HSC1"
_HSL_MAGIC = b"HSL1"


class FormatError(ValueError):
    """Raised for malformed .hsc/.hsl/split files."""


@dataclass
class HyperCube:
    """H x W image with B spectral bands, float32, band-fastest layout."""

    values: np.ndarray  # [H, W, B] float32

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 3:
            raise ValueError("cube must be H x W x B")
        if v.dtype != np.float32:
            v = v.astype(np.float32)
        self.values = np.ascontiguousarray(v)

    @property
    def H(self) -> int:
        return self.values.shape[0]

    @property
    def W(self) -> int:
        return self.values.shape[1]

    @property
    def B(self) -> int:
        return self.values.shape[2]


@dataclass
class LabelMap:
    """H x W class map; 0 = unlabeled, 1..C = classes."""

    labels: np.ndarray  # [H, W] uint16
    C: int

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 2:
            raise ValueError("labels must be H x W")
        if lab.dtype != np.uint16:
            if np.any(lab < 0) or np.any(lab > 0xFFFF):
                raise ValueError("labels out of uint16 range")
            lab = lab.astype(np.uint16)
        if np.any(lab > self.C):
            raise ValueError(f"label exceeds class count C={self.C}")
        self.labels = np.ascontiguousarray(lab)

    @property
    def H(self) -> int:
        return self.labels.shape[0]

    @property
    def W(self) -> int:
        return self.labels.shape[1]


@dataclass
class Split:
    train: set
    test: set
    seed: int


@dataclass
class DomainDescriptor:
    name: str
    bands: int
    classes: int
    spectral_range: tuple = (0.4, 2.5)  # micrometers
    example_count: int = 0

    def __post_init__(self):
        if self.bands < 1:
            raise ValueError("bands must be >= 1")
        if self.classes < 2:
            raise ValueError("classes must be >= 2")


# ---------------------------------------------------------------------------
# binary formats

def write_hsc(cube: HyperCube, path) -> None:
    with open(path, "wb") as f:
        f.write(_HSC_MAGIC)
        f.write(struct.pack("<IIII", 1, cube.H, cube.W, cube.B))
        f.write(cube.values.astype("<f4").tobytes())


def read_hsc(path) -> HyperCube:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != _HSC_MAGIC:
        raise FormatError(f"{path}: bad magic, not an HSC file")
    if len(blob) < 20:
        raise FormatError(f"{path}: truncated header")
    version, h, w, b = struct.unpack("<IIII", blob[4:20])
    if version != 1:
        raise FormatError(f"{path}: unsupported HSC version {version}")
    need = 20 + h * w * b * 4
    if len(blob) != need:
        raise FormatError(f"{path}: expected {need} bytes, got {len(blob)}")
    values = np.frombuffer(blob, dtype="<f4", offset=20).reshape(h, w, b)
    return HyperCube(values.copy())


def write_hsl(labels: LabelMap, path) -> None:
    with open(path, "wb") as f:
        f.write(_HSL_MAGIC)
        f.write(struct.pack("<IIIH", 1, labels.H, labels.W, labels.C))
        f.write(labels.labels.astype("<u2").tobytes())


def read_hsl(path) -> LabelMap:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != _HSL_MAGIC:
        raise FormatError(f"{path}: bad magic, not an HSL file")
    if len(blob) < 18:
        raise FormatError(f"{path}: truncated header")
    version, h, w, c = struct.unpack("<IIIH", blob[4:18])
    if version != 1:
        raise FormatError(f"{path}: unsupported HSL version {version}")
    need = 18 + h * w * 2
    if len(blob) != need:
        raise FormatError(f"{path}: expected {need} bytes, got {len(blob)}")
    lab = np.frombuffer(blob, dtype="<u2", offset=18).reshape(h, w)
    if np.any(lab > c):
        raise FormatError(f"{path}: label exceeds C={c}")
    return LabelMap(lab.copy(), C=c)


def write_split(split: Split, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(f"# split v1 seed={split.seed}\n")
        for kind, pixels in (("train", split.train), ("test", split.test)):
            for r, c in sorted(pixels):
                f.write(f"{kind} {r} {c}\n")


def read_split(path) -> Split:
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines or not lines[0].startswith("# split v1 seed="):
        raise FormatError(f"{path}: missing split header")
    seed = int(lines[0].split("seed=")[1])
    train, test = set(), set()
    for ln in lines[1:]:
        if not ln:
            continue
        parts = ln.split(" ")
        if len(parts) != 3 or parts[0] not in ("train", "test"):
            raise FormatError(f"{path}: bad split record {ln!r}")
        (train if parts[0] == "train" else test).add((int(parts[1]), int(parts[2])))
    return Split(train=train, test=test, seed=seed)


# ---------------------------------------------------------------------------
# splits and batching

def make_split(labels: LabelMap, per_class: int, seed: int) -> Split:
    """per_class training pixels from each class, rest of labeled pixels test."""
    rng = Rng(seed)
    train: set = set()
    test: set = set()
    lab = labels.labels
    for c in range(1, labels.C + 1):
        rs, cs = np.nonzero(lab == c)
        coords = list(zip(rs.tolist(), cs.tolist()))  # row-major, deterministic
        if len(coords) < per_class + 1:
            raise ValueError(
                f"class {c} has only {len(coords)} labeled pixels, "
                f"need at least {per_class + 1}")
        pick = rng.sample_without_replacement(len(coords), per_class)
        chosen = {coords[i] for i in pick.tolist()}
        train |= chosen
        test |= set(coords) - chosen
    return Split(train=train, test=test, seed=seed)


def sample_loss_mask(split: Split, batch_size: int, rng: Rng) -> set:
    """Uniform sample without replacement from the train pixel set."""
    if batch_size <= 0:
        raise ValueError("batch_size must be positive")
    pool = sorted(split.train)
    if batch_size > len(pool):
        raise ValueError(f"batch_size {batch_size} exceeds train set {len(pool)}")
    idx = rng.sample_without_replacement(len(pool), batch_size)
    return {pool[i] for i in idx.tolist()}


def coords_to_arrays(coords) -> tuple:
    arr = np.array(sorted(coords), dtype=np.int64).reshape(-1, 2)
    return arr[:, 0], arr[:, 1]


# ---------------------------------------------------------------------------
# eight-fold mirror augmentation (dihedral group of the square)

def _ident(a):
    return a


_VARIANTS_SQUARE = (
    ("identity", _ident),
    ("mirror_h", lambda a: a[:, ::-1]),
    ("mirror_v", lambda a: a[::-1, :]),
    ("rot180", lambda a: a[::-1, ::-1]),
    ("transpose", lambda a: np.swapaxes(a, 0, 1)),
    ("rot90", lambda a: np.swapaxes(a, 0, 1)[::-1, :]),
    ("rot270", lambda a: np.swapaxes(a, 0, 1)[:, ::-1]),
    ("anti_transpose", lambda a: np.swapaxes(a[::-1, ::-1], 0, 1)),
)

# index of the inverse transform for each variant above
_INVERSE = (0, 1, 2, 3, 4, 6, 5, 7)


def mirror_variant_count(H: int, W: int) -> int:
    return 8 if H == W else 4


def apply_variant(arr: np.ndarray, variant: int) -> np.ndarray:
    """Apply mirror variant to the first two (spatial) axes."""
    name, fn = _VARIANTS_SQUARE[variant]
    return np.ascontiguousarray(fn(arr))


def inverse_variant(variant: int) -> int:
    return _INVERSE[variant]


def transform_coords(rows, cols, H: int, W: int, variant: int):
    """Map (row, col) pixel coordinates through a mirror variant."""
    r = np.asarray(rows)
    c = np.asarray(cols)
    if variant == 0:
        return r, c
    if variant == 1:
        return r, W - 1 - c
    if variant == 2:
        return H - 1 - r, c
    if variant == 3:
        return H - 1 - r, W - 1 - c
    if variant == 4:
        return c, r
    if variant == 5:  # rot90: transpose then flip rows
        return W - 1 - c, r
    if variant == 6:  # rot270: transpose then flip cols
        return c, H - 1 - r
    if variant == 7:
        return W - 1 - c, H - 1 - r
    raise ValueError(f"unknown mirror variant {variant}")


def mirror8(cube: HyperCube, labels: LabelMap):
    """All dihedral mirror variants of a cube/label pair.

    Returns 8 pairs for square images; 4 axis-aligned ones (with a warning)
    otherwise, since diagonal mirrors would change the image shape.
    """
    n = mirror_variant_count(cube.H, cube.W)
    if n == 4:
        warnings.warn("non-square image: only the 4 axis-aligned mirror "
                      "variants are produced", stacklevel=2)
    out = []
    for v in range(n):
        out.append((HyperCube(apply_variant(cube.values, v)),
                    LabelMap(apply_variant(labels.labels, v), C=labels.C)))
    return out


# ---------------------------------------------------------------------------
# standardization

def standardize(cube: HyperCube):
    """Per-band zero-mean unit-variance scaling over all pixels.

    Returns (standardized cube, (mean, std)) with std clamped to 1 for
    constant bands.
    """
    v = cube.values.astype(np.float64)
    mean = v.mean(axis=(0, 1))
    std = v.std(axis=(0, 1))
    std = np.where(std == 0.0, 1.0, std)
    out = ((v - mean) / std).astype(np.float32)
    return HyperCube(out), (mean, std)


# ---------------------------------------------------------------------------
# synthetic domains

def class_signatures(classes: int, wavelengths: np.ndarray, signature_seed: int) -> np.ndarray:
    """Continuous per-class spectra (sum of 3 Gaussian bumps) sampled at the
    given wavelengths. Independent of band count, so two sensors with the
    same signature seed sample the same underlying spectra."""
    rng = Rng.derive(signature_seed, "signatures")
    lo = float(wavelengths.min())
    hi = float(wavelengths.max())
    sig = np.zeros((classes, wavelengths.size))
    for c in range(classes):
        amp = 0.5 + rng.uniform(3) * 1.5
        center = lo + rng.uniform(3) * (hi - lo)
        width = (0.05 + rng.uniform(3) * 0.25) * (hi - lo)
        for j in range(3):
            sig[c] += amp[j] * np.exp(-0.5 * ((wavelengths - center[j]) / width[j]) ** 2)
    return sig


def gen_synthetic(spec: DomainDescriptor, H: int, W: int, blob_count: int,
                  noise_std: float, seed: int,
                  unlabeled_fraction: float = 0.1,
                  signature_seed: Optional[int] = None):
    """Synthetic domain: Voronoi class regions with per-class spectra.

    Each class has a continuous spectral signature defined on the domain's
    spectral range; the cube samples it at B wavelengths and adds Gaussian
    noise. Deterministic in (seed, signature_seed).
    """
    if spec.classes < 2 or spec.bands < 2:
        raise ValueError("need classes >= 2 and bands >= 2")
    if signature_seed is None:
        signature_seed = seed
    lo, hi = spec.spectral_range
    wavelengths = np.linspace(lo, hi, spec.bands)
    sig = class_signatures(spec.classes, wavelengths, signature_seed)

    rng = Rng.derive(seed, f"spatial/{spec.name}")
    sites = rng.sample_without_replacement(H * W, blob_count)
    site_rc = np.stack([sites // W, sites % W], axis=1).astype(np.float64)
    # first C sites get classes 1..C so every class owns at least one pixel
    site_class = np.empty(blob_count, dtype=np.int64)
    for i in range(blob_count):
        if i < spec.classes:
            site_class[i] = i + 1
        else:
            site_class[i] = 1 + rng.randint_below(spec.classes)

    rr, cc = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    pix = np.stack([rr.ravel(), cc.ravel()], axis=1).astype(np.float64)
    d2 = ((pix[:, None, :] - site_rc[None, :, :]) ** 2).sum(axis=2)
    nearest = d2.argmin(axis=1)  # ties -> lowest site index
    labels = site_class[nearest].reshape(H, W)

    drop = rng.uniform(H * W).reshape(H, W) < unlabeled_fraction
    labels = np.where(drop, 0, labels)

    cube = sig[site_class[nearest] - 1].reshape(H, W, spec.bands)
    if noise_std > 0:
        cube = cube + rng.gaussian(H * W * spec.bands, std=noise_std).reshape(H, W, spec.bands)
    lm = LabelMap(labels.astype(np.uint16), C=spec.classes)
    spec.example_count = int(np.count_nonzero(lm.labels))
    return HyperCube(cube.astype(np.float32)), lm
