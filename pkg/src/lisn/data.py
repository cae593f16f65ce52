"""Image I/O, bicubic degradation, aligned patch sampling, and the
dihedral augmentation set used for training."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .ops import bicubic_resize
from .tensor import Tensor

__all__ = [
    "ImageSample",
    "TrainPatch",
    "Dataset",
    "load_image",
    "save_image",
    "degrade",
    "dihedral",
    "augment",
    "sample_batch",
    "split_train_test",
]

_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass
class ImageSample:
    """One source image: [1,1,H,W] tensor with values in [0,1]."""

    hr: Tensor
    path: str

    @property
    def height(self):
        return self.hr.shape[2]

    @property
    def width(self):
        return self.hr.shape[3]


@dataclass
class TrainPatch:
    """Aligned pair; ``lr`` is constructed as bicubic_resize(hr, 1/scale)."""

    lr: Tensor
    hr: Tensor


def load_image(path):
    """Read an 8-bit grayscale PNG/PGM; RGB inputs are luma-converted."""
    try:
        with Image.open(path) as img:
            if img.mode == "L":
                arr = np.asarray(img, dtype=np.float64)
            else:
                rgb = np.asarray(img.convert("RGB"), dtype=np.float64)
                arr = rgb @ _LUMA
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise ValueError(f"cannot load image {path}: {exc}") from exc
    values = (arr / 255.0).astype(np.float32)[None, None]
    return ImageSample(hr=Tensor(values), path=str(path))


def save_image(tensor, path):
    """Write [1,1,H,W] or [N,1,H,W] (first item) as an 8-bit gray image,
    clamping to [0,1] before quantization."""
    arr = tensor.data[0, 0] if tensor.ndim == 4 else np.asarray(tensor.data)
    q = np.clip(np.round(np.clip(arr, 0.0, 1.0) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(q, mode="L").save(path)


def degrade(hr, scale):
    """Bicubic down-sampling by an integer factor; sizes must divide."""
    h, w = hr.shape[2], hr.shape[3]
    if h % scale != 0 or w % scale != 0:
        raise ValueError(f"degrade: size {h}x{w} not divisible by scale {scale}")
    return bicubic_resize(hr, 1.0 / scale)


def dihedral(arr, rot_quarters, flip):
    """Apply one of the 8 square symmetries to the spatial axes of NCHW data."""
    if rot_quarters % 2 == 1 and arr.shape[2] != arr.shape[3]:
        raise ValueError(
            f"90/270 degree rotation needs a square patch, got {arr.shape[2]}x{arr.shape[3]}"
        )
    out = np.rot90(arr, k=rot_quarters, axes=(2, 3))
    if flip:
        out = out[:, :, :, ::-1]
    return np.ascontiguousarray(out)


def augment(patch, rng):
    """Random element of the 8-member dihedral group, applied identically
    to the lr and hr sides."""
    k = int(rng.integers(4))
    flip = bool(rng.integers(2))
    return TrainPatch(
        lr=Tensor(dihedral(patch.lr.data, k, flip)),
        hr=Tensor(dihedral(patch.hr.data, k, flip)),
    )


class Dataset:
    """Ordered collection of source images."""

    def __init__(self, samples):
        self.samples = list(samples)

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    @classmethod
    def from_dir(cls, root):
        root = Path(root)
        if not root.is_dir():
            raise ValueError(f"dataset directory {root} does not exist")
        paths = sorted(
            p for p in root.rglob("*") if p.suffix.lower() in (".png", ".pgm")
        )
        return cls(load_image(p) for p in paths)

    @classmethod
    def from_manifest(cls, manifest_path):
        """Plain text manifest: one path per line, relative to its directory."""
        manifest_path = Path(manifest_path)
        root = manifest_path.parent
        lines = [
            line.strip()
            for line in manifest_path.read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]
        return cls(load_image(root / line) for line in lines)

    @classmethod
    def open(cls, path):
        """Directory of images, or a manifest file listing them."""
        path = Path(path)
        if path.is_file():
            return cls.from_manifest(path)
        return cls.from_dir(path)


def sample_batch(dataset, batch, p, scale, rng, use_augment=True):
    """Draw ``batch`` aligned patches: uniform image, uniform aligned crop,
    dihedral augmentation, then lr constructed by bicubic degradation."""
    if len(dataset) == 0:
        raise ValueError("sample_batch: empty dataset")
    need = p * scale
    usable = []
    for s in dataset:
        if s.height >= need and s.width >= need:
            usable.append(s)
        else:
            warnings.warn(
                f"skipping {s.path}: {s.height}x{s.width} smaller than patch {need}x{need}"
            )
    if not usable:
        raise ValueError(f"sample_batch: no image is at least {need}x{need}")

    patches = []
    for _ in range(batch):
        img = usable[int(rng.integers(len(usable)))]
        # offsets are multiples of scale so hr_offset = lr_offset * scale
        ly = int(rng.integers(img.height // scale - p + 1))
        lx = int(rng.integers(img.width // scale - p + 1))
        hy, hx = ly * scale, lx * scale
        hr_crop = img.hr.data[:, :, hy : hy + need, hx : hx + need]
        if use_augment:
            hr_crop = dihedral(hr_crop, int(rng.integers(4)), bool(rng.integers(2)))
        hr_t = Tensor(hr_crop.copy())
        patches.append(TrainPatch(lr=degrade(hr_t, scale), hr=hr_t))
    return patches


def split_train_test(paths, seed, train_fraction=0.8):
    """Deterministic 80:20 partition: sort by name, seeded shuffle, split."""
    ordered = sorted(str(p) for p in paths)
    rng = np.random.default_rng(seed)
    rng.shuffle(ordered)
    cut = int(round(len(ordered) * train_fraction))
    return ordered[:cut], ordered[cut:]
