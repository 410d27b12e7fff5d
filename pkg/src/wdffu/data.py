"""Dataset ingestion, resizing, augmentation, splitting, and synthesis.

Images live under <root>/{benign,malignant}/ as PNGs with sibling
"<stem>_mask*.png" files; several mask files for one image are unioned.
Samples carry plain float arrays; training code wraps batches in tensors.
"""
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DataError, DimensionError
from .tensor import bilinear_matrix

log = logging.getLogger(__name__)

CLASS_DIRS = ("benign", "malignant")


@dataclass
class Sample:
    image: np.ndarray        # [1, H, W] in [0, 1]
    mask: np.ndarray         # [1, H, W] in {0, 1}
    id: str
    class_label: str


@dataclass
class SplitSpec:
    seed: int = 0
    ratios: tuple = (0.70, 0.15, 0.15)


def _decode_gray(path):
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("L"), dtype=np.float64)
    except (OSError, UnidentifiedImageError) as exc:
        raise DataError(f"cannot decode {path}: {exc}") from exc


def load_dataset(root):
    """Collect (image, unioned mask) pairs; unmatched images are logged
    and skipped.  Directory entries are sorted so results do not depend
    on filesystem enumeration order."""
    root = Path(root)
    if not any((root / d).is_dir() for d in CLASS_DIRS):
        raise DataError(f"{root} has none of the class directories {CLASS_DIRS}")
    samples = []
    skipped = []
    for class_label in CLASS_DIRS:
        class_dir = root / class_label
        if not class_dir.is_dir():
            continue
        entries = sorted(p for p in class_dir.iterdir() if p.suffix.lower() == ".png")
        images = [p for p in entries if "_mask" not in p.stem]
        for path in images:
            mask_paths = [p for p in entries
                          if p.stem == path.stem + "_mask"
                          or p.stem.startswith(path.stem + "_mask_")]
            if not mask_paths:
                skipped.append(str(path))
                continue
            image = _decode_gray(path) / 255.0
            mask = np.zeros_like(image, dtype=bool)
            for mp in mask_paths:
                part = _decode_gray(mp)
                if part.shape != image.shape:
                    raise DataError(f"mask {mp} extents {part.shape} do not match "
                                    f"image {path} extents {image.shape}")
                mask |= part > 127
            samples.append(Sample(image=image[None],
                                  mask=mask.astype(np.float64)[None],
                                  id=f"{class_label}/{path.stem}",
                                  class_label=class_label))
    if skipped:
        log.warning("skipped %d image(s) without mask files: %s",
                    len(skipped), ", ".join(skipped))
    return samples


def _resize_plane_bilinear(plane, size):
    mh = bilinear_matrix(plane.shape[0], size[0])
    mw = bilinear_matrix(plane.shape[1], size[1])
    return mh @ plane @ mw.T


def _nearest_index(n_in, n_out):
    centers = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    return np.clip(np.rint(centers).astype(np.int64), 0, n_in - 1)


def resize_to(sample, size=(224, 224)):
    """Bilinear for the image, nearest-neighbor for the mask."""
    if sample.image.shape[1] == 0 or sample.image.shape[2] == 0:
        raise DimensionError("cannot resize an empty image")
    image = _resize_plane_bilinear(sample.image[0], size)
    rows = _nearest_index(sample.mask.shape[1], size[0])
    cols = _nearest_index(sample.mask.shape[2], size[1])
    mask = (sample.mask[0][np.ix_(rows, cols)] > 0.5).astype(np.float64)
    return Sample(image=image[None], mask=mask[None],
                  id=sample.id, class_label=sample.class_label)


def augment(sample, rng):
    """Random horizontal/vertical flips and a multiple-of-90 rotation,
    applied identically to image and mask.  Requires square extents."""
    if sample.image.shape[1] != sample.image.shape[2]:
        raise DimensionError("augmentation requires square samples; resize first")
    image, mask = sample.image, sample.mask
    if rng.random() < 0.5:
        image, mask = np.flip(image, 2), np.flip(mask, 2)
    if rng.random() < 0.5:
        image, mask = np.flip(image, 1), np.flip(mask, 1)
    k = int(rng.integers(4))
    if k:
        image = np.rot90(image, k, axes=(1, 2))
        mask = np.rot90(mask, k, axes=(1, 2))
    return Sample(image=np.ascontiguousarray(image), mask=np.ascontiguousarray(mask),
                  id=sample.id, class_label=sample.class_label)


def split(samples, spec):
    """Stratified 70/15/15 split with per-class flooring.

    Per class of size n: floor(0.70 n) train, floor(0.15 n) val, rest
    test.  Classes with fewer than three samples all go to train."""
    r_train, r_val, _ = spec.ratios
    rng = np.random.default_rng(spec.seed)
    train, val, test = [], [], []
    by_class = {}
    for sample in sorted(samples, key=lambda s: s.id):
        by_class.setdefault(sample.class_label, []).append(sample)
    for label in sorted(by_class):
        members = by_class[label]
        rng.shuffle(members)
        n = len(members)
        if n < 3:
            log.warning("class %r has only %d sample(s); all assigned to train",
                        label, n)
            train.extend(members)
            continue
        n_train = math.floor(r_train * n)
        n_val = math.floor(r_val * n)
        train.extend(members[:n_train])
        val.extend(members[n_train:n_train + n_val])
        test.extend(members[n_train + n_val:])
    return train, val, test


def synth_dataset(n, size, rng):
    """Speckled dark background with one brighter elliptical lesion per
    sample; the mask is the exact ellipse interior."""
    if size < 32:
        raise DimensionError(f"synthetic images need size >= 32, got {size}")
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    samples = []
    for i in range(n):
        bg = rng.uniform(0.10, 0.25)
        fg = rng.uniform(0.55, 0.85)
        cy, cx = rng.uniform(0.3 * size, 0.7 * size, size=2)
        a, b = rng.uniform(0.12 * size, 0.30 * size, size=2)
        theta = rng.uniform(0.0, math.pi)
        dy, dx = ys - cy, xs - cx
        u = (dx * math.cos(theta) + dy * math.sin(theta)) / a
        v = (-dx * math.sin(theta) + dy * math.cos(theta)) / b
        mask = (u * u + v * v <= 1.0).astype(np.float64)
        image = bg + (fg - bg) * mask
        image = np.clip(image * (1.0 + 0.3 * rng.uniform(-1.0, 1.0, image.shape)),
                        0.0, 1.0)
        label = CLASS_DIRS[i % 2]
        samples.append(Sample(image=image[None], mask=mask[None],
                              id=f"synth_{i:03d}", class_label=label))
    return samples


def save_mask_png(path, mask):
    """Write a binary mask as an 8-bit PNG with values {0, 255}."""
    arr = np.asarray(mask)
    if arr.ndim == 3 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim != 2:
        raise DimensionError(f"expected a single-channel mask, got shape {arr.shape}")
    Image.fromarray(((arr > 0.5) * 255).astype(np.uint8), mode="L").save(path)
