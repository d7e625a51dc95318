"""Synthetic shift-randomised datasets for desk-scale experiments.

Each sample is a class template circularly shifted by a uniform random
offset, plus Gaussian noise. Gratings differ in spatial frequency and
orientation; blobs differ in shape and come with a support mask for
segmentation.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .tensorfile import load_tensors, save_tensors

# (rows, cols) cycles per image, ordered so the first classes differ in orientation
_GRATING_FREQS = [(0, 2), (2, 0), (2, 2), (2, -2), (0, 1), (1, 0), (1, 1), (1, -1),
                  (0, 3), (3, 0), (3, 3), (3, -3), (1, 2), (2, 1), (1, -2), (2, -1)]
_BLOB_SHAPES = ["square", "plus", "diagonal", "ring", "bar_h", "bar_v"]

# minimum half-resolution distance, as a fraction of the smaller template's RMS
SEPARATION_FRACTION = 0.5


@dataclass
class SyntheticSpec:
    num_classes: int = 3
    image_extent: int = 16
    channels: int = 3
    train_size: int = 600
    test_size: int = 200
    noise_sigma: float = 0.1
    family: str = "gratings"
    seed: int = 0


@dataclass
class Dataset:
    train_images: np.ndarray
    train_labels: np.ndarray
    test_images: np.ndarray
    test_labels: np.ndarray
    templates: np.ndarray
    train_masks: Optional[np.ndarray] = None
    test_masks: Optional[np.ndarray] = None


def _grating(n, fy, fx):
    r, c = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    return np.cos(2 * np.pi * (fy * r + fx * c) / n)


def _blob(n, shape):
    m = np.zeros((n, n))
    h = n // 4
    lo, hi = n // 2 - h, n // 2 + h
    if shape == "square":
        m[lo:hi, lo:hi] = 1
    elif shape == "plus":
        m[lo:hi, n // 2 - 1:n // 2 + 1] = 1
        m[n // 2 - 1:n // 2 + 1, lo:hi] = 1
    elif shape == "diagonal":
        idx = np.arange(lo, hi)
        m[idx, idx] = 1
        m[idx[:-1], idx[1:]] = 1
    elif shape == "ring":
        m[lo:hi, lo:hi] = 1
        m[lo + 1:hi - 1, lo + 1:hi - 1] = 0
    elif shape == "bar_h":
        m[n // 2 - 1:n // 2 + 1, lo - 1:hi + 1] = 1
    elif shape == "bar_v":
        m[lo - 1:hi + 1, n // 2 - 1:n // 2 + 1] = 1
    return m


def make_templates(spec: SyntheticSpec) -> np.ndarray:
    """``[K, N, N]`` class templates; raises if they cannot be told apart."""
    n, k = spec.image_extent, spec.num_classes
    if n % 2 or n < 2:
        raise ValueError(f"image extent must be even, got {n}")
    if k < 2:
        raise ValueError("need at least two classes")
    if spec.family == "gratings":
        # frequencies at or above N/4 alias once the map is halved
        usable = [f for f in _GRATING_FREQS if max(abs(f[0]), abs(f[1])) < n / 4]
        if k > len(usable):
            raise ValueError(f"only {len(usable)} distinguishable gratings fit in extent {n}")
        templates = np.stack([_grating(n, *f) for f in usable[:k]])
    elif spec.family == "blobs":
        if k > len(_BLOB_SHAPES) or n < 8:
            raise ValueError(f"at most {len(_BLOB_SHAPES)} blob classes, extent >= 8")
        templates = np.stack([_blob(n, s) for s in _BLOB_SHAPES[:k]])
    else:
        raise ValueError(f"unknown pattern family {spec.family!r}")
    _check_separable(templates)
    return templates


def _check_separable(templates: np.ndarray) -> None:
    """Every pair of classes must stay apart at half resolution under every shift."""
    n = templates.shape[-1]
    shifted = [np.stack([np.roll(t, (a, b), (0, 1))[::2, ::2]
                         for a in range(n) for b in range(n)]) for t in templates]
    rms = np.sqrt((templates ** 2).mean(axis=(1, 2)))
    for i in range(len(templates)):
        for j in range(i + 1, len(templates)):
            d = np.sqrt(((shifted[i][:, None] - shifted[j][None]) ** 2).mean(axis=(2, 3)))
            if d.min() < SEPARATION_FRACTION * min(rms[i], rms[j]):
                raise ValueError(f"classes {i} and {j} are not separable at half resolution")


def _draw(templates, count, spec, rng):
    n, c = spec.image_extent, spec.channels
    labels = rng.integers(0, len(templates), size=count)
    shifts = rng.integers(0, n, size=(count, 2))
    base = np.stack([np.roll(templates[k], tuple(s), (0, 1)) for k, s in zip(labels, shifts)])
    images = np.repeat(base[:, None], c, axis=1) + spec.noise_sigma * rng.normal(size=(count, c, n, n))
    return images, labels, (base > 0).astype(np.float64)


def gen_synthetic(spec: SyntheticSpec) -> Dataset:
    templates = make_templates(spec)
    rng = np.random.default_rng(spec.seed)
    tr_x, tr_y, tr_m = _draw(templates, spec.train_size, spec, rng)
    te_x, te_y, te_m = _draw(templates, spec.test_size, spec, rng)
    masks = spec.family == "blobs"
    return Dataset(tr_x, tr_y, te_x, te_y, templates,
                   tr_m if masks else None, te_m if masks else None)


def nearest_template(images: np.ndarray, templates: np.ndarray) -> np.ndarray:
    """Oracle classifier: closest template over all circular shifts (channel mean)."""
    n = templates.shape[-1]
    gray = images.mean(axis=1)
    best = np.full((len(images), len(templates)), np.inf)
    for k, t in enumerate(templates):
        for a in range(n):
            for b in range(n):
                d = ((gray - np.roll(t, (a, b), (0, 1))) ** 2).sum(axis=(1, 2))
                best[:, k] = np.minimum(best[:, k], d)
    return np.argmax(-best, axis=1)


# -- on-disk layout: <root>/<split>/<index>.lpst + manifest.csv ---------------

def write_split(root: str, split: str, images: np.ndarray, labels=None, masks=None) -> str:
    """Write one tensor file per sample and a manifest; returns the manifest path."""
    folder = os.path.join(root, split)
    os.makedirs(folder, exist_ok=True)
    rows: List[Tuple[str, str]] = []
    for i, img in enumerate(images):
        name = f"{i:05d}.lpst"
        save_tensors(os.path.join(folder, name), {"image": img})
        if masks is not None:
            mname = f"{i:05d}_mask.lpst"
            save_tensors(os.path.join(folder, mname), {"mask": masks[i]})
            rows.append((name, mname))
        else:
            rows.append((name, str(int(labels[i]))))
    path = os.path.join(folder, "manifest.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["file", "mask_file" if masks is not None else "label"])
        writer.writerows(rows)
    return path


def read_manifest(path: str):
    """Load a manifest written by :func:`write_split` (or by hand).

    Returns ``(images, labels)`` for classification manifests and
    ``(images, masks)`` for segmentation manifests.
    """
    folder = os.path.dirname(os.path.abspath(path))
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[0] != "file" or header[1] not in ("label", "mask_file"):
            raise ValueError(f"{path}: expected header 'file,label' or 'file,mask_file'")
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: manifest lists no samples")
    images = np.stack([load_tensors(os.path.join(folder, r[0]))["image"] for r in rows])
    if header[1] == "label":
        return images, np.array([int(r[1]) for r in rows], dtype=np.int64)
    masks = np.stack([load_tensors(os.path.join(folder, r[1]))["mask"] for r in rows])
    return images, masks
