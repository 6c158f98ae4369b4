"""Seeded geometric augmentation of an image together with its instance masks."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .annotation import mask_to_bbox, rle_decode, rle_encode
from .dataset import Instance, Sample
from .parcel_extract import BitMask

_UINT64 = (1 << 64) - 1


@dataclass(frozen=True)
class AugmentConfig:
    rotation_range_deg: tuple[float, float] = (-50.0, 50.0)
    vertical_flip: bool = True
    per_image_outputs: int = 2
    seed: int = 0

    def __post_init__(self):
        lo, hi = (float(v) for v in self.rotation_range_deg)
        if not (math.isfinite(lo) and math.isfinite(hi)) or max(abs(lo), abs(hi)) > 180:
            raise ValueError("rotation bounds must be finite and within [-180, 180]")
        if lo > hi:
            raise ValueError(f"rotation range ({lo}, {hi}) is inverted")
        if self.per_image_outputs < 0:
            raise ValueError("per_image_outputs must be >= 0")
        object.__setattr__(self, "rotation_range_deg", (lo, hi))


def _bits(m) -> np.ndarray:
    return m.bits if isinstance(m, BitMask) else np.asarray(m, dtype=bool)


def rotate(image: np.ndarray, masks: Sequence, theta_deg: float):
    """Rotate about the image centre; positive angles turn counter-clockwise on screen.

    The canvas keeps its size. Image channels are bilinear, masks nearest
    neighbour, and output pixels whose source lies outside the image become 0.
    """
    image = np.asarray(image)
    h, w = image.shape[:2]
    t = math.radians(theta_deg)
    c, s = math.cos(t), math.sin(t)
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    rows, cols = np.mgrid[0:h, 0:w].astype(float)
    dx, dy = cols - cx, rows - cy
    # inverse map: rotate output coordinates back by -theta (y axis points down)
    src_x = c * dx - s * dy + cx
    src_y = s * dx + c * dy + cy
    covered = (src_x >= -0.5) & (src_x <= w - 0.5) & (src_y >= -0.5) & (src_y <= h - 0.5)

    x = np.clip(src_x, 0, w - 1)
    y = np.clip(src_y, 0, h - 1)
    x0 = np.floor(x).astype(int)
    y0 = np.floor(y).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx, fy = (x - x0)[..., None], (y - y0)[..., None]
    img = image.astype(float).reshape(h, w, -1)
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    out = np.rint(top * (1 - fy) + bot * fy)
    out[~covered] = 0
    out = np.clip(out, 0, 255).astype(image.dtype).reshape(image.shape)

    nx = np.clip(np.floor(src_x + 0.5).astype(int), 0, w - 1)
    ny = np.clip(np.floor(src_y + 0.5).astype(int), 0, h - 1)
    rotated = [BitMask(_bits(m)[ny, nx] & covered) for m in masks]
    return out, rotated


def flip_vertical(image: np.ndarray, masks: Sequence):
    """Reverse row order (top to bottom)."""
    return np.ascontiguousarray(np.asarray(image)[::-1]), [BitMask(_bits(m)[::-1]) for m in masks]


def _rng(seed: int, image_index: int, variant: int) -> np.random.Generator:
    ss = np.random.SeedSequence([seed & _UINT64, image_index, variant])
    return np.random.Generator(np.random.Philox(ss))


def augment_sample(sample: Sample, image_index: int, variant: int, cfg: AugmentConfig) -> Sample:
    """One augmented copy; depends only on (cfg.seed, image_index, variant)."""
    rng = _rng(cfg.seed, image_index, variant)
    theta = float(rng.uniform(*cfg.rotation_range_deg))
    flip = bool(rng.random() < 0.5)
    masks = [rle_decode(i.rle) for i in sample.instances]
    image, masks = rotate(sample.image, masks, theta)
    if cfg.vertical_flip and flip:
        image, masks = flip_vertical(image, masks)
    instances = []
    for inst, m in zip(sample.instances, masks):
        box = mask_to_bbox(m)
        if box is None:
            continue  # rotated entirely off the canvas
        instances.append(Instance(inst.instance_id, inst.label, rle_encode(m), box))
    return Sample(variant_name(sample.name, variant), image, instances)


def variant_name(stem: str, k: int) -> str:
    return f"{stem}_aug{k}"


def expand_dataset(dataset: Sequence[Sample], cfg: AugmentConfig, jobs: int = 1) -> list[Sample]:
    """Originals followed by ``per_image_outputs`` variants of each, in input order."""
    dataset = list(dataset)
    tasks = [(i, k) for i in range(len(dataset)) for k in range(cfg.per_image_outputs)]

    def run(task):
        i, k = task
        return augment_sample(dataset[i], i, k, cfg)

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        variants = list(pool.map(run, tasks))
    out = []
    for i, sample in enumerate(dataset):
        out.append(sample)
        out.extend(variants[i * cfg.per_image_outputs : (i + 1) * cfg.per_image_outputs])
    return out
