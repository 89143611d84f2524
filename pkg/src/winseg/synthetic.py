"""Synthetic inspection dataset used by the regression suite and demos.

Normal images are a uniform texture with mild per-image noise; defective
images additionally carry one high-contrast square patch.  The tree is
written in the standard benchmark layout so the evaluation pipeline can
consume it unchanged.
"""

from __future__ import annotations

import os

import numpy as np
from PIL import Image

DEFECT_NAME = "square"


def _texture(rng, size: int, base: float = 0.55, noise: float = 0.03) -> np.ndarray:
    img = np.clip(base + rng.standard_normal((size, size, 3)) * noise, 0.0, 1.0)
    return img


def _save_rgb(img01: np.ndarray, path: str) -> None:
    Image.fromarray((img01 * 255.0 + 0.5).astype(np.uint8)).save(path)


def generate_toy_dataset(root, category: str = "widget", size: int = 240,
                         n_train: int = 4, n_test_normal: int = 8,
                         n_test_defect: int = 8, defect_side: int = 48,
                         seed: int = 0) -> str:
    """Write a single-category dataset under root; returns the root path."""
    rng = np.random.Generator(np.random.PCG64(seed))
    cat = os.path.join(str(root), category)
    train_dir = os.path.join(cat, "train", "good")
    test_good = os.path.join(cat, "test", "good")
    test_bad = os.path.join(cat, "test", DEFECT_NAME)
    gt_dir = os.path.join(cat, "ground_truth", DEFECT_NAME)
    for d in (train_dir, test_good, test_bad, gt_dir):
        os.makedirs(d, exist_ok=True)

    for i in range(n_train):
        _save_rgb(_texture(rng, size), os.path.join(train_dir, f"{i:03d}.png"))
    for i in range(n_test_normal):
        _save_rgb(_texture(rng, size), os.path.join(test_good, f"{i:03d}.png"))
    for i in range(n_test_defect):
        img = _texture(rng, size)
        side = defect_side
        top = int(rng.integers(0, size - side))
        left = int(rng.integers(0, size - side))
        # alternate dark and bright defects, both far outside the texture range
        value = 0.02 if i % 2 == 0 else 0.98
        img[top:top + side, left:left + side, :] = value
        mask = np.zeros((size, size), dtype=np.uint8)
        mask[top:top + side, left:left + side] = 255
        _save_rgb(img, os.path.join(test_bad, f"{i:03d}.png"))
        Image.fromarray(mask).save(os.path.join(gt_dir, f"{i:03d}_mask.png"))
    return str(root)
