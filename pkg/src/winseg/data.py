"""Dataset manifests, image preprocessing, tiling and on-disk formats."""

from __future__ import annotations

import csv
import json
import math
import os
import struct
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import ContractError, CoverageError, ManifestError

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")

CONTAINER_MAGIC = b"WCTF1"


# ---------------------------------------------------------------------------
# manifests

@dataclass(frozen=True)
class TestImage:
    path: str
    label: str                 # "normal" | "anomalous"
    mask_path: str = None      # required when label == "anomalous"


@dataclass
class CategoryData:
    name: str
    object_label: str
    train_normal: list
    test: list


@dataclass
class DatasetManifest:
    root: str
    layout: str
    categories: dict

    def category(self, name: str) -> CategoryData:
        if name not in self.categories:
            raise ManifestError(f"unknown category {name!r}; have {sorted(self.categories)}")
        return self.categories[name]


def _list_images(directory: str):
    try:
        names = sorted(os.listdir(directory))
    except FileNotFoundError:
        return None
    return [os.path.join(directory, n) for n in names
            if n.lower().endswith(IMAGE_EXTENSIONS)]


def _load_mvtec(root: str) -> DatasetManifest:
    categories = {}
    for cat in sorted(os.listdir(root)):
        cat_dir = os.path.join(root, cat)
        if not os.path.isdir(cat_dir) or not os.path.isdir(os.path.join(cat_dir, "test")):
            continue
        train = _list_images(os.path.join(cat_dir, "train", "good")) or []
        test_dir = os.path.join(cat_dir, "test")
        gt_dir = os.path.join(cat_dir, "ground_truth")
        tests = []
        missing = []
        for defect in sorted(os.listdir(test_dir)):
            defect_dir = os.path.join(test_dir, defect)
            if not os.path.isdir(defect_dir):
                continue
            images = _list_images(defect_dir) or []
            if defect == "good":
                tests.extend(TestImage(p, "normal") for p in images)
                continue
            if not os.path.isdir(gt_dir):
                raise ManifestError(f"category {cat!r} has defect images but no ground_truth directory")
            for p in images:
                stem = os.path.splitext(os.path.basename(p))[0]
                mask = os.path.join(gt_dir, defect, f"{stem}_mask.png")
                if not os.path.exists(mask):
                    missing.append(p)
                else:
                    tests.append(TestImage(p, "anomalous", mask))
        if missing:
            raise ManifestError(f"anomalous test images without masks in {cat!r}: {missing}")
        categories[cat] = CategoryData(
            name=cat,
            object_label=cat.replace("_", " "),
            train_normal=train,
            test=tests,
        )
    if not categories:
        raise ManifestError(f"no categories found under {root!r}")
    return DatasetManifest(root=root, layout="mvtec", categories=categories)


def _load_visa(root: str) -> DatasetManifest:
    split_file = os.path.join(root, "split_csv", "1cls.csv")
    if not os.path.exists(split_file):
        raise ManifestError(f"VisA split file not found: {split_file}")
    categories = {}
    missing = []
    with open(split_file, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            cat = row["object"]
            if cat not in categories:
                categories[cat] = CategoryData(
                    name=cat, object_label=cat.replace("_", " "),
                    train_normal=[], test=[])
            data = categories[cat]
            image = os.path.join(root, row["image"])
            label = "normal" if row["label"] == "normal" else "anomalous"
            if row["split"] == "train":
                if label == "normal":
                    data.train_normal.append(image)
                continue
            if label == "anomalous":
                mask = row.get("mask", "")
                mask_path = os.path.join(root, mask) if mask else ""
                if not mask or not os.path.exists(mask_path):
                    missing.append(image)
                    continue
                data.test.append(TestImage(image, label, mask_path))
            else:
                data.test.append(TestImage(image, label))
    if missing:
        raise ManifestError(f"anomalous test images without masks: {missing}")
    if not categories:
        raise ManifestError(f"no categories found in {split_file!r}")
    return DatasetManifest(root=root, layout="visa", categories=categories)


def load_manifest(root: str, layout: str = "mvtec") -> DatasetManifest:
    """Scan an on-disk benchmark tree into a manifest."""
    if not os.path.isdir(root):
        raise ManifestError(f"dataset root {root!r} does not exist")
    if layout == "mvtec":
        return _load_mvtec(root)
    if layout == "visa":
        return _load_visa(root)
    raise ManifestError(f"unknown layout {layout!r}; expected 'mvtec' or 'visa'")


# ---------------------------------------------------------------------------
# preprocessing

@dataclass(frozen=True)
class PreprocessSpec:
    target: int = 240
    interpolation: str = "bicubic"
    mean: tuple = (0.48145466, 0.4578275, 0.40821073)
    std: tuple = (0.26862954, 0.26130258, 0.27577711)


@dataclass
class PreprocessedImage:
    tensor: np.ndarray        # (3, H, W) standardized, shorter edge == target
    original_size: tuple      # (H, W) before resizing
    path: str = None


_RESAMPLING = {
    "bicubic": Image.Resampling.BICUBIC,
    "bilinear": Image.Resampling.BILINEAR,
}


def resize_chw(tensor: np.ndarray, out_hw: tuple, interpolation: str = "bicubic") -> np.ndarray:
    """Resize a channels-first float tensor with PIL's float-precision path."""
    out_h, out_w = out_hw
    resample = _RESAMPLING[interpolation]
    channels = [
        np.asarray(Image.fromarray(np.ascontiguousarray(c, dtype=np.float32), mode="F")
                   .resize((out_w, out_h), resample))
        for c in tensor
    ]
    return np.stack(channels)


def preprocess(source, spec: PreprocessSpec = None) -> PreprocessedImage:
    """Decode, scale to [0,1], standardize and resize the shorter edge."""
    spec = spec or PreprocessSpec()
    try:
        with Image.open(source) as img:
            rgb = np.asarray(img.convert("RGB"), dtype=np.float64)
    except Exception as exc:  # PIL raises several decode error types
        raise OSError(f"cannot decode image {source!r}: {exc}") from exc
    h, w = rgb.shape[:2]
    x = rgb.transpose(2, 0, 1) / 255.0
    mean = np.asarray(spec.mean)[:, None, None]
    std = np.asarray(spec.std)[:, None, None]
    x = (x - mean) / std
    if h <= w:
        new_h, new_w = spec.target, int(round(w * spec.target / h))
    else:
        new_h, new_w = int(round(h * spec.target / w)), spec.target
    if (new_h, new_w) != (h, w):
        x = resize_chw(x, (new_h, new_w), spec.interpolation)
    return PreprocessedImage(
        tensor=np.asarray(x, dtype=np.float32),
        original_size=(h, w),
        path=source if isinstance(source, (str, os.PathLike)) else None,
    )


def load_mask(path: str) -> np.ndarray:
    """Ground-truth mask as boolean array; 8-bit inputs binarize at >127."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"))
    return arr > 127


# ---------------------------------------------------------------------------
# tiling for non-square inputs

@dataclass(frozen=True)
class TilePlan:
    dims: tuple          # (H, W) of the resized image
    side: int            # square tile side, == min(H, W)
    boxes: tuple         # ((top, left, bottom, right), ...) pixel boxes

    @property
    def n_tiles(self) -> int:
        return len(self.boxes)


def plan_tiles(dims: tuple, side: int = None) -> TilePlan:
    """Cover the long axis with evenly spaced square tiles.

    Stride is capped at floor(0.8 * side) so adjacent tiles always overlap
    by at least 0.2 * side; anchors use integer floor spacing.
    """
    h, w = dims
    side = min(h, w) if side is None else side
    if side > min(h, w) or side < 1:
        raise ContractError(f"tile side {side} invalid for dims {dims}")
    span = max(h, w) - side
    if span == 0:
        anchors = [0]
    else:
        max_stride = int(0.8 * side)
        if max_stride < 1:
            raise ContractError(f"tile side {side} too small to tile dims {dims}")
        n = math.ceil(span / max_stride) + 1
        anchors = [(i * span) // (n - 1) for i in range(n)]
    if w >= h:
        boxes = tuple((0, a, side, a + side) for a in anchors)
    else:
        boxes = tuple((a, 0, a + side, side) for a in anchors)
    return TilePlan(dims=(h, w), side=side, boxes=boxes)


def extract_tile(tensor: np.ndarray, box: tuple) -> np.ndarray:
    top, left, bottom, right = box
    return tensor[:, top:bottom, left:right]


def merge_tile_predictions(tile_maps, scores, plan: TilePlan):
    """Per-pixel mean of overlapping tile maps plus the mean tile score."""
    if len(tile_maps) != plan.n_tiles or len(scores) != plan.n_tiles:
        raise ContractError("one prediction per planned tile is required")
    h, w = plan.dims
    acc = np.zeros((h, w))
    cover = np.zeros((h, w))
    for tile_map, box in zip(tile_maps, plan.boxes):
        top, left, bottom, right = box
        tile_map = np.asarray(tile_map)
        if tile_map.shape != (bottom - top, right - left):
            raise ContractError(f"tile map shape {tile_map.shape} != box {box}")
        acc[top:bottom, left:right] += tile_map
        cover[top:bottom, left:right] += 1
    if np.any(cover == 0):
        raise CoverageError("tile plan leaves pixels uncovered")
    return acc / cover, float(np.mean(scores))


# ---------------------------------------------------------------------------
# reference sampling

def sample_references(manifest: DatasetManifest, category: str, k: int, seed: int):
    """Draw K normal training images without replacement (PCG64 stream).

    The selection is returned in index-sorted order so the same seed gives
    a stable, hashable record of which references were used.
    """
    data = manifest.category(category)
    pool = data.train_normal
    if k < 1 or k > len(pool):
        raise ContractError(f"K={k} outside [1, {len(pool)}] for category {category!r}")
    rng = np.random.Generator(np.random.PCG64(seed))
    picked = sorted(rng.permutation(len(pool))[:k].tolist())
    return [pool[i] for i in picked]


# ---------------------------------------------------------------------------
# score-map and tensor-container formats

def export_heatmap(score_map: np.ndarray, path: str) -> None:
    """Write scores in [0,1] as 16-bit grayscale PNG (score * 65535, half-up)."""
    arr = np.asarray(score_map, dtype=np.float64)
    if arr.min() < -1e-9 or arr.max() > 1 + 1e-9:
        raise ContractError("score map must lie in [0, 1] for export")
    pixels = np.floor(np.clip(arr, 0.0, 1.0) * 65535 + 0.5).astype("<u2")
    image = Image.new("I;16", (pixels.shape[1], pixels.shape[0]))
    image.frombytes(pixels.tobytes())
    image.save(path, format="PNG")


def read_heatmap(path: str) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img, dtype=np.uint16)


def write_container(path: str, tensors: dict) -> None:
    """Serialize named float32 tensors: magic, manifest, raw payload."""
    entries = {}
    chunks = []
    offset = 0
    for name, value in tensors.items():
        arr = np.asarray(value, dtype="<f4")
        entries[name] = {"dtype": "f32", "shape": list(arr.shape), "offset": offset}
        chunks.append(np.ascontiguousarray(arr).tobytes())
        offset += arr.nbytes
    blob = json.dumps(entries).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CONTAINER_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for chunk in chunks:
            fh.write(chunk)


def read_container(path: str) -> dict:
    with open(path, "rb") as fh:
        magic = fh.read(len(CONTAINER_MAGIC))
        if magic != CONTAINER_MAGIC:
            raise ContractError(f"{path!r} is not a tensor container (magic {magic!r})")
        (blob_len,) = struct.unpack("<I", fh.read(4))
        entries = json.loads(fh.read(blob_len).decode("utf-8"))
        payload = fh.read()
    out = {}
    for name, entry in entries.items():
        if entry["dtype"] != "f32":
            raise ContractError(f"unsupported dtype {entry['dtype']!r} for {name!r}")
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=start)
        out[name] = arr.reshape(shape).copy()
    return out
