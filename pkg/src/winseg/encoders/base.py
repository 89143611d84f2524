"""Encoder-facing types and the backend-independent encoder behaviour.

A concrete encoder is a pair of towers (vision, text) plus a tokenizer.
The vision tower supports three entry styles: the full token grid, a
dropped-token subset (only the patches inside a window participate), and
a masked-attention forward kept for verifying that the dropped-token
shortcut is exact.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ContractError
from . import nn


@dataclass(frozen=True)
class EncoderConfig:
    """Geometry and width declaration for an encoder.

    d_image is the image tower's internal width (its penultimate token
    dimension); d_text is the shared output embedding dimension that all
    text and image embeddings are projected into.
    """

    input_resolution: int = 240
    patch_size: int = 16
    grid: tuple = (15, 15)
    d_image: int = 896
    d_text: int = 640

    def __post_init__(self):
        gh, gw = self.grid
        if min(self.input_resolution, self.patch_size, gh, gw,
               self.d_image, self.d_text) <= 0:
            raise ConfigError("all encoder dimensions must be positive")
        if self.input_resolution != self.patch_size * gh or \
           self.input_resolution != self.patch_size * gw:
            raise ConfigError(
                f"resolution {self.input_resolution} != patch {self.patch_size} x grid {self.grid}"
            )

    @property
    def n_patches(self) -> int:
        return self.grid[0] * self.grid[1]


@dataclass(frozen=True)
class WindowMask:
    """A k x k block of patch positions anchored at its top-left corner."""

    anchor: tuple
    kernel: int
    grid: tuple

    def __post_init__(self):
        i, j = self.anchor
        gh, gw = self.grid
        k = self.kernel
        if k < 1:
            raise ContractError("kernel must be >= 1")
        if i < 0 or j < 0 or i + k > gh or j + k > gw:
            raise ContractError(f"window {self.anchor} kernel {k} exceeds grid {self.grid}")

    @property
    def indices(self) -> np.ndarray:
        """Flat row-major patch indices covered by the window."""
        i, j = self.anchor
        rows = np.arange(i, i + self.kernel)
        cols = np.arange(j, j + self.kernel)
        return (rows[:, None] * self.grid[1] + cols[None, :]).ravel()


@dataclass
class PatchFeatureMap:
    """Grid of unit feature vectors with a tag describing where they came from."""

    values: np.ndarray  # (h, w, d)
    origin: str         # "penultimate" or "window:<k>"

    @property
    def grid(self) -> tuple:
        return self.values.shape[:2]

    def flat(self) -> np.ndarray:
        h, w, d = self.values.shape
        return self.values.reshape(h * w, d)


class TokenWork:
    """Thread-safe counter of tokens that entered attention."""

    def __init__(self):
        self._lock = threading.Lock()
        self._count = 0

    def add(self, n: int) -> None:
        with self._lock:
            self._count += int(n)

    def reset(self) -> None:
        with self._lock:
            self._count = 0

    @property
    def value(self) -> int:
        with self._lock:
            return self._count


class Encoder:
    """Vision-language encoder over a (vision tower, text tower, tokenizer)."""

    def __init__(self, config: EncoderConfig, vision, text, tokenizer, name: str):
        if vision.proj.shape[1] != text.proj.shape[1]:
            raise ConfigError(
                f"towers project into different spaces: image {vision.proj.shape[1]} "
                f"vs text {text.proj.shape[1]}"
            )
        if text.proj.shape[1] != config.d_text:
            raise ConfigError(
                f"declared d_text {config.d_text} != tower output {text.proj.shape[1]}"
            )
        self.config = config
        self.vision = vision
        self.text = text
        self.tokenizer = tokenizer
        self.name = name
        self.embed_dim = int(text.proj.shape[1])
        self.token_work = TokenWork()

    # -- text ---------------------------------------------------------

    def encode_text(self, prompt: str) -> np.ndarray:
        return self.encode_texts([prompt])[0]

    def encode_texts(self, prompts) -> np.ndarray:
        ids = [self.tokenizer.encode(p) for p in prompts]
        out = self.text.forward(ids)
        return nn.l2_normalize(out)

    # -- images -------------------------------------------------------

    def _check_image(self, img: np.ndarray) -> np.ndarray:
        img = np.asarray(img, dtype=np.float64)
        res = self.config.input_resolution
        if img.shape != (3, res, res):
            raise ContractError(f"image shape {img.shape} != (3, {res}, {res})")
        if not np.all(np.isfinite(img)):
            raise ContractError("image contains non-finite values")
        return img

    def encode_image_global(self, img: np.ndarray) -> np.ndarray:
        img = self._check_image(img)
        cls, _ = self.vision.forward(img)
        self.token_work.add(self.config.n_patches + 1)
        return nn.l2_normalize(cls[0])

    def encode_patches(self, img: np.ndarray) -> PatchFeatureMap:
        img = self._check_image(img)
        _, patches = self.vision.forward(img)
        self.token_work.add(self.config.n_patches + 1)
        gh, gw = self.config.grid
        values = nn.l2_normalize(patches[0]).reshape(gh, gw, self.embed_dim)
        return PatchFeatureMap(values=values, origin="penultimate")

    def encode_window(self, img: np.ndarray, mask: WindowMask) -> np.ndarray:
        """Window embedding via the dropped-token forward (exactly local)."""
        img = self._check_image(img)
        self._check_mask(mask)
        keep = mask.indices[None, :]
        cls, _ = self.vision.forward(img, keep=keep)
        self.token_work.add(keep.shape[1] + 1)
        return nn.l2_normalize(cls[0])

    def encode_window_masked(self, img: np.ndarray, mask: WindowMask) -> np.ndarray:
        """Window embedding via full-length attention restricted to the window.

        Verification path: runs all tokens but lets attention see only the
        class token and the window's patches.  Must agree with
        encode_window to float accuracy.
        """
        img = self._check_image(img)
        self._check_mask(mask)
        allowed = np.zeros(self.config.n_patches + 1, dtype=bool)
        allowed[0] = True
        allowed[1 + mask.indices] = True
        cls, _ = self.vision.forward(img, key_mask=allowed)
        self.token_work.add(self.config.n_patches + 1)
        return nn.l2_normalize(cls[0])

    def encode_windows_batched(self, img: np.ndarray, masks) -> PatchFeatureMap:
        """One dropped-token forward per window, run as a single batch.

        Masks must share one kernel and form a dense row-major anchor
        grid (as produced by the window planner).
        """
        if not masks:
            raise ContractError("mask list must be non-empty")
        img = self._check_image(img)
        kernel = masks[0].kernel
        for m in masks:
            self._check_mask(m)
            if m.kernel != kernel:
                raise ContractError("all masks in a batch must share a kernel")
        rows = sorted({m.anchor[0] for m in masks})
        cols = sorted({m.anchor[1] for m in masks})
        if len(masks) != len(rows) * len(cols) or \
           sorted(m.anchor for m in masks) != [(i, j) for i in rows for j in cols]:
            raise ContractError("masks must form a dense anchor grid")
        order = sorted(range(len(masks)), key=lambda t: masks[t].anchor)
        keep = np.stack([masks[t].indices for t in order])
        cls, _ = self.vision.forward(img, keep=keep)
        self.token_work.add(len(masks) * (kernel * kernel + 1))
        values = nn.l2_normalize(cls).reshape(len(rows), len(cols), self.embed_dim)
        return PatchFeatureMap(values=values, origin=f"window:{kernel}")

    def _check_mask(self, mask: WindowMask) -> None:
        if mask.grid != tuple(self.config.grid):
            raise ContractError(f"mask grid {mask.grid} != encoder grid {self.config.grid}")

    def fingerprint(self) -> str:
        raise NotImplementedError
