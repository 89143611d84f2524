"""Numerical parity checks between a source checkpoint and its export.

The exported directory is loaded through the runtime package (the
consumer of the interchange format) and compared against the torch
forward passes on fixed inputs.
"""

from __future__ import annotations

import numpy as np
import torch

from .torch_clip import MiniClip


def fixed_images(model: MiniClip, count: int = 8) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(99))
    size = model.arch.image_size
    return rng.standard_normal((count, 3, size, size))


def fixed_token_batch(model: MiniClip, count: int = 8) -> list:
    rng = np.random.Generator(np.random.PCG64(101))
    vocab = model.arch.vocab_size
    ids = []
    for _ in range(count):
        length = int(rng.integers(3, min(16, model.arch.context_length)))
        row = rng.integers(1, vocab - 1, size=length)
        row[-1] = vocab - 1  # end marker carries the highest id
        ids.append(row.tolist())
    return ids


def cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    a = a / np.linalg.norm(a, axis=-1, keepdims=True)
    b = b / np.linalg.norm(b, axis=-1, keepdims=True)
    return float(np.max(1.0 - np.einsum("nd,nd->n", a, b)))


def verify_export(model: MiniClip, model_dir: str, count: int = 8,
                  tolerance: float = 1e-4) -> dict:
    """Compare global-image and text embeddings; raise on mismatch."""
    from winseg.encoders import load_interchange

    exported = load_interchange(model_dir)
    images = fixed_images(model, count)
    with torch.no_grad():
        source_img = model.encode_image(torch.tensor(images, dtype=torch.float32))
    exported_img = np.stack([exported.encode_image_global(img) for img in images])
    image_distance = cosine_distance(source_img.numpy(), exported_img)

    token_rows = fixed_token_batch(model, count)
    max_len = max(len(r) for r in token_rows)
    padded = torch.zeros((len(token_rows), max_len), dtype=torch.long)
    for i, row in enumerate(token_rows):
        padded[i, : len(row)] = torch.tensor(row)
    with torch.no_grad():
        source_txt = model.encode_text(padded)
    exported_txt = np.stack([exported.text.forward([row]) for row in token_rows])[:, 0]
    exported_txt /= np.linalg.norm(exported_txt, axis=-1, keepdims=True)
    text_distance = cosine_distance(source_txt.numpy(), exported_txt)

    # dropped-patch semantics: a full keep list must reproduce the
    # standard forward on both sides
    full = torch.arange(model.arch.grid ** 2).unsqueeze(0)
    with torch.no_grad():
        kept = model.encode_image(torch.tensor(images[:1], dtype=torch.float32),
                                  keep_indices=full)
    keep_distance = cosine_distance(kept.numpy(), source_img.numpy()[:1])

    result = {
        "image_cosine_distance": image_distance,
        "text_cosine_distance": text_distance,
        "full_keep_list_distance": keep_distance,
        "tolerance": tolerance,
        "images": count,
    }
    failures = {k: v for k, v in result.items()
                if k.endswith("distance") and v > tolerance}
    if failures:
        raise AssertionError(f"export disagrees with source: {failures}")
    return result
