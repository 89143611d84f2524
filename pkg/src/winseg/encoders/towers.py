"""Vision and text towers evaluated in numpy from explicit weight sets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError
from . import nn


@dataclass
class VisionTower:
    """ViT-style image tower: patch embedding, class token, blocks, projection."""

    patch_size: int
    grid: tuple
    patch_w: np.ndarray        # (d_model, 3 * p * p)
    class_emb: np.ndarray      # (d_model,)
    pos_emb: np.ndarray        # (1 + n_patches, d_model)
    blocks: list
    ln_post_g: np.ndarray
    ln_post_b: np.ndarray
    proj: np.ndarray           # (d_model, d_image)
    activation: str = "gelu"
    patch_b: np.ndarray = None
    ln_pre_g: np.ndarray = None
    ln_pre_b: np.ndarray = None

    def patchify(self, images: np.ndarray) -> np.ndarray:
        """(B, 3, H, W) -> (B, n_patches, 3*p*p) in row-major patch order."""
        b, c, h, w = images.shape
        p = self.patch_size
        gh, gw = h // p, w // p
        x = images.reshape(b, c, gh, p, gw, p)
        x = x.transpose(0, 2, 4, 1, 3, 5)
        return x.reshape(b, gh * gw, c * p * p)

    def embed_patches(self, image: np.ndarray) -> np.ndarray:
        """(3, H, W) -> (n_patches, d_model); each row sees only its patch."""
        tokens = self.patchify(image[None])[0] @ self.patch_w.T
        if self.patch_b is not None:
            tokens = tokens + self.patch_b
        return tokens

    def forward_tokens(self, tokens: np.ndarray, pos: np.ndarray,
                       key_mask: np.ndarray = None):
        """Run embedded patch tokens plus the class token through the blocks.

        tokens: (B, n, d_model) already patch-embedded; pos: matching
        positional rows.  Returns (class_embedding, patch_tokens), both
        projected into the joint space.
        """
        act = nn.ACTIVATIONS[self.activation]
        b = tokens.shape[0]
        cls = np.broadcast_to(self.class_emb + self.pos_emb[0],
                              (b, 1, self.class_emb.shape[0]))
        x = np.concatenate([cls, tokens + pos], axis=1)
        if self.ln_pre_g is not None:
            x = nn.layer_norm(x, self.ln_pre_g, self.ln_pre_b)
        for blk in self.blocks:
            x = nn.block(x, blk, act, key_mask=key_mask)
        x = nn.layer_norm(x, self.ln_post_g, self.ln_post_b)
        out = x @ self.proj
        return out[:, 0], out[:, 1:]

    def forward(self, image: np.ndarray, keep: np.ndarray = None,
                key_mask: np.ndarray = None):
        """Full or dropped-token forward of one image.

        keep: optional (B, n_keep) int array of patch indices; each batch
        row becomes an independent forward over only those tokens, which
        is how a batch of windows runs in one call.  key_mask: boolean
        (1 + n_patches,) array restricting attention keys instead of
        dropping (verification path).
        """
        all_tokens = self.embed_patches(image)
        if keep is not None:
            tokens = all_tokens[keep]          # (B, n_keep, d_model)
            pos = self.pos_emb[1 + keep]
        else:
            tokens = all_tokens[None]
            pos = self.pos_emb[None, 1:]
        return self.forward_tokens(tokens, pos, key_mask=key_mask)


@dataclass
class TextTower:
    """Token-embedding transformer with configurable pooling."""

    tok_emb: np.ndarray   # (vocab, d_model)
    pos_emb: np.ndarray   # (context, d_model)
    blocks: list
    ln_final_g: np.ndarray
    ln_final_b: np.ndarray
    proj: np.ndarray      # (d_model, d_text)
    activation: str = "gelu"
    causal: bool = False
    pool: str = "mean"    # mean | last | argmax_id

    def forward(self, ids_batch) -> np.ndarray:
        """Encode a list of token-id sequences into (B, d_text).

        Causal towers pooled at a position-dependent token are batch-padded
        (padding cannot leak backwards); other configurations run per
        sequence so pooling sees only real tokens.
        """
        if self.causal and self.pool in ("last", "argmax_id"):
            return self._forward_padded(ids_batch)
        return np.stack([self._forward_one(ids) for ids in ids_batch])

    def _pool_index(self, ids) -> int:
        if self.pool == "last":
            return len(ids) - 1
        if self.pool == "argmax_id":
            return int(np.argmax(ids))
        raise ContractError(f"unknown pool mode {self.pool!r}")

    def _embed(self, ids: np.ndarray) -> np.ndarray:
        if len(ids) == 0:
            raise ContractError("cannot encode an empty token sequence")
        if len(ids) > self.pos_emb.shape[0]:
            raise ContractError(f"sequence length {len(ids)} exceeds context {self.pos_emb.shape[0]}")
        return self.tok_emb[np.asarray(ids)] + self.pos_emb[: len(ids)]

    def _forward_one(self, ids) -> np.ndarray:
        act = nn.ACTIVATIONS[self.activation]
        x = self._embed(ids)[None]
        for blk in self.blocks:
            x = nn.block(x, blk, act, causal=self.causal)
        x = nn.layer_norm(x, self.ln_final_g, self.ln_final_b)
        if self.pool == "mean":
            pooled = x[0].mean(axis=0)
        else:
            pooled = x[0, self._pool_index(ids)]
        return pooled @ self.proj

    def _forward_padded(self, ids_batch) -> np.ndarray:
        act = nn.ACTIVATIONS[self.activation]
        max_len = max(len(ids) for ids in ids_batch)
        padded = np.zeros((len(ids_batch), max_len), dtype=np.int64)
        for row, ids in enumerate(ids_batch):
            if len(ids) == 0:
                raise ContractError("cannot encode an empty token sequence")
            padded[row, : len(ids)] = ids
        if max_len > self.pos_emb.shape[0]:
            raise ContractError(f"sequence length {max_len} exceeds context {self.pos_emb.shape[0]}")
        x = self.tok_emb[padded] + self.pos_emb[None, :max_len]
        for blk in self.blocks:
            x = nn.block(x, blk, act, causal=self.causal)
        x = nn.layer_norm(x, self.ln_final_g, self.ln_final_b)
        pick = np.array([self._pool_index(ids) for ids in ids_batch])
        return x[np.arange(len(ids_batch)), pick] @ self.proj
