"""Tokenizers for the text towers.

Two schemes are supported: raw UTF-8 bytes (used by the deterministic
reference encoder) and lower-cased byte-pair encoding with start/end
markers (used by exported contrastively-trained checkpoints, whose merge
table ships inside the model directory).
"""

from __future__ import annotations

import gzip
import html
import re
from functools import lru_cache

from ..errors import ConfigError, TruncationError


class ByteTokenizer:
    """UTF-8 bytes as token ids; vocabulary size 256."""

    vocab_size = 256

    def __init__(self, context_length: int = 64):
        self.context_length = context_length

    def encode(self, text: str):
        ids = list(text.encode("utf-8"))
        if len(ids) > self.context_length:
            raise TruncationError(
                f"prompt of {len(ids)} byte tokens exceeds context "
                f"{self.context_length}: {text!r}"
            )
        if not ids:
            ids = [0]
        return ids


@lru_cache()
def _bytes_to_unicode():
    """Reversible byte -> printable-unicode map used by the BPE vocabulary."""
    bs = list(range(ord("!"), ord("~") + 1)) + \
         list(range(ord("\xa1"), ord("\xac") + 1)) + \
         list(range(ord("\xae"), ord("\xff") + 1))
    cs = bs[:]
    n = 0
    for b in range(256):
        if b not in bs:
            bs.append(b)
            cs.append(256 + n)
            n += 1
    return dict(zip(bs, [chr(c) for c in cs]))


def _get_pairs(word):
    return {(word[i], word[i + 1]) for i in range(len(word) - 1)}


_WORD_RE = re.compile(
    r"""<\|startoftext\|>|<\|endoftext\|>|'s|'t|'re|'ve|'m|'ll|'d|[\p{L}]+|[\p{N}]|[^\s\p{L}\p{N}]+"""
    .replace(r"\p{L}", r"a-zA-Z").replace(r"\p{N}", r"0-9"),
    re.IGNORECASE,
)


class BpeTokenizer:
    """Lower-cased BPE with ``<|startoftext|>`` / ``<|endoftext|>`` markers.

    The merge table is a gzipped text file, one merge per line, with the
    standard one-line header; token ids follow the conventional layout
    (bytes, byte+``</w>``, merges, then the two specials).
    """

    def __init__(self, merges_path, context_length: int = 77):
        self.context_length = context_length
        with gzip.open(merges_path, "rt", encoding="utf-8") as fh:
            lines = fh.read().split("\n")
        merges = [tuple(line.split()) for line in lines[1:] if len(line.split()) == 2]
        self.byte_encoder = _bytes_to_unicode()
        vocab = list(self.byte_encoder.values())
        vocab = vocab + [v + "</w>" for v in vocab]
        for merge in merges:
            vocab.append("".join(merge))
        vocab.extend(["<|startoftext|>", "<|endoftext|>"])
        self.encoder = {tok: i for i, tok in enumerate(vocab)}
        self.bpe_ranks = {merge: i for i, merge in enumerate(merges)}
        self.sot = self.encoder["<|startoftext|>"]
        self.eot = self.encoder["<|endoftext|>"]
        self.vocab_size = len(vocab)
        self._cache = {}

    def _bpe(self, token: str) -> str:
        if token in self._cache:
            return self._cache[token]
        word = tuple(token[:-1]) + (token[-1] + "</w>",)
        pairs = _get_pairs(word)
        if not pairs:
            return token + "</w>"
        while True:
            bigram = min(pairs, key=lambda p: self.bpe_ranks.get(p, float("inf")))
            if bigram not in self.bpe_ranks:
                break
            first, second = bigram
            new_word = []
            i = 0
            while i < len(word):
                try:
                    j = word.index(first, i)
                except ValueError:
                    new_word.extend(word[i:])
                    break
                new_word.extend(word[i:j])
                i = j
                if i < len(word) - 1 and word[i + 1] == second:
                    new_word.append(first + second)
                    i += 2
                else:
                    new_word.append(word[i])
                    i += 1
            word = tuple(new_word)
            if len(word) == 1:
                break
            pairs = _get_pairs(word)
        out = " ".join(word)
        self._cache[token] = out
        return out

    def encode(self, text: str):
        text = html.unescape(html.unescape(text))
        text = re.sub(r"\s+", " ", text).strip().lower()
        ids = [self.sot]
        for token in _WORD_RE.findall(text):
            token = "".join(self.byte_encoder[b] for b in token.encode("utf-8"))
            ids.extend(self.encoder[t] for t in self._bpe(token).split(" "))
        ids.append(self.eot)
        if len(ids) > self.context_length:
            raise TruncationError(
                f"prompt of {len(ids)} BPE tokens exceeds context "
                f"{self.context_length}: {text!r}"
            )
        return ids


def make_tokenizer(spec: dict, model_dir=None):
    """Instantiate a tokenizer from an interchange ``tokenizer`` spec."""
    kind = spec.get("type")
    if kind == "byte":
        return ByteTokenizer(context_length=int(spec.get("context_length", 64)))
    if kind == "bpe":
        merges = spec.get("merges_file")
        if merges is None:
            raise ConfigError("bpe tokenizer spec requires 'merges_file'")
        path = merges if model_dir is None else f"{model_dir}/{merges}"
        return BpeTokenizer(path, context_length=int(spec.get("context_length", 77)))
    raise ConfigError(f"unknown tokenizer type {kind!r}")
