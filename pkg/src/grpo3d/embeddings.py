"""Deterministic hashed bag-of-words embeddings and cosine similarity.

Each token is hashed with 64-bit FNV-1a over ``namespace + b"\\x00" + token``.
The low bits (mod ``dim``) pick the coordinate and bit 63 picks the sign, so
features are mean-zero and unrelated token streams have near-zero cosine.
"""

from __future__ import annotations

import math
import re
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np

CHANNELS = ("text", "image", "point3d", "jointText", "jointImage")

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

_PUNCT = re.compile(r"[^\w\s]")


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK64
    return h


def tokenize(text: str) -> list[str]:
    """Lowercase, strip punctuation, split on whitespace."""
    return _PUNCT.sub(" ", text.lower()).split()


@lru_cache(maxsize=65536)
def _token_slot(namespace: str, token: str, dim: int) -> tuple[int, float]:
    h = fnv1a_64(namespace.encode("utf-8") + b"\x00" + token.encode("utf-8"))
    sign = -1.0 if (h >> 63) & 1 else 1.0
    return h % dim, sign


def hashed_embedding(namespace: str, tokens: Iterable[str], dim: int) -> np.ndarray:
    vec = np.zeros(dim)
    for tok in tokens:
        idx, sign = _token_slot(namespace, tok.lower(), dim)
        vec[idx] += sign
    norm = np.linalg.norm(vec)
    if norm > 0.0:
        vec /= norm
    return vec


class EmbeddingProvider:
    """Five named embedding channels over token streams.

    ``namespaces`` maps a channel to the string mixed into the hash. By
    default every channel hashes under its own name, so the same tokens land
    on unrelated vectors in different channels. :meth:`aligned` builds a
    provider whose comparable channels share a namespace, which is what the
    view scorer needs for cross-modal cosines to carry signal.
    """

    def __init__(self, dim: int = 64, namespaces: Mapping[str, str] | None = None):
        if dim < 1:
            raise ValueError("embedding dimension must be positive")
        self.dim = int(dim)
        self.namespaces = {c: c for c in CHANNELS}
        if namespaces:
            unknown = set(namespaces) - set(CHANNELS)
            if unknown:
                raise ValueError(f"unknown channels: {sorted(unknown)}")
            self.namespaces.update(namespaces)

    @classmethod
    def aligned(cls, dim: int = 64) -> "EmbeddingProvider":
        return cls(
            dim,
            {
                "text": "scene",
                "image": "scene",
                "point3d": "scene",
                "jointText": "joint",
                "jointImage": "joint",
            },
        )

    def embed(self, channel: str, tokens: Sequence[str]) -> np.ndarray:
        if channel not in self.namespaces:
            raise ValueError(f"unknown channel {channel!r}")
        return hashed_embedding(self.namespaces[channel], tokens, self.dim)

    def embed_text(self, channel: str, text: str) -> np.ndarray:
        return self.embed(channel, tokenize(text))


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = math.sqrt(float(np.dot(u, u)))
    nv = math.sqrt(float(np.dot(v, v)))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u, v)) / (nu * nv)
