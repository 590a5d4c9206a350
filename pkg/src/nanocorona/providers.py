"""Embedding providers: synthetic locality-sensitive encoders and the
precomputed-vector provider backed by a cache file."""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import DimensionError, ProviderError
from .prompts import PromptText, canonical_hash

PROTEIN_DIM = 2560
TEXT_DIM = 4096

MODALITY_PROTEIN = "protein"
MODALITY_TEXT = "text"


class EmbeddingProvider:
    """Maps input text (sequence or prompt) to a fixed-dimension vector."""

    provider_id: str
    modality: str
    dim: int
    deterministic: bool = True

    def embed(self, text: str) -> np.ndarray:
        raise NotImplementedError


def _validate_vector(vec: np.ndarray, dim: int, source: str) -> np.ndarray:
    vec = np.asarray(vec, dtype=np.float32)
    if vec.ndim != 1 or vec.shape[0] != dim:
        raise DimensionError(
            f"{source} returned shape {vec.shape}, expected ({dim},)")
    if not np.all(np.isfinite(vec)):
        raise ProviderError(f"{source} returned non-finite values")
    return vec


def _bucket(token: str, n_buckets: int) -> int:
    digest = hashlib.sha256(token.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") % n_buckets


class _HashedProjectionProvider(EmbeddingProvider):
    """Token counts hashed into buckets, then a seeded Gaussian projection.

    Each bucket owns a fixed pseudo-random direction seeded by (seed, bucket),
    so only the buckets present in the input are ever materialized.  Similar
    inputs share buckets and therefore land near each other.
    """

    n_buckets: int

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._directions: dict[int, np.ndarray] = {}

    def _tokens(self, text: str) -> list[str]:
        raise NotImplementedError

    def _direction(self, bucket: int) -> np.ndarray:
        cached = self._directions.get(bucket)
        if cached is None:
            rng = np.random.default_rng([self.seed, bucket])
            cached = rng.standard_normal(self.dim)
            self._directions[bucket] = cached
        return cached

    def embed(self, text: str) -> np.ndarray:
        if not text:
            raise ProviderError("empty input")
        counts: dict[int, int] = {}
        for token in self._tokens(text):
            b = _bucket(token, self.n_buckets)
            counts[b] = counts.get(b, 0) + 1
        vec = np.zeros(self.dim, dtype=np.float64)
        for b in sorted(counts):
            vec += counts[b] * self._direction(b)
        norm = np.linalg.norm(vec)
        if norm == 0:
            raise ProviderError("degenerate input: zero embedding")
        return (vec / norm).astype(np.float32)


class SyntheticProteinProvider(_HashedProjectionProvider):
    """Overlapping 3-mer counts hashed into 4096 buckets, projected to 2560."""

    modality = MODALITY_PROTEIN
    dim = PROTEIN_DIM
    n_buckets = 4096

    def __init__(self, seed: int = 0):
        super().__init__(seed)
        self.provider_id = f"synthetic-protein-{seed}"

    def _tokens(self, text: str) -> list[str]:
        if len(text) < 3:
            return [text]
        return [text[i:i + 3] for i in range(len(text) - 2)]


class SyntheticTextProvider(_HashedProjectionProvider):
    """Word unigram+bigram counts hashed into 8192 buckets, projected to 4096."""

    modality = MODALITY_TEXT
    dim = TEXT_DIM
    n_buckets = 8192

    def __init__(self, seed: int = 0):
        super().__init__(seed)
        self.provider_id = f"synthetic-text-{seed}"

    def _tokens(self, text: str) -> list[str]:
        words = text.lower().split()
        return words + [f"{a} {b}" for a, b in zip(words, words[1:])]


class PrecomputedProvider(EmbeddingProvider):
    """Serves vectors produced offline by real encoders, keyed by input hash."""

    def __init__(self, store, modality: str, dim: int,
                 provider_id: str = "precomputed"):
        self.store = store
        self.modality = modality
        self.dim = dim
        self.provider_id = provider_id

    def embed(self, text: str) -> np.ndarray:
        entry = self.store.get(canonical_hash(text))
        if entry is None:
            raise ProviderError("no precomputed vector for input")
        _, vec = entry
        return _validate_vector(vec, self.dim, self.provider_id)


def embed_protein(sequence: str, provider: EmbeddingProvider) -> np.ndarray:
    if provider.modality != MODALITY_PROTEIN:
        raise ProviderError(f"provider {provider.provider_id} is not a "
                            "protein provider")
    vec = provider.embed(sequence)
    return _validate_vector(vec, provider.dim, provider.provider_id)


def embed_text(prompt: PromptText | str,
               provider: EmbeddingProvider) -> np.ndarray:
    if provider.modality != MODALITY_TEXT:
        raise ProviderError(f"provider {provider.provider_id} is not a "
                            "text provider")
    text = prompt.text if isinstance(prompt, PromptText) else prompt
    if not text:
        raise ProviderError("empty input")
    vec = provider.embed(text)
    return _validate_vector(vec, provider.dim, provider.provider_id)
