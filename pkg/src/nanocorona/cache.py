"""Content-addressed binary store for embedding vectors.

File format: append-only records of
    key (32 raw bytes) | provider_id length (uint32 LE) | provider_id bytes |
    dim (uint32 LE) | dim * float32 LE
plus a rebuildable JSON index mapping hex key -> record offset.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from .errors import CacheError
from .prompts import canonical_hash
from .providers import EmbeddingProvider, _validate_vector


class EmbeddingStore:
    """Append-only vector store with single-writer insertion semantics."""

    def __init__(self, path):
        self.path = str(path)
        self.index_path = self.path + ".idx.json"
        self._index: dict[str, int] = {}
        if os.path.exists(self.index_path):
            with open(self.index_path, encoding="utf-8") as fh:
                self._index = json.load(fh)
        elif os.path.exists(self.path):
            self.rebuild_index()

    def __contains__(self, key_hex: str) -> bool:
        return key_hex in self._index

    def __len__(self) -> int:
        return len(self._index)

    def keys(self) -> list[str]:
        return sorted(self._index)

    def put(self, key_hex: str, provider_id: str, vector: np.ndarray) -> None:
        vec = np.asarray(vector, dtype=np.float32)
        pid = provider_id.encode("utf-8")
        record = (bytes.fromhex(key_hex)
                  + struct.pack("<I", len(pid)) + pid
                  + struct.pack("<I", vec.shape[0])
                  + vec.astype("<f4").tobytes())
        with open(self.path, "ab") as fh:
            offset = fh.tell()
            fh.write(record)
        self._index[key_hex] = offset
        self._save_index()

    def get(self, key_hex: str):
        """Return (provider_id, vector) or None."""
        offset = self._index.get(key_hex)
        if offset is None:
            return None
        with open(self.path, "rb") as fh:
            fh.seek(offset)
            key = fh.read(32)
            if len(key) != 32 or key.hex() != key_hex:
                raise CacheError(f"index points at wrong record for {key_hex}")
            (pid_len,) = struct.unpack("<I", fh.read(4))
            provider_id = fh.read(pid_len).decode("utf-8")
            (dim,) = struct.unpack("<I", fh.read(4))
            payload = fh.read(dim * 4)
            if len(payload) != dim * 4:
                raise CacheError(f"truncated payload for {key_hex}")
            vec = np.frombuffer(payload, dtype="<f4").copy()
        return provider_id, vec

    def rebuild_index(self) -> None:
        """Scan the data file and regenerate the index."""
        index: dict[str, int] = {}
        if os.path.exists(self.path):
            size = os.path.getsize(self.path)
            with open(self.path, "rb") as fh:
                while fh.tell() < size:
                    offset = fh.tell()
                    key = fh.read(32)
                    if len(key) < 32:
                        raise CacheError("truncated record header")
                    (pid_len,) = struct.unpack("<I", fh.read(4))
                    fh.seek(pid_len, os.SEEK_CUR)
                    (dim,) = struct.unpack("<I", fh.read(4))
                    fh.seek(dim * 4, os.SEEK_CUR)
                    if fh.tell() > size:
                        raise CacheError("truncated record payload")
                    index[key.hex()] = offset
        self._index = index
        self._save_index()

    def _save_index(self) -> None:
        with open(self.index_path, "w", encoding="utf-8") as fh:
            json.dump(self._index, fh, sort_keys=True)


def cache_get_or_compute(key_hex: str, provider: EmbeddingProvider,
                         store: EmbeddingStore, input_text: str) -> np.ndarray:
    """Return the cached vector for a key, computing and persisting on miss.

    A hit whose stored dimension or provider does not match the request
    raises E_CACHE; the provider is not invoked on a hit.
    """
    entry = store.get(key_hex)
    if entry is not None:
        provider_id, vec = entry
        if vec.shape[0] != provider.dim:
            raise CacheError(
                f"stored dim {vec.shape[0]} != requested dim {provider.dim}")
        if provider_id != provider.provider_id:
            raise CacheError(
                f"stored provider {provider_id!r} != requested "
                f"{provider.provider_id!r}")
        return vec
    vec = _validate_vector(provider.embed(input_text), provider.dim,
                           provider.provider_id)
    store.put(key_hex, provider.provider_id, vec)
    return vec


class CachedProvider(EmbeddingProvider):
    """Provider wrapper that routes every embed through a store."""

    def __init__(self, inner: EmbeddingProvider, store: EmbeddingStore):
        self.inner = inner
        self.store = store
        self.provider_id = inner.provider_id
        self.modality = inner.modality
        self.dim = inner.dim
        self.deterministic = inner.deterministic

    def embed(self, text: str) -> np.ndarray:
        return cache_get_or_compute(canonical_hash(text), self.inner,
                                    self.store, text)
