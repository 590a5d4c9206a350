"""Record-to-matrix encoding: prompts and sequences through providers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ProviderError
from .model import (
    MODALITY_FUSED,
    MODALITY_PROTEIN_ONLY,
    MODALITY_TEXT_ONLY,
    ModelParams,
    forward,
)
from .prompts import render_prompt
from .providers import EmbeddingProvider, embed_protein, embed_text
from .schema import FeatureSchema, ProteinCatalog, SampleRecord


@dataclass
class ProviderBundle:
    protein: EmbeddingProvider
    text: EmbeddingProvider


def protein_matrix(records: list[SampleRecord], catalog: ProteinCatalog,
                   provider: EmbeddingProvider) -> np.ndarray:
    rows = []
    for rec in records:
        protein = catalog.lookup(rec.protein_accession)
        if protein is None:
            raise ProviderError(
                f"accession {rec.protein_accession!r} not in catalog")
        rows.append(embed_protein(protein.sequence, provider))
    return np.stack(rows)


def text_matrix(records: list[SampleRecord], schema: FeatureSchema,
                provider: EmbeddingProvider,
                mask_set: frozenset = frozenset()) -> np.ndarray:
    rows = []
    for rec in records:
        prompt = render_prompt(rec, schema, mask_set)
        rows.append(embed_text(prompt, provider))
    return np.stack(rows)


def encode_view(records: list[SampleRecord], labels: np.ndarray,
                schema: FeatureSchema, catalog: ProteinCatalog,
                providers: ProviderBundle, modality: str = MODALITY_FUSED,
                mask_set: frozenset = frozenset()):
    """(protein, text, labels) arrays with None for an absent modality."""
    protein = None
    text = None
    if modality in (MODALITY_FUSED, MODALITY_PROTEIN_ONLY):
        protein = protein_matrix(records, catalog, providers.protein)
    if modality in (MODALITY_FUSED, MODALITY_TEXT_ONLY):
        text = text_matrix(records, schema, providers.text, mask_set)
    return protein, text, labels


def predict(params: ModelParams, records: list[SampleRecord],
            providers: ProviderBundle, schema: FeatureSchema,
            catalog: ProteinCatalog,
            mask_set: frozenset = frozenset()) -> np.ndarray:
    """Zero-shot path: render prompts, embed, forward; preserves input order."""
    protein, text, _ = encode_view(records, np.empty(len(records)), schema,
                                   catalog, providers,
                                   params.config.modality, mask_set)
    return forward(params, protein, text)
