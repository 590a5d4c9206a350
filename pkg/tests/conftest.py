"""Shared fixtures: synthetic corpora, catalogs, and small model configs."""

from __future__ import annotations

import numpy as np
import pytest

from nanocorona.model import ModelConfig
from nanocorona.schema import (
    ProteinCatalog,
    ProteinRecord,
    SampleRecord,
    categorical,
    default_schema,
    free_text,
    numeric,
)

CANONICAL_AA = "ACDEFGHIKLMNPQRSTVWY"

# Two structurally distinct sequence families so the 3-mer provider
# separates them cleanly.
FAMILY_A_ALPHABET = "ACDEFG"
FAMILY_B_ALPHABET = "KLMNPQ"


@pytest.fixture(scope="session")
def schema():
    return default_schema()


def random_sequence(rng, length: int = 30, alphabet: str = CANONICAL_AA) -> str:
    return "".join(alphabet[i] for i in rng.integers(0, len(alphabet), length))


def make_catalog(n_proteins: int, seed: int = 0,
                 family_split: bool = False) -> ProteinCatalog:
    """Catalog of random sequences; family_split=True alternates two
    disjoint-alphabet families (even index = A, odd = B)."""
    rng = np.random.default_rng(seed)
    catalog = ProteinCatalog()
    for i in range(n_proteins):
        if family_split:
            alphabet = FAMILY_A_ALPHABET if i % 2 == 0 else FAMILY_B_ALPHABET
        else:
            alphabet = CANONICAL_AA
        catalog.add(ProteinRecord(
            accession=f"P{i:05d}",
            sequence=random_sequence(rng, 30, alphabet),
            molecular_weight=float(20 + (i % 80)),
        ))
    return catalog


def base_features(schema, rng):
    """Fully known feature map with mild per-record variation."""
    feats = {}
    for fdef in schema.features:
        if fdef.kind == "categorical":
            feats[fdef.feature_id] = categorical(f"{fdef.feature_id}_v0")
        elif fdef.kind == "numeric":
            feats[fdef.feature_id] = numeric(
                float(np.round(rng.uniform(1, 100), 3)), fdef.unit)
        else:
            feats[fdef.feature_id] = free_text("diameter 80, length 1500")
    return feats


def make_labeled_corpus(schema, n: int, seed: int, label_rule: str,
                        n_proteins: int = 40,
                        null_feature: str = "crystallinity"):
    """Corpus whose affinity label follows a known rule.

    label_rule:
      "text"    — label = (core == "gold")
      "protein" — label = (protein family == A)
      "xor"     — label = (core == "gold") XOR (family == B)
      "additive"— multiplicative RPA from core and dispersing_medium, so
                  log-RPA is exactly additive in the two features
    Labels are realized through the RPA value so binarize() recovers them.
    Returns (records, catalog).
    """
    rng = np.random.default_rng(seed)
    catalog = make_catalog(n_proteins, seed=seed + 1, family_split=True)
    accessions = catalog.accessions()
    records = []
    for i in range(n):
        feats = base_features(schema, rng)
        core_is_gold = bool(rng.integers(0, 2))
        medium_is_pbs = bool(rng.integers(0, 2))
        feats["core"] = categorical("gold" if core_is_gold else "silica")
        feats["dispersing_medium"] = categorical(
            "PBS" if medium_is_pbs else "water")
        feats[null_feature] = categorical("amorphous")
        acc_idx = int(rng.integers(0, len(accessions)))
        accession = accessions[acc_idx]
        family_a = acc_idx % 2 == 0
        if label_rule == "text":
            label = core_is_gold
        elif label_rule == "protein":
            label = family_a
        elif label_rule == "xor":
            label = core_is_gold != (not family_a)
        elif label_rule == "additive":
            log_target = (np.log(1e-3) + np.log(6.0) * core_is_gold
                          + np.log(3.0) * medium_is_pbs
                          + 0.05 * float(rng.standard_normal()))
            rpa = float(np.exp(log_target))
            records.append(SampleRecord(
                sample_id=f"s{i:05d}", study_id=f"st{i % 5}",
                group_id="g0", origin_id=f"o{i:05d}",
                features=feats, protein_accession=accession, rpa=rpa))
            continue
        else:
            raise ValueError(label_rule)
        rpa = float(rng.uniform(1e-3, 1e-2)) if label \
            else float(rng.uniform(0, 5e-6))
        records.append(SampleRecord(
            sample_id=f"s{i:05d}", study_id=f"st{i % 5}",
            group_id="g0", origin_id=f"o{i:05d}",
            features=feats, protein_accession=accession, rpa=rpa))
    return records, catalog


def small_config(task: str = "classification", **overrides) -> ModelConfig:
    """Reduced-width config that trains in seconds on fixtures."""
    defaults = dict(
        task=task, protein_dim=2560, text_dim=4096, d_shared=128,
        tokens=8, heads=8, mlp_hidden=(64, 32), learning_rate=1e-3,
        batch_size=32, max_epochs=60, patience=15, seed=0)
    defaults.update(overrides)
    return ModelConfig(**defaults)


def tiny_config(task: str = "classification", **overrides) -> ModelConfig:
    """Gradient-check scale: T=2, H=2, 64-bit arithmetic."""
    defaults = dict(
        task=task, protein_dim=12, text_dim=16, d_shared=8, tokens=2,
        heads=2, mlp_hidden=(6, 4), dtype="float64", seed=1)
    defaults.update(overrides)
    return ModelConfig(**defaults)
