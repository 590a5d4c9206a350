"""Nanomaterial-protein interaction modeling: corpus curation, multimodal
cross-attention fusion models, and ablation-based importance analysis."""

__version__ = "0.1.0"
