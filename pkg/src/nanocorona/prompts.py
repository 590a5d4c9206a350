"""Deterministic prompt rendering for the tabular modality.

A record renders to a fixed template: a task preamble followed by the 29
features in schema order as "name: value" clauses.  Masked or missing
features render the literal token "Unknown".
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from .schema import UNKNOWN, FeatureSchema, FeatureValue, SampleRecord

UNKNOWN_TOKEN = "Unknown"

_PREAMBLE = (
    "Predict whether the described protein is enriched in the protein corona "
    "formed on the described nanomaterial, given the experimental conditions. "
    "The protein corona is the layer of proteins that adsorbs onto a "
    "nanomaterial surface in biological fluids; its composition depends on "
    "the nanomaterial's physicochemical properties, the incubation "
    "conditions, and the separation and proteomic analysis protocols. "
    "Experimental descriptors follow."
)


@dataclass(frozen=True)
class PromptText:
    text: str
    canonical_hash: str  # 64-hex-digit SHA-256 of text


def canonical_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _format_number(value: float) -> str:
    if value == int(value) and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


def _render_value(value: FeatureValue, unit: str | None) -> str:
    if value.is_unknown:
        return UNKNOWN_TOKEN
    if value.kind == "numeric":
        rendered = _format_number(value.number)
        suffix = value.unit or unit
        if suffix:
            rendered += f" {suffix}"
        return rendered
    return value.text or UNKNOWN_TOKEN


def render_prompt(record: SampleRecord, schema: FeatureSchema,
                  mask_set: frozenset = frozenset()) -> PromptText:
    """Render a record to its canonical prompt, masking the given features."""
    clauses = []
    for fdef in schema.features:
        if fdef.feature_id in mask_set:
            rendered = UNKNOWN_TOKEN
        else:
            value = record.features.get(fdef.feature_id, UNKNOWN)
            rendered = _render_value(value, fdef.unit)
        clauses.append(f"{fdef.display_name}: {rendered}")
    text = _PREAMBLE + "\n" + "\n".join(clauses)
    return PromptText(text=text, canonical_hash=canonical_hash(text))
