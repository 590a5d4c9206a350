"""Corpus data model: feature schema, sample records, protein catalogs.

The corpus is exchanged as UTF-8 TSV with a header row.  Unknown values are
encoded as empty cells.  Bookkeeping columns (identifiers, target, fill
provenance) live outside the experimental feature schema.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .errors import (
    BadNumberError,
    BadSequenceError,
    DuplicateAccessionError,
    RowShapeError,
    UnknownColumnError,
)

CATEGORICAL = "categorical"
NUMERIC = "numeric"
FREE_TEXT = "free-text"

GROUP_NANOMATERIAL = "nanomaterial"
GROUP_INCUBATION = "incubation"
GROUP_SEPARATION = "separation"
GROUP_PROTEOMIC = "proteomic"

EXPECTED_GROUP_SIZES = {
    GROUP_NANOMATERIAL: 14,
    GROUP_INCUBATION: 9,
    GROUP_SEPARATION: 5,
    GROUP_PROTEOMIC: 1,
}

# Fixed bookkeeping columns, outside the experimental feature schema.
BOOKKEEPING_COLUMNS = (
    "sample_id",
    "study_id",
    "group_id",
    "origin_id",
    "protein_accession",
    "rpa",
    "fill_flags",
    "is_filled_variant",
)

# 20 canonical residues plus the ambiguity codes B, J, O, U, X, Z.
AMINO_ACID_ALPHABET = frozenset("ACDEFGHIKLMNPQRSTVWYBJOUXZ")


@dataclass(frozen=True)
class FeatureDef:
    feature_id: str
    display_name: str
    group: str
    kind: str
    unit: str | None = None


@dataclass(frozen=True)
class FeatureValue:
    """Tagged value: categorical text, numeric with unit, free text, or Unknown."""

    kind: str  # "categorical" | "numeric" | "text" | "unknown"
    text: str | None = None
    number: float | None = None
    unit: str | None = None

    @property
    def is_unknown(self) -> bool:
        return self.kind == "unknown"

    def to_cell(self) -> str:
        if self.kind == "unknown":
            return ""
        if self.kind == "numeric":
            cell = repr(self.number)
            if self.unit:
                cell += f" {self.unit}"
            return cell
        return self.text or ""


UNKNOWN = FeatureValue(kind="unknown")


def categorical(text: str) -> FeatureValue:
    return FeatureValue(kind="categorical", text=text)


def numeric(number: float, unit: str | None = None) -> FeatureValue:
    return FeatureValue(kind="numeric", number=float(number), unit=unit)


def free_text(text: str) -> FeatureValue:
    return FeatureValue(kind="text", text=text)


class FeatureSchema:
    """Ordered, fixed set of 29 experimental features."""

    def __init__(self, features: list[FeatureDef]):
        ids = [f.feature_id for f in features]
        if len(ids) != len(set(ids)):
            raise ValueError("feature ids must be unique")
        if len(features) != 29:
            raise ValueError(f"schema must hold 29 features, got {len(features)}")
        counts: dict[str, int] = {}
        for f in features:
            counts[f.group] = counts.get(f.group, 0) + 1
        if counts != EXPECTED_GROUP_SIZES:
            raise ValueError(f"bad group sizes: {counts}")
        self.features = tuple(features)
        self._by_id = {f.feature_id: f for f in features}

    def __contains__(self, feature_id: str) -> bool:
        return feature_id in self._by_id

    def __getitem__(self, feature_id: str) -> FeatureDef:
        return self._by_id[feature_id]

    @property
    def feature_ids(self) -> tuple[str, ...]:
        return tuple(f.feature_id for f in self.features)


def default_schema() -> FeatureSchema:
    n, i, s, p = GROUP_NANOMATERIAL, GROUP_INCUBATION, GROUP_SEPARATION, GROUP_PROTEOMIC
    return FeatureSchema([
        FeatureDef("core", "core composition", n, CATEGORICAL),
        FeatureDef("core_type", "core type", n, CATEGORICAL),
        FeatureDef("surface_modification", "surface modification", n, CATEGORICAL),
        FeatureDef("modification_type", "modification charge type", n, CATEGORICAL),
        FeatureDef("shape", "particle shape", n, CATEGORICAL),
        FeatureDef("primary_size", "primary size", n, FREE_TEXT, "nm"),
        FeatureDef("dls_size", "hydrodynamic diameter", n, NUMERIC, "nm"),
        FeatureDef("zeta_potential", "zeta potential", n, NUMERIC, "mV"),
        FeatureDef("pdi", "polydispersity index", n, NUMERIC),
        FeatureDef("concentration", "nanomaterial concentration", n, NUMERIC, "mg/L"),
        FeatureDef("surface_area", "specific surface area", n, NUMERIC, "m2/mL"),
        FeatureDef("functional_group", "functional group", n, CATEGORICAL),
        FeatureDef("synthesis_method", "synthesis method", n, CATEGORICAL),
        FeatureDef("crystallinity", "crystallinity", n, CATEGORICAL),
        FeatureDef("protein_source", "incubation protein source", i, CATEGORICAL),
        FeatureDef("dispersing_medium", "dispersing medium", i, CATEGORICAL),
        FeatureDef("incubation_temperature", "incubation temperature", i, NUMERIC, "C"),
        FeatureDef("incubation_time", "incubation time", i, NUMERIC, "h"),
        FeatureDef("flow_speed", "flow speed", i, NUMERIC, "mL/min"),
        FeatureDef("protein_concentration", "protein concentration", i, NUMERIC, "mg/L"),
        FeatureDef("ph", "pH", i, NUMERIC),
        FeatureDef("ionic_strength", "ionic strength", i, NUMERIC, "mM"),
        FeatureDef("incubation_mode", "incubation mode", i, CATEGORICAL),
        FeatureDef("separation_method", "separation method", s, CATEGORICAL),
        FeatureDef("centrifugation_speed", "centrifugation speed", s, NUMERIC, "g"),
        FeatureDef("centrifugation_time", "centrifugation time", s, NUMERIC, "min"),
        FeatureDef("washing_steps", "washing steps", s, NUMERIC),
        FeatureDef("separation_temperature", "separation temperature", s, NUMERIC, "C"),
        FeatureDef("proteomic_depth", "proteomic depth", p, NUMERIC),
    ])


@dataclass(frozen=True)
class SampleRecord:
    """One nanomaterial-protein pair with fill provenance."""

    sample_id: str
    study_id: str
    group_id: str
    origin_id: str
    features: dict
    protein_accession: str
    rpa: float | None = None
    fill_flags: frozenset = frozenset()
    is_filled_variant: bool = False

    def with_feature(self, feature_id: str, value: FeatureValue,
                     extra_flags: frozenset = frozenset()) -> "SampleRecord":
        feats = dict(self.features)
        feats[feature_id] = value
        return replace(self, features=feats,
                       fill_flags=self.fill_flags | extra_flags)


@dataclass
class ProteinRecord:
    accession: str
    sequence: str
    molecular_weight: float | None = None  # kDa

    def __post_init__(self):
        if not self.sequence:
            raise BadSequenceError(f"empty sequence for {self.accession}")
        bad = set(self.sequence) - AMINO_ACID_ALPHABET
        if bad:
            raise BadSequenceError(
                f"sequence for {self.accession} contains invalid character "
                f"{sorted(bad)[0]!r}")


class ProteinCatalog:
    """Accession-keyed protein records with exact-match lookup."""

    def __init__(self):
        self._records: dict[str, ProteinRecord] = {}

    def add(self, record: ProteinRecord) -> None:
        existing = self._records.get(record.accession)
        if existing is not None and existing.sequence != record.sequence:
            raise DuplicateAccessionError(
                f"accession {record.accession} seen with two different sequences")
        self._records[record.accession] = record

    def lookup(self, accession: str) -> ProteinRecord | None:
        return self._records.get(accession)

    def __contains__(self, accession: str) -> bool:
        return accession in self._records

    def __len__(self) -> int:
        return len(self._records)

    def accessions(self) -> list[str]:
        return sorted(self._records)


@dataclass
class ValidationIssue:
    sample_id: str
    code: str
    message: str


@dataclass
class ValidationReport:
    total: int
    valid: int
    issues: list = field(default_factory=list)

    @property
    def invalid(self) -> int:
        return self.total - self.valid


def _parse_cell(cell: str, fdef: FeatureDef, line_no: int) -> FeatureValue:
    cell = cell.strip()
    if cell == "":
        return UNKNOWN
    if fdef.kind == CATEGORICAL:
        return categorical(cell)
    if fdef.kind == FREE_TEXT:
        return free_text(cell)
    # numeric: "<number>" or "<number> <unit>"
    parts = cell.split(None, 1)
    try:
        value = float(parts[0])
    except ValueError:
        raise BadNumberError(
            f"line {line_no}: cannot parse {cell!r} as number for "
            f"feature {fdef.feature_id}") from None
    unit = parts[1].strip() if len(parts) > 1 else fdef.unit
    return numeric(value, unit)


def parse_sample_table(path, schema: FeatureSchema) -> list[SampleRecord]:
    """Parse a TSV sample table into records; empty cells become Unknown."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise RowShapeError("empty file")
    header = lines[0].split("\t")
    for col in header:
        if col not in BOOKKEEPING_COLUMNS and col not in schema:
            raise UnknownColumnError(f"unknown column {col!r}")
    for col in BOOKKEEPING_COLUMNS:
        if col not in header:
            raise UnknownColumnError(f"missing bookkeeping column {col!r}")
    records = []
    for idx, line in enumerate(lines[1:], start=2):
        cells = line.split("\t")
        if len(cells) != len(header):
            raise RowShapeError(
                f"line {idx}: expected {len(header)} cells, got {len(cells)}")
        row = dict(zip(header, cells))
        features = {}
        for fdef in schema.features:
            cell = row.get(fdef.feature_id, "")
            features[fdef.feature_id] = _parse_cell(cell, fdef, idx)
        rpa_cell = row["rpa"].strip()
        if rpa_cell == "":
            rpa = None
        else:
            try:
                rpa = float(rpa_cell)
            except ValueError:
                raise BadNumberError(
                    f"line {idx}: bad rpa value {rpa_cell!r}") from None
        flags_cell = row["fill_flags"].strip()
        flags = frozenset(f for f in flags_cell.split(";") if f)
        records.append(SampleRecord(
            sample_id=row["sample_id"],
            study_id=row["study_id"],
            group_id=row["group_id"],
            origin_id=row["origin_id"],
            features=features,
            protein_accession=row["protein_accession"],
            rpa=rpa,
            fill_flags=flags,
            is_filled_variant=row["is_filled_variant"].strip() in ("1", "true", "True"),
        ))
    return records


def write_sample_table(records: list[SampleRecord], path, schema: FeatureSchema) -> None:
    """Write records to TSV in schema order; inverse of parse_sample_table."""
    header = list(BOOKKEEPING_COLUMNS) + list(schema.feature_ids)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(header) + "\n")
        for rec in records:
            cells = [
                rec.sample_id,
                rec.study_id,
                rec.group_id,
                rec.origin_id,
                rec.protein_accession,
                "" if rec.rpa is None else repr(rec.rpa),
                ";".join(sorted(rec.fill_flags)),
                "1" if rec.is_filled_variant else "0",
            ]
            for fid in schema.feature_ids:
                cells.append(rec.features.get(fid, UNKNOWN).to_cell())
            fh.write("\t".join(cells) + "\n")


def load_protein_catalog(path) -> ProteinCatalog:
    """Load a TSV catalog with columns accession, sequence, molecular_weight_kda."""
    catalog = ProteinCatalog()
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        return catalog
    header = lines[0].split("\t")
    required = ("accession", "sequence", "molecular_weight_kda")
    for col in required:
        if col not in header:
            raise UnknownColumnError(f"missing catalog column {col!r}")
    for idx, line in enumerate(lines[1:], start=2):
        cells = line.split("\t")
        if len(cells) != len(header):
            raise RowShapeError(
                f"line {idx}: expected {len(header)} cells, got {len(cells)}")
        row = dict(zip(header, cells))
        mw_cell = row["molecular_weight_kda"].strip()
        mw = float(mw_cell) if mw_cell else None
        catalog.add(ProteinRecord(
            accession=row["accession"].strip(),
            sequence=row["sequence"].strip(),
            molecular_weight=mw,
        ))
    return catalog


def write_protein_catalog(catalog: ProteinCatalog, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("accession\tsequence\tmolecular_weight_kda\n")
        for acc in catalog.accessions():
            rec = catalog.lookup(acc)
            mw = "" if rec.molecular_weight is None else repr(rec.molecular_weight)
            fh.write(f"{rec.accession}\t{rec.sequence}\t{mw}\n")


def validate_corpus(records: list[SampleRecord], catalog: ProteinCatalog) -> ValidationReport:
    """Check accession resolvability, RPA range, and key uniqueness.

    All problems become report entries; nothing raises and nothing mutates.
    """
    issues = []
    seen_keys: dict[tuple, str] = {}
    flagged: set[str] = set()

    def flag(sample_id: str, code: str, message: str) -> None:
        issues.append(ValidationIssue(sample_id, code, message))
        flagged.add(sample_id)

    for rec in records:
        if rec.protein_accession not in catalog:
            flag(rec.sample_id, "MISSING_PROTEIN",
                 f"accession {rec.protein_accession!r} not in catalog")
        if rec.rpa is not None:
            if rec.rpa < 0:
                flag(rec.sample_id, "NEGATIVE_RPA", f"rpa = {rec.rpa}")
            elif rec.rpa > 1:
                flag(rec.sample_id, "RPA_ABOVE_ONE", f"rpa = {rec.rpa}")
        key = (rec.study_id, rec.group_id, rec.protein_accession, rec.is_filled_variant)
        if key in seen_keys:
            flag(rec.sample_id, "DUPLICATE_KEY",
                 f"duplicates sample {seen_keys[key]}")
        else:
            seen_keys[key] = rec.sample_id
    return ValidationReport(total=len(records),
                            valid=len(records) - len(flagged),
                            issues=issues)
