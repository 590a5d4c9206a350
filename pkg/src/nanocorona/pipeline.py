"""End-to-end pipeline: curate, split, embed, train, evaluate, ablate,
finetune, predict — driven by one JSON config with chained run manifests."""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import replace

import numpy as np

from . import curation, model, splits
from .boxcox import BoxCoxTransform, fit_boxcox
from .cache import CachedProvider, EmbeddingStore
from .encode import ProviderBundle, encode_view, predict
from .errors import NanocoronaError, StageError, UnknownKindError
from .importance import (
    ablate_feature,
    ablate_pair,
    evaluate_view,
    importance_report,
    write_importance_report,
)
from .metrics import classification_metrics, regression_metrics
from .prompts import canonical_hash, render_prompt
from .providers import (
    PrecomputedProvider,
    SyntheticProteinProvider,
    SyntheticTextProvider,
)
from .remote import RemoteProvider
from .schema import (
    default_schema,
    load_protein_catalog,
    parse_sample_table,
    validate_corpus,
    write_sample_table,
)

DEFAULT_CONFIG = {
    "paths": {
        "corpus": "corpus.tsv",
        "catalog": "catalog.tsv",
        "alignment_table": None,
        "cache": "embeddings.bin",
        "out_dir": "out",
    },
    "curation": {
        "make_filled_variants": True,
        "local_fill": True,
        "top_n_scaling": False,
        "global_fill": True,
        "impute_features": ["dls_size", "zeta_potential", "pdi",
                            "concentration", "surface_area"],
        "grouping_keys": ["core", "core_type", "surface_modification",
                          "modification_type", "shape"],
    },
    "split": {"seed": 7, "n_bins": 10},
    "provider": {"kind": "synthetic", "seed": 0, "endpoint": None},
    "model": {},
    "ablation": {"features": [], "pairs": [], "epsilon": 0.01},
}


def _deep_update(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_update(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        user = json.load(fh)
    return _deep_update(DEFAULT_CONFIG, user)


def apply_overrides(config: dict, overrides: list[str]) -> dict:
    """Apply repeated --set key.path=value flags; values parse as JSON when
    possible, else as strings."""
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = config
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return config


def digest_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def digest_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class RunManifest:
    """Per-run record: config digest, inputs, stage timings, output digests."""

    def __init__(self, config: dict, out_dir: str):
        self.out_dir = out_dir
        self.config_digest = digest_bytes(
            json.dumps(config, sort_keys=True).encode())
        self.run_id = self.config_digest[:16]
        self.stages: list[dict] = []
        self.path = os.path.join(out_dir, "run_manifest.json")

    def record_stage(self, name: str, inputs: list[str], outputs: list[str],
                     elapsed: float) -> None:
        self.stages.append({
            "stage": name,
            "inputs": {p: digest_file(p) for p in inputs if os.path.exists(p)},
            "outputs": {p: digest_file(p) for p in outputs},
            "elapsed_seconds": elapsed,
        })
        with open(self.path, "w", encoding="utf-8") as fh:
            json.dump({"run_id": self.run_id,
                       "config_digest": self.config_digest,
                       "stages": self.stages}, fh, indent=1, sort_keys=True)


def build_providers(config: dict) -> ProviderBundle:
    pcfg = config["provider"]
    store = EmbeddingStore(config["paths"]["cache"])
    kind = pcfg.get("kind", "synthetic")
    if kind == "synthetic":
        seed = int(pcfg.get("seed", 0))
        protein = SyntheticProteinProvider(seed)
        text = SyntheticTextProvider(seed)
    elif kind == "precomputed":
        protein = PrecomputedProvider(store, "protein", 2560)
        text = PrecomputedProvider(store, "text", 4096)
        return ProviderBundle(protein=protein, text=text)
    elif kind == "remote":
        endpoint = pcfg["endpoint"]
        protein = RemoteProvider(endpoint, "protein", 2560)
        text = RemoteProvider(endpoint, "text", 4096)
    else:
        raise ValueError(f"unknown provider kind {kind!r}")
    return ProviderBundle(protein=CachedProvider(protein, store),
                          text=CachedProvider(text, store))


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------


def _out(config: dict, name: str) -> str:
    return os.path.join(config["paths"]["out_dir"], name)


def make_filled_variants(records, schema, ccfg):
    """Imputed copies of raw records that have missing features.

    The copy shares its origin_id with the raw record so splitting keeps the
    pair together.
    """
    incomplete = [rec for rec in records
                  if any(v.is_unknown for v in rec.features.values())]
    if not incomplete:
        return []
    variants = [replace(rec, sample_id=rec.sample_id + "::filled",
                        is_filled_variant=True)
                for rec in incomplete]
    keys = tuple(ccfg["grouping_keys"])
    for fid in ccfg["impute_features"]:
        try:
            variants = curation.impute_numeric_weighted(
                records + variants, fid, keys)[len(records):]
        except NanocoronaError:
            continue
    variants = curation.impute_protocol_defaults(records + variants,
                                                 schema)[len(records):]
    return variants


def stage_curate(config: dict, manifest: RunManifest) -> list[str]:
    paths = config["paths"]
    ccfg = config["curation"]
    schema = default_schema()
    records = parse_sample_table(paths["corpus"], schema)
    catalog = load_protein_catalog(paths["catalog"])
    if paths.get("alignment_table"):
        table = curation.load_alignment_table(paths["alignment_table"])
        records = curation.apply_alignment(records, table, schema)
    by_study: dict[str, list] = {}
    for rec in records:
        by_study.setdefault(rec.study_id, []).append(rec)
    curated = []
    curve = None
    if ccfg["top_n_scaling"]:
        complete = []
        for study_records in by_study.values():
            vals = [r.rpa for r in study_records if r.rpa is not None]
            if len(vals) > curation.TOP_N_LIMIT and abs(sum(vals) - 1) < 1e-6:
                complete.append(vals)
        if complete:
            curve = curation.build_reference_curve(complete)
    for study_id in sorted(by_study):
        study_records = by_study[study_id]
        if curve is not None:
            vals = [r.rpa for r in study_records if r.rpa is not None]
            if abs(sum(vals) - 1) < 1e-6 and len(vals) <= curation.TOP_N_LIMIT:
                study_records = curation.top_n_scale(study_records,
                                                    curve).records
        if ccfg["local_fill"]:
            study_records = curation.local_fill(study_records)
        curated.extend(study_records)
    if ccfg["global_fill"]:
        curated = curation.global_fill(curated)
    if ccfg["make_filled_variants"]:
        curated = curated + make_filled_variants(curated, schema, ccfg)
    report = validate_corpus(curated, catalog)
    curated_path = _out(config, "curated.tsv")
    write_sample_table(curated, curated_path, schema)
    validation_path = _out(config, "validation.json")
    with open(validation_path, "w", encoding="utf-8") as fh:
        json.dump({"total": report.total, "valid": report.valid,
                   "issues": [[i.sample_id, i.code, i.message]
                              for i in report.issues]},
                  fh, indent=1)
    return [curated_path, validation_path]


def stage_split(config: dict, manifest: RunManifest) -> list[str]:
    schema = default_schema()
    records = parse_sample_table(_out(config, "curated.tsv"), schema)
    scfg = config["split"]
    assignment = splits.assign_splits(records, int(scfg["seed"]),
                                      int(scfg["n_bins"]))
    manifest_path = _out(config, "split_manifest.tsv")
    splits.write_split_manifest(assignment, manifest_path)
    train_records = splits.split_records(records, assignment, "train")
    affinity = [r.rpa for r in train_records
                if r.rpa is not None and r.rpa > curation.AFFINITY_THRESHOLD]
    transform_path = _out(config, "boxcox.json")
    if affinity:
        transform = fit_boxcox(affinity, fitted_on="train")
        payload = {"lambda": transform.lam, "fitted_on": "train"}
    else:
        payload = {"lambda": None, "fitted_on": "train"}
    with open(transform_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
    return [manifest_path, transform_path]


def _load_transform(config: dict) -> BoxCoxTransform | None:
    with open(_out(config, "boxcox.json"), encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload["lambda"] is None:
        return None
    return BoxCoxTransform(lam=payload["lambda"],
                           fitted_on=payload["fitted_on"])


def stage_embed(config: dict, manifest: RunManifest) -> list[str]:
    """Pre-encode every unique sequence and prompt into the cache."""
    schema = default_schema()
    records = parse_sample_table(_out(config, "curated.tsv"), schema)
    catalog = load_protein_catalog(config["paths"]["catalog"])
    providers = build_providers(config)
    sequences = sorted({catalog.lookup(r.protein_accession).sequence
                        for r in records
                        if catalog.lookup(r.protein_accession) is not None})
    prompts = sorted({render_prompt(r, schema).text for r in records})
    for seq in sequences:
        providers.protein.embed(seq)
    for text in prompts:
        providers.text.embed(text)
    stats_path = _out(config, "embed_stats.json")
    with open(stats_path, "w", encoding="utf-8") as fh:
        json.dump({"unique_sequences": len(sequences),
                   "unique_prompts": len(prompts)}, fh, indent=1)
    return [stats_path]


def _task_views(config: dict):
    schema = default_schema()
    records = parse_sample_table(_out(config, "curated.tsv"), schema)
    assignment = splits.read_split_manifest(_out(config, "split_manifest.tsv"))
    transform = _load_transform(config)
    views = {}
    for split in ("train", "val", "test"):
        members = splits.split_records(records, assignment, split)
        views[("classification", split)] = splits.classification_view(members)
        if transform is not None:
            views[("regression", split)] = splits.regression_view(members,
                                                                  transform)
    return schema, views, transform


def stage_train(config: dict, manifest: RunManifest) -> list[str]:
    schema, views, transform = _task_views(config)
    catalog = load_protein_catalog(config["paths"]["catalog"])
    providers = build_providers(config)
    outputs = []
    tasks = ["classification"] + (["regression"] if transform else [])
    for task in tasks:
        cfg = model.ModelConfig(**{**config["model"], "task": task})
        data = {}
        for split in ("train", "val"):
            view = views[(task, split)]
            data[split] = encode_view(view.records, view.labels, schema,
                                      catalog, providers, cfg.modality)
        params, history = model.train(data["train"], data["val"], cfg)
        ckpt = _out(config, f"model_{task}.ckpt")
        model.save_checkpoint(params, ckpt)
        hist_path = _out(config, f"history_{task}.json")
        with open(hist_path, "w", encoding="utf-8") as fh:
            json.dump({"train_loss": history.train_loss,
                       "val_metric": history.val_metric,
                       "best_epoch": history.best_epoch,
                       "stopped_early": history.stopped_early}, fh, indent=1)
        outputs.extend([ckpt, ckpt + ".bin", hist_path])
    return outputs


def stage_eval(config: dict, manifest: RunManifest) -> list[str]:
    schema, views, transform = _task_views(config)
    catalog = load_protein_catalog(config["paths"]["catalog"])
    providers = build_providers(config)
    results = {}
    rpa_bin_rows = None
    tasks = ["classification"] + (["regression"] if transform else [])
    for task in tasks:
        ckpt = _out(config, f"model_{task}.ckpt")
        if not os.path.exists(ckpt):
            continue
        params = model.load_checkpoint(ckpt)
        for split in ("train", "val", "test"):
            view = views[(task, split)]
            if len(view) == 0:
                continue
            protein, text, labels = encode_view(
                view.records, view.labels, schema, catalog, providers,
                params.config.modality)
            scores = model.forward(params, protein, text)
            if task == "classification":
                results[f"{task}/{split}"] = classification_metrics(scores,
                                                                    labels)
                if split == "test":
                    rpas = np.array([r.rpa for r in view.records])
                    rpa_bin_rows = rpa_bin_table(scores, labels, rpas)
            else:
                results[f"{task}/{split}"] = regression_metrics(
                    scores, labels, transform)
    metrics_path = _out(config, "metrics.json")
    with open(metrics_path, "w", encoding="utf-8") as fh:
        json.dump(results, fh, indent=1, sort_keys=True)
    outputs = [metrics_path]
    outputs.append(emit_figure_data({"metrics": results}, "metrics",
                                    _out(config, "fig_metrics.csv")))
    if rpa_bin_rows is not None:
        outputs.append(emit_figure_data({"rpa_bins": rpa_bin_rows},
                                        "rpa_bins",
                                        _out(config, "fig_rpa_bins.csv")))
    return outputs


def stage_ablate(config: dict, manifest: RunManifest) -> list[str]:
    schema, views, _ = _task_views(config)
    catalog = load_protein_catalog(config["paths"]["catalog"])
    providers = build_providers(config)
    params = model.load_checkpoint(_out(config, "model_classification.ckpt"))
    view = views[("classification", "test")]
    acfg = config["ablation"]
    features = acfg["features"] or list(schema.feature_ids)
    metric_full = evaluate_view(params, view, schema, catalog, providers)
    singles = {}
    for feature in features:
        singles[feature] = ablate_feature(params, view, feature, schema,
                                          catalog, providers, metric_full)
    interactions = []
    for f, g in acfg["pairs"]:
        interactions.append(ablate_pair(params, view, f, g, schema, catalog,
                                        providers, singles,
                                        float(acfg["epsilon"])))
    report = importance_report(list(singles.values()), interactions)
    json_path = _out(config, "importance.json")
    csv_path = _out(config, "fig_importance.csv")
    write_importance_report(report, json_path, csv_path)
    return [json_path, csv_path]


def rpa_bin_table(scores, labels, rpas, n_bins: int = 5) -> list[dict]:
    """Per-RPA-interval accuracy, mean predicted probability, and spread."""
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    rpas = np.asarray(rpas)
    edges = [0.0, curation.AFFINITY_THRESHOLD]
    positives = rpas[rpas > curation.AFFINITY_THRESHOLD]
    if positives.size:
        qs = np.linspace(0, 1, n_bins)[1:-1]
        edges.extend(float(q) for q in np.quantile(positives, qs))
        edges.append(float(positives.max()))
    rows = []
    for lo, hi in zip(edges, edges[1:]):
        mask = (rpas > lo) & (rpas <= hi) if lo else (rpas >= lo) & (rpas <= hi)
        if not mask.any():
            continue
        predicted = (scores[mask] > 0.5).astype(int)
        rows.append({
            "rpa_low": lo,
            "rpa_high": hi,
            "count": int(mask.sum()),
            "accuracy": float(np.mean(predicted == labels[mask])),
            "mean_probability": float(np.mean(scores[mask])),
            "probability_std": float(np.std(scores[mask])),
        })
    return rows


def emit_figure_data(reports: dict, kind: str, out_path) -> str:
    """Write figure-ready CSV for a report kind."""
    if kind == "metrics":
        rows = []
        for key, metrics in sorted(reports["metrics"].items()):
            task, split = key.split("/")
            for name, value in sorted(metrics.items()):
                rows.append((task, split, name,
                             "" if value is None else value))
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write("task,split,metric,value\n")
            for row in rows:
                fh.write(",".join(str(c) for c in row) + "\n")
    elif kind == "rpa_bins":
        header = ["rpa_low", "rpa_high", "count", "accuracy",
                  "mean_probability", "probability_std"]
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(",".join(header) + "\n")
            for row in reports["rpa_bins"]:
                fh.write(",".join(str(row[h]) for h in header) + "\n")
    elif kind == "importance":
        report = reports["importance"]
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write("kind,name,delta,interaction,magnitude\n")
            for row in report["features"]:
                fh.write(f"feature,{row['feature']},{row['delta']},,\n")
            for row in report["interactions"]:
                fh.write(f"interaction,{'+'.join(row['pair'])},,"
                         f"{row['interaction']},{row['magnitude']}\n")
    else:
        raise UnknownKindError(f"unknown figure kind {kind!r}")
    return str(out_path)


STAGES = {
    "curate": (stage_curate, []),
    "split": (stage_split, ["curated.tsv"]),
    "embed": (stage_embed, ["curated.tsv"]),
    "train": (stage_train, ["curated.tsv", "split_manifest.tsv",
                            "boxcox.json"]),
    "eval": (stage_eval, ["curated.tsv", "split_manifest.tsv", "boxcox.json",
                          "model_classification.ckpt"]),
    "ablate": (stage_ablate, ["curated.tsv", "split_manifest.tsv",
                              "model_classification.ckpt"]),
}

RUN_ALL_ORDER = ("curate", "split", "embed", "train", "eval", "ablate")


def run_stage(name: str, config: dict, manifest: RunManifest) -> list[str]:
    fn, stage_inputs = STAGES[name]
    os.makedirs(config["paths"]["out_dir"], exist_ok=True)
    inputs = [config["paths"]["corpus"], config["paths"]["catalog"]]
    inputs += [_out(config, rel) for rel in stage_inputs]
    started = time.monotonic()
    try:
        outputs = fn(config, manifest)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, str(exc)) from exc
    manifest.record_stage(name, inputs, outputs, time.monotonic() - started)
    return outputs


def run_end_to_end(config: dict) -> dict:
    """Chain every stage; any failure aborts naming the failing stage."""
    os.makedirs(config["paths"]["out_dir"], exist_ok=True)
    manifest = RunManifest(config, config["paths"]["out_dir"])
    artifacts = {}
    for name in RUN_ALL_ORDER:
        artifacts[name] = run_stage(name, config, manifest)
    return artifacts
