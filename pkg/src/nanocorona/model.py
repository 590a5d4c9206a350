"""Multimodal fusion model: projections into a shared latent space,
bidirectional multi-head cross-attention, and an MLP head, trained with
adaptive-moment gradient descent.

Single-modality variants replace cross-attention with self-attention over
the one projected stream and halve the head input width.
"""

from __future__ import annotations

import copy
import json
import os
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import Tensor, concat, layer_norm
from .errors import (
    CorruptError,
    DimensionError,
    DivergedError,
    NonFiniteError,
    NoPositivesError,
    VersionError,
)
from .metrics import classification_metrics, regression_metrics

CHECKPOINT_SCHEMA_VERSION = 1

MODALITY_FUSED = "fused"
MODALITY_PROTEIN_ONLY = "protein_only"
MODALITY_TEXT_ONLY = "text_only"

FREEZE_GROUPS = ("projection", "fusion", "head")


@dataclass
class ModelConfig:
    task: str = "classification"  # "classification" | "regression"
    modality: str = MODALITY_FUSED
    protein_dim: int = 2560
    text_dim: int = 4096
    d_shared: int = 1024
    tokens: int = 8
    heads: int = 8
    mlp_hidden: tuple = (512, 128)
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    w_pos_policy: str = "twice_neg_over_pos"
    dtype: str = "float32"

    def __post_init__(self):
        self.mlp_hidden = tuple(self.mlp_hidden)
        if self.d_shared % self.tokens:
            raise ValueError("tokens must divide d_shared")
        if self.token_dim % self.heads:
            raise ValueError("heads must divide token_dim")

    @property
    def token_dim(self) -> int:
        return self.d_shared // self.tokens

    @property
    def head_dim(self) -> int:
        return self.token_dim // self.heads

    @property
    def head_input_dim(self) -> int:
        # each attended stream flattens back to d_shared; the fused model
        # concatenates its two directed streams
        return 2 * self.d_shared if self.modality == MODALITY_FUSED \
            else self.d_shared

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def _block_specs(config: ModelConfig) -> list[tuple[str, tuple]]:
    """Ordered (name, shape) table for every parameter block."""
    td = config.token_dim
    specs: list[tuple[str, tuple]] = []
    if config.modality in (MODALITY_FUSED, MODALITY_PROTEIN_ONLY):
        specs.append(("proj_protein.W", (config.protein_dim, config.d_shared)))
        specs.append(("proj_protein.b", (config.d_shared,)))
    if config.modality in (MODALITY_FUSED, MODALITY_TEXT_ONLY):
        specs.append(("proj_text.W", (config.text_dim, config.d_shared)))
        specs.append(("proj_text.b", (config.d_shared,)))
    directions = (["p2t", "t2p"] if config.modality == MODALITY_FUSED
                  else ["self"])
    for d in directions:
        for w in ("Wq", "Wk", "Wv", "Wo"):
            specs.append((f"attn_{d}.{w}", (td, td)))
        specs.append((f"attn_{d}.ln_gain", (td,)))
        specs.append((f"attn_{d}.ln_bias", (td,)))
    widths = [config.head_input_dim, *config.mlp_hidden, 1]
    for i, (fan_in, fan_out) in enumerate(zip(widths, widths[1:])):
        specs.append((f"head.W{i}", (fan_in, fan_out)))
        specs.append((f"head.b{i}", (fan_out,)))
    return specs


def freeze_group_of(block_name: str) -> str:
    if block_name.startswith("proj_"):
        return "projection"
    if block_name.startswith("attn_"):
        return "fusion"
    return "head"


@dataclass
class ModelParams:
    config: ModelConfig
    blocks: dict  # name -> np.ndarray
    freeze_flags: dict = field(
        default_factory=lambda: {g: False for g in FREEZE_GROUPS})

    def count(self) -> int:
        return sum(arr.size for arr in self.blocks.values())

    def is_frozen(self, block_name: str) -> bool:
        return self.freeze_flags.get(freeze_group_of(block_name), False)

    def copy(self) -> "ModelParams":
        return ModelParams(
            config=copy.deepcopy(self.config),
            blocks={k: v.copy() for k, v in self.blocks.items()},
            freeze_flags=dict(self.freeze_flags))


def init_params(config: ModelConfig, seed: int | None = None) -> ModelParams:
    """Fan-in-scaled zero-mean weights, zero biases, unit layer-norm gains."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    dtype = config.np_dtype
    blocks = {}
    for name, shape in _block_specs(config):
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "ln_gain":
            blocks[name] = np.ones(shape, dtype=dtype)
        elif leaf == "ln_bias" or leaf.startswith("b"):
            blocks[name] = np.zeros(shape, dtype=dtype)
        else:
            fan_in = shape[0]
            std = np.sqrt(2.0 / fan_in)
            blocks[name] = (rng.standard_normal(shape) * std).astype(dtype)
    return ModelParams(config=config, blocks=blocks)


def parameter_count(config: ModelConfig) -> int:
    return sum(int(np.prod(shape)) for _, shape in _block_specs(config))


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {what}")


def project(embedding: np.ndarray | Tensor, weight: Tensor,
            bias: Tensor, config: ModelConfig) -> Tensor:
    """Affine map to d_shared, reshaped row-major into tokens."""
    x = embedding if isinstance(embedding, Tensor) else Tensor(embedding)
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(
            f"embedding dim {x.shape[-1]} != projection input "
            f"{weight.shape[0]}")
    projected = x @ weight + bias
    batch = projected.shape[0]
    return projected.reshape(batch, config.tokens, config.token_dim)


def cross_attention(queries: Tensor, keys_values: Tensor, blocks: dict,
                    prefix: str, config: ModelConfig,
                    residual: bool = True, normalize: bool = True) -> Tensor:
    """Multi-head scaled dot-product attention of queries over keys/values.

    Output projection, residual to the queries, and layer norm follow the
    head concatenation.  Setting keys_values = queries gives self-attention.
    """
    b, t, td = queries.shape
    h, hd = config.heads, config.head_dim

    def split_heads(x: Tensor) -> Tensor:
        return x.reshape(b, t, h, hd).transpose((0, 2, 1, 3))

    q = split_heads(queries @ blocks[f"{prefix}.Wq"])
    k = split_heads(keys_values @ blocks[f"{prefix}.Wk"])
    v = split_heads(keys_values @ blocks[f"{prefix}.Wv"])
    scores = (q @ k.transpose((0, 1, 3, 2))) * (1.0 / np.sqrt(hd))
    attended = scores.softmax() @ v
    merged = attended.transpose((0, 2, 1, 3)).reshape(b, t, td)
    out = merged @ blocks[f"{prefix}.Wo"]
    if residual:
        out = out + queries
    if normalize:
        out = layer_norm(out, blocks[f"{prefix}.ln_gain"],
                         blocks[f"{prefix}.ln_bias"])
    return out


def attention_weights(queries: np.ndarray, keys: np.ndarray,
                      blocks: dict, prefix: str,
                      config: ModelConfig) -> np.ndarray:
    """Per-head attention distributions, shape (batch, heads, T, T)."""
    b, t, _ = queries.shape
    h, hd = config.heads, config.head_dim
    q = (queries @ blocks[f"{prefix}.Wq"]).reshape(b, t, h, hd) \
        .transpose(0, 2, 1, 3)
    k = (keys @ blocks[f"{prefix}.Wk"]).reshape(b, t, h, hd) \
        .transpose(0, 2, 1, 3)
    scores = q @ k.transpose(0, 1, 3, 2) / np.sqrt(hd)
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _head(fused: Tensor, blocks: dict, config: ModelConfig) -> Tensor:
    h = fused
    n_layers = len(config.mlp_hidden) + 1
    for i in range(n_layers):
        h = h @ blocks[f"head.W{i}"] + blocks[f"head.b{i}"]
        if i < n_layers - 1:
            h = h.relu()
    return h.reshape(h.shape[0])


def _as_tensors(params: ModelParams, trainable: bool) -> dict:
    return {name: Tensor(arr, requires_grad=trainable)
            for name, arr in params.blocks.items()}


def forward_graph(params: ModelParams, protein: np.ndarray | None,
                  text: np.ndarray | None, blocks: dict) -> Tensor:
    """Build the forward graph on pre-lifted parameter tensors."""
    config = params.config
    if config.modality in (MODALITY_FUSED, MODALITY_PROTEIN_ONLY):
        if protein is None:
            raise DimensionError("protein embeddings required")
        _check_finite(protein, "protein embeddings")
        p_tok = project(protein, blocks["proj_protein.W"],
                        blocks["proj_protein.b"], config)
    if config.modality in (MODALITY_FUSED, MODALITY_TEXT_ONLY):
        if text is None:
            raise DimensionError("text embeddings required")
        _check_finite(text, "text embeddings")
        x_tok = project(text, blocks["proj_text.W"],
                        blocks["proj_text.b"], config)

    b = (protein if protein is not None else text).shape[0]
    if config.modality == MODALITY_FUSED:
        p_attends_x = cross_attention(p_tok, x_tok, blocks, "attn_p2t", config)
        x_attends_p = cross_attention(x_tok, p_tok, blocks, "attn_t2p", config)
        fused = concat([p_attends_x.reshape(b, config.d_shared),
                        x_attends_p.reshape(b, config.d_shared)], axis=-1)
    else:
        tok = p_tok if config.modality == MODALITY_PROTEIN_ONLY else x_tok
        attended = cross_attention(tok, tok, blocks, "attn_self", config)
        fused = attended.reshape(b, config.d_shared)

    out = _head(fused, blocks, config)
    if config.task == "classification":
        out = out.sigmoid()
    return out


def forward(params: ModelParams, protein: np.ndarray | None,
            text: np.ndarray | None) -> np.ndarray:
    """Evaluate the model; classification yields probabilities in (0, 1)."""
    blocks = _as_tensors(params, trainable=False)
    out = forward_graph(params, protein, text, blocks)
    _check_finite(out.data, "model output")
    return out.data.copy()


predict_scores = forward


# ---------------------------------------------------------------------------
# losses and gradients
# ---------------------------------------------------------------------------


def compute_pos_weight(n_neg: int, n_pos: int) -> float:
    """Positive-class loss weight: twice the negative/positive ratio."""
    if n_pos < 1:
        raise NoPositivesError("no positive instances")
    return 2.0 * n_neg / n_pos


PROB_EPS = 1e-7


def weighted_bce(probabilities: Tensor | np.ndarray, labels: np.ndarray,
                 w_pos: float):
    """Mean of -(w_pos*y*ln p + (1-y)*ln(1-p)) with probability clamping."""
    is_tensor = isinstance(probabilities, Tensor)
    p = probabilities if is_tensor else Tensor(np.asarray(probabilities))
    y = np.asarray(labels, dtype=p.data.dtype)
    p = p.clip(PROB_EPS, 1.0 - PROB_EPS)
    loss = -(w_pos * Tensor(y) * p.log()
             + Tensor(1.0 - y) * (1.0 - p).log()).mean()
    return loss if is_tensor else float(loss.data)


def mse_loss(predictions: Tensor | np.ndarray, targets: np.ndarray):
    is_tensor = isinstance(predictions, Tensor)
    pred = predictions if is_tensor else Tensor(np.asarray(predictions))
    t = np.asarray(targets, dtype=pred.data.dtype)
    diff = pred - Tensor(t)
    loss = (diff * diff).mean()
    return loss if is_tensor else float(loss.data)


def compute_gradients(params: ModelParams, protein: np.ndarray | None,
                      text: np.ndarray | None, labels: np.ndarray,
                      w_pos: float = 1.0):
    """Loss value and per-block gradients; frozen blocks get zero slots."""
    blocks = _as_tensors(params, trainable=True)
    out = forward_graph(params, protein, text, blocks)
    if params.config.task == "classification":
        loss = weighted_bce(out, labels, w_pos)
    else:
        loss = mse_loss(out, labels)
    if not np.isfinite(loss.data):
        raise NonFiniteError("non-finite loss")
    loss.backward()
    grads = {}
    for name, tensor in blocks.items():
        if params.is_frozen(name) or tensor.grad is None:
            grads[name] = np.zeros_like(params.blocks[name])
        else:
            grads[name] = tensor.grad.astype(params.blocks[name].dtype)
    return float(loss.data), grads


class AdamOptimizer:
    """Adaptive moment estimation with bias correction."""

    def __init__(self, params: ModelParams, lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.blocks.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.blocks.items()}

    def step(self, params: ModelParams, grads: dict) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name in params.blocks:
            if params.is_frozen(name):
                continue
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            params.blocks[name] = (
                params.blocks[name]
                - (self.lr * m_hat / (np.sqrt(v_hat) + self.eps))
            ).astype(params.blocks[name].dtype)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_metric: list = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False


def _val_metric(params: ModelParams, data) -> float:
    protein, text, labels = data
    scores = forward(params, protein, text)
    if params.config.task == "classification":
        return classification_metrics(scores, labels)["f1"]
    return regression_metrics(scores, labels)["r2"]


def train(data_train, data_val, config: ModelConfig,
          base_params: ModelParams | None = None) -> tuple:
    """Mini-batch Adam training with best-val early stopping.

    data_* are (protein, text, labels) with None for an absent modality.
    Fully deterministic for a fixed (config, data) pair.
    """
    protein, text, labels = data_train
    n = len(labels)
    if n == 0 or len(data_val[2]) == 0:
        raise ValueError("train and val data must be nonempty")
    params = base_params.copy() if base_params is not None \
        else init_params(config)
    w_pos = 1.0
    if config.task == "classification":
        n_pos = int(np.sum(labels == 1))
        n_neg = int(np.sum(labels == 0))
        if config.w_pos_policy == "twice_neg_over_pos" and n_pos > 0:
            w_pos = compute_pos_weight(n_neg, n_pos)
    optimizer = AdamOptimizer(params, lr=config.learning_rate)
    history = TrainHistory()
    best = -np.inf
    best_params = params.copy()
    since_best = 0
    for epoch in range(config.max_epochs):
        rng = np.random.default_rng([config.seed, epoch])
        order = rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            batch_p = protein[idx] if protein is not None else None
            batch_x = text[idx] if text is not None else None
            loss, grads = compute_gradients(params, batch_p, batch_x,
                                            labels[idx], w_pos)
            if not np.isfinite(loss):
                raise DivergedError(f"loss diverged at epoch {epoch}")
            optimizer.step(params, grads)
            epoch_loss += loss
            n_batches += 1
        history.train_loss.append(epoch_loss / n_batches)
        metric = _val_metric(params, data_val)
        history.val_metric.append(metric)
        if metric > best:
            best = metric
            best_params = params.copy()
            history.best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                history.stopped_early = True
                break
    return best_params, history


def finetune(base: ModelParams, data, config: ModelConfig) -> tuple:
    """Train only the prediction head on a 70:15:15 internal split.

    Projection and fusion blocks are frozen and come back bit-identical.
    """
    protein, text, labels = data
    n = len(labels)
    if n == 0:
        raise ValueError("finetune data must be nonempty")
    rng = np.random.default_rng(config.seed)
    order = rng.permutation(n)
    n_train = int(round(n * 0.70))
    n_val = int(round(n * 0.15))
    idx_train = order[:n_train]
    idx_val = order[n_train:n_train + n_val]
    idx_test = order[n_train + n_val:]

    def subset(idx):
        return (protein[idx] if protein is not None else None,
                text[idx] if text is not None else None,
                labels[idx])

    start = base.copy()
    start.freeze_flags["projection"] = True
    start.freeze_flags["fusion"] = True
    tuned, history = train(subset(idx_train), subset(idx_val), config,
                           base_params=start)
    return tuned, history, (idx_train, idx_val, idx_test)


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------


def save_checkpoint(params: ModelParams, path) -> None:
    """JSON manifest at `path`, float32 LE payload at `path`.bin."""
    path = str(path)
    table = []
    offset = 0
    payload = bytearray()
    for name in sorted(params.blocks):
        arr = np.ascontiguousarray(params.blocks[name], dtype="<f4")
        raw = arr.tobytes()
        table.append({"name": name, "shape": list(arr.shape),
                      "offset": offset, "length": len(raw)})
        payload.extend(raw)
        offset += len(raw)
    manifest = {
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "config": params.config.to_dict(),
        "freeze_flags": params.freeze_flags,
        "blocks": table,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    with open(path + ".bin", "wb") as fh:
        fh.write(bytes(payload))


def load_checkpoint(path) -> ModelParams:
    path = str(path)
    with open(path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("schema_version") != CHECKPOINT_SCHEMA_VERSION:
        raise VersionError(
            f"unsupported schema version {manifest.get('schema_version')}")
    config = ModelConfig.from_dict(manifest["config"])
    with open(path + ".bin", "rb") as fh:
        payload = fh.read()
    blocks = {}
    expected = {name: shape for name, shape in _block_specs(config)}
    for entry in manifest["blocks"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if name not in expected:
            raise CorruptError(f"unexpected block {name!r}")
        if shape != expected[name]:
            raise CorruptError(
                f"block {name!r}: manifest shape {shape} != expected "
                f"{expected[name]}")
        length = int(np.prod(shape)) * 4
        if entry["length"] != length:
            raise CorruptError(f"block {name!r}: bad byte length")
        raw = payload[entry["offset"]:entry["offset"] + length]
        if len(raw) != length:
            raise CorruptError(f"block {name!r}: truncated payload")
        blocks[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    missing = set(expected) - set(blocks)
    if missing:
        raise CorruptError(f"missing blocks: {sorted(missing)}")
    if config.dtype != "float32":
        blocks = {k: v.astype(config.np_dtype) for k, v in blocks.items()}
    return ModelParams(config=config, blocks=blocks,
                       freeze_flags=dict(manifest.get(
                           "freeze_flags",
                           {g: False for g in FREEZE_GROUPS})))
