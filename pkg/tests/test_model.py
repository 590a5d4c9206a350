"""Model tests: forward pass against a straight-line re-implementation,
attention normalization, full finite-difference gradient checks, losses,
initialization, training behaviour, fine-tuning, and checkpoint I/O."""

from __future__ import annotations

import time

import numpy as np
import pytest

from nanocorona.errors import (
    CorruptError,
    DimensionError,
    NonFiniteError,
    NoPositivesError,
    VersionError,
)
from nanocorona.model import (
    AdamOptimizer,
    ModelConfig,
    attention_weights,
    compute_gradients,
    compute_pos_weight,
    finetune,
    forward,
    init_params,
    load_checkpoint,
    mse_loss,
    parameter_count,
    save_checkpoint,
    train,
    weighted_bce,
)

from conftest import tiny_config


# ---------------------------------------------------------------------------
# straight-line reference forward pass (independent of the package internals:
# plain loops and numpy primitives only)
# ---------------------------------------------------------------------------


def _ref_softmax_rows(scores):
    out = np.empty_like(scores)
    for i in range(scores.shape[0]):
        row = scores[i] - scores[i].max()
        e = np.exp(row)
        out[i] = e / e.sum()
    return out


def _ref_attention(queries, keys_values, blocks, prefix, cfg):
    B, T, td = queries.shape
    H = cfg.heads
    hd = td // H
    out = np.empty_like(queries)
    for s in range(B):
        q_all = queries[s] @ blocks[f"{prefix}.Wq"]
        k_all = keys_values[s] @ blocks[f"{prefix}.Wk"]
        v_all = keys_values[s] @ blocks[f"{prefix}.Wv"]
        merged = np.empty((T, td))
        for h in range(H):
            sl = slice(h * hd, (h + 1) * hd)
            q, k, v = q_all[:, sl], k_all[:, sl], v_all[:, sl]
            weights = _ref_softmax_rows(q @ k.T / np.sqrt(hd))
            merged[:, sl] = weights @ v
        attended = merged @ blocks[f"{prefix}.Wo"] + queries[s]
        for t in range(T):
            row = attended[t]
            mu = row.mean()
            var = ((row - mu) ** 2).mean()
            out[s, t] = ((row - mu) / np.sqrt(var + 1e-5)
                         * blocks[f"{prefix}.ln_gain"]
                         + blocks[f"{prefix}.ln_bias"])
    return out


def reference_forward(params, protein, text):
    cfg = params.config
    blocks = params.blocks
    B = (protein if protein is not None else text).shape[0]
    T, td = cfg.tokens, cfg.d_shared // cfg.tokens

    def tokens(emb, prefix):
        flat = emb @ blocks[f"{prefix}.W"] + blocks[f"{prefix}.b"]
        return flat.reshape(B, T, td)

    if cfg.modality == "fused":
        p_tok = tokens(protein, "proj_protein")
        x_tok = tokens(text, "proj_text")
        a = _ref_attention(p_tok, x_tok, blocks, "attn_p2t", cfg)
        b = _ref_attention(x_tok, p_tok, blocks, "attn_t2p", cfg)
        fused = np.concatenate(
            [a.reshape(B, cfg.d_shared), b.reshape(B, cfg.d_shared)], axis=1)
    else:
        emb, prefix = ((protein, "proj_protein")
                       if cfg.modality == "protein_only"
                       else (text, "proj_text"))
        tok = tokens(emb, prefix)
        fused = _ref_attention(tok, tok, blocks, "attn_self",
                               cfg).reshape(B, cfg.d_shared)

    h = fused
    for i in range(len(cfg.mlp_hidden) + 1):
        h = h @ blocks[f"head.W{i}"] + blocks[f"head.b{i}"]
        if i < len(cfg.mlp_hidden):
            h = np.maximum(h, 0.0)
    h = h.reshape(B)
    if cfg.task == "classification":
        h = 1.0 / (1.0 + np.exp(-h))
    return h


def _draw(cfg, rng, batch=4):
    protein = rng.standard_normal((batch, cfg.protein_dim)) \
        if cfg.modality in ("fused", "protein_only") else None
    text = rng.standard_normal((batch, cfg.text_dim)) \
        if cfg.modality in ("fused", "text_only") else None
    return protein, text


class TestForward:
    @pytest.mark.parametrize("modality",
                             ["fused", "protein_only", "text_only"])
    def test_matches_reference_on_five_draws(self, modality):
        cfg = tiny_config(modality=modality)
        params = init_params(cfg)
        rng = np.random.default_rng(0)
        for _ in range(5):
            protein, text = _draw(cfg, rng)
            got = forward(params, protein, text)
            want = reference_forward(params, protein, text)
            assert np.max(np.abs(got - want)) < 1e-6

    def test_regression_task_reference(self):
        cfg = tiny_config(task="regression")
        params = init_params(cfg)
        protein, text = _draw(cfg, np.random.default_rng(1))
        got = forward(params, protein, text)
        assert np.max(np.abs(got - reference_forward(params, protein, text))) \
            < 1e-6

    def test_classification_outputs_are_probabilities(self):
        cfg = tiny_config()
        params = init_params(cfg)
        protein, text = _draw(cfg, np.random.default_rng(2), batch=16)
        out = forward(params, protein, text)
        assert out.shape == (16,)
        assert np.all((out > 0) & (out < 1))

    def test_wrong_embedding_dim_rejected(self):
        cfg = tiny_config()
        params = init_params(cfg)
        bad = np.zeros((2, cfg.protein_dim + 1))
        text = np.zeros((2, cfg.text_dim))
        with pytest.raises(DimensionError):
            forward(params, bad, text)

    def test_missing_modality_rejected(self):
        cfg = tiny_config()
        params = init_params(cfg)
        with pytest.raises(DimensionError):
            forward(params, None, np.zeros((2, cfg.text_dim)))

    def test_nan_embeddings_rejected(self):
        cfg = tiny_config()
        params = init_params(cfg)
        protein, text = _draw(cfg, np.random.default_rng(3))
        protein[0, 0] = np.nan
        with pytest.raises(NonFiniteError):
            forward(params, protein, text)


class TestAttentionWeights:
    def test_rows_sum_to_one(self):
        cfg = tiny_config()
        params = init_params(cfg)
        rng = np.random.default_rng(4)
        q = rng.standard_normal((3, cfg.tokens, cfg.token_dim))
        k = rng.standard_normal((3, cfg.tokens, cfg.token_dim))
        weights = attention_weights(q, k, params.blocks, "attn_p2t", cfg)
        assert weights.shape == (3, cfg.heads, cfg.tokens, cfg.tokens)
        assert np.max(np.abs(weights.sum(axis=-1) - 1.0)) < 1e-6
        assert np.all(weights >= 0)

    def test_identical_keys_give_uniform_weights(self):
        cfg = tiny_config()
        params = init_params(cfg)
        rng = np.random.default_rng(5)
        q = rng.standard_normal((2, cfg.tokens, cfg.token_dim))
        one_key = rng.standard_normal((1, 1, cfg.token_dim))
        k = np.broadcast_to(one_key, (2, cfg.tokens, cfg.token_dim)).copy()
        weights = attention_weights(q, k, params.blocks, "attn_p2t", cfg)
        assert np.max(np.abs(weights - 1.0 / cfg.tokens)) < 1e-9


class TestGradients:
    @pytest.mark.parametrize("task,modality", [
        ("classification", "fused"),
        ("regression", "fused"),
        ("classification", "protein_only"),
        ("classification", "text_only"),
    ])
    def test_every_block_matches_finite_differences(self, task, modality):
        cfg = tiny_config(task=task, modality=modality)
        params = init_params(cfg)
        rng = np.random.default_rng(6)
        protein, text = _draw(cfg, rng, batch=3)
        labels = rng.integers(0, 2, 3).astype(np.float64) \
            if task == "classification" else rng.standard_normal(3)
        w_pos = 1.7 if task == "classification" else 1.0
        started = time.monotonic()
        _, grads = compute_gradients(params, protein, text, labels, w_pos)

        def loss_at():
            out = forward(params, protein, text)
            if task == "classification":
                return weighted_bce(out, labels, w_pos)
            return mse_loss(out, labels)

        step = 1e-4
        for name, block in params.blocks.items():
            flat = block.reshape(-1)
            numeric = np.empty_like(flat)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + step
                hi = loss_at()
                flat[j] = orig - step
                lo = loss_at()
                flat[j] = orig
                numeric[j] = (hi - lo) / (2 * step)
            analytic = grads[name].reshape(-1)
            denom = np.maximum(np.abs(numeric) + np.abs(analytic), 1e-8)
            rel = np.abs(numeric - analytic) / denom
            assert rel.max() < 1e-4, f"{name}: max rel err {rel.max():.2e}"
        assert time.monotonic() - started < 60.0

    def test_frozen_blocks_get_zero_gradients(self):
        cfg = tiny_config()
        params = init_params(cfg)
        params.freeze_flags["projection"] = True
        rng = np.random.default_rng(7)
        protein, text = _draw(cfg, rng)
        labels = np.array([0.0, 1.0, 1.0, 0.0])
        _, grads = compute_gradients(params, protein, text, labels)
        for name, g in grads.items():
            if name.startswith("proj_"):
                assert not g.any()
            else:
                assert g.any()


class TestLosses:
    def test_pos_weight_exact(self):
        assert compute_pos_weight(900, 100) == 18.0
        assert compute_pos_weight(7, 2) == 7.0
        assert compute_pos_weight(0, 5) == 0.0

    def test_pos_weight_requires_positives(self):
        with pytest.raises(NoPositivesError):
            compute_pos_weight(10, 0)

    def test_weighted_bce_hand_check(self):
        p = np.array([0.9, 0.2, 0.5])
        y = np.array([1.0, 0.0, 1.0])
        w = 3.0
        expected = -np.mean([w * np.log(0.9), np.log(0.8),
                             w * np.log(0.5)])
        assert abs(weighted_bce(p, y, w) - expected) < 1e-9

    def test_weighted_bce_clamps_extremes(self):
        loss = weighted_bce(np.array([0.0, 1.0]), np.array([1.0, 0.0]), 1.0)
        assert np.isfinite(loss)

    def test_mse_hand_check(self):
        pred = np.array([1.0, 2.0, 4.0])
        target = np.array([1.0, 0.0, 1.0])
        assert mse_loss(pred, target) == pytest.approx(13.0 / 3.0, abs=1e-12)


class TestInit:
    def test_parameter_count_matches_closed_form(self):
        cfg = tiny_config()
        td = cfg.d_shared // cfg.tokens
        expected = (cfg.protein_dim * cfg.d_shared + cfg.d_shared
                    + cfg.text_dim * cfg.d_shared + cfg.d_shared
                    + 2 * (4 * td * td + 2 * td))
        widths = [2 * cfg.d_shared, *cfg.mlp_hidden, 1]
        for fan_in, fan_out in zip(widths, widths[1:]):
            expected += fan_in * fan_out + fan_out
        assert parameter_count(cfg) == expected
        assert init_params(cfg).count() == expected

    def test_deterministic_per_seed(self):
        cfg = tiny_config()
        a, b = init_params(cfg, seed=3), init_params(cfg, seed=3)
        c = init_params(cfg, seed=4)
        assert all(np.array_equal(a.blocks[k], b.blocks[k]) for k in a.blocks)
        assert any(not np.array_equal(a.blocks[k], c.blocks[k])
                   for k in a.blocks)

    def test_bias_zero_gain_one_weight_scale(self):
        cfg = ModelConfig(protein_dim=512, text_dim=512, d_shared=256,
                          tokens=8, heads=4, seed=0)
        params = init_params(cfg)
        for name, block in params.blocks.items():
            leaf = name.rsplit(".", 1)[-1]
            if leaf == "ln_gain":
                assert np.all(block == 1.0)
            elif leaf == "ln_bias" or leaf.startswith("b"):
                assert not block.any()
        w = params.blocks["proj_protein.W"]
        assert abs(w.mean()) < 0.01
        assert w.std() == pytest.approx(np.sqrt(2.0 / 512), rel=0.05)


def _toy_data(cfg, n, seed, task="classification"):
    """Embeddings with a linearly decodable signal in both modalities."""
    rng = np.random.default_rng(seed)
    z = rng.integers(0, 2, n).astype(np.float64)
    protein = rng.standard_normal((n, cfg.protein_dim))
    text = rng.standard_normal((n, cfg.text_dim))
    protein[:, 0] += 3.0 * (2 * z - 1)
    text[:, 0] += 3.0 * (2 * z - 1)
    labels = z if task == "classification" \
        else 2 * z - 1 + 0.05 * rng.standard_normal(n)
    return protein, text, labels


class TestTrain:
    def test_overfits_small_classification_set(self):
        cfg = tiny_config(max_epochs=200, patience=200, batch_size=16,
                          learning_rate=3e-3)
        data = _toy_data(cfg, 64, seed=0)
        params, history = train(data, data, cfg)
        assert max(history.val_metric) >= 0.95

    def test_overfits_small_regression_set(self):
        cfg = tiny_config(task="regression", max_epochs=200, patience=200,
                          batch_size=16, learning_rate=3e-3)
        data = _toy_data(cfg, 64, seed=0, task="regression")
        params, history = train(data, data, cfg)
        assert max(history.val_metric) >= 0.9

    def test_deterministic_per_seed(self):
        cfg = tiny_config(max_epochs=5, patience=10)
        data = _toy_data(cfg, 40, seed=1)
        val = _toy_data(cfg, 16, seed=2)
        a, _ = train(data, val, cfg)
        b, _ = train(data, val, cfg)
        for name in a.blocks:
            assert np.array_equal(a.blocks[name], b.blocks[name]), name

    def test_best_val_params_returned(self):
        cfg = tiny_config(max_epochs=30, patience=5)
        data = _toy_data(cfg, 40, seed=3)
        val = _toy_data(cfg, 16, seed=4)
        params, history = train(data, val, cfg)
        scores = forward(params, val[0], val[1])
        from nanocorona.metrics import classification_metrics
        assert classification_metrics(scores, val[2])["f1"] == \
            pytest.approx(max(history.val_metric))

    def test_nan_input_raises(self):
        cfg = tiny_config(max_epochs=3)
        data = _toy_data(cfg, 20, seed=5)
        data[0][0, 0] = np.nan
        with pytest.raises(NonFiniteError):
            train(data, data, cfg)


class TestFinetune:
    def test_frozen_blocks_bit_identical_and_head_moves(self):
        cfg = tiny_config(max_epochs=5, patience=10)
        base = init_params(cfg)
        before = {k: v.copy() for k, v in base.blocks.items()}
        data = _toy_data(cfg, 60, seed=6)
        tuned, history, _ = finetune(base, data, cfg)
        for name in tuned.blocks:
            if name.startswith(("proj_", "attn_")):
                assert tuned.blocks[name].tobytes() == \
                    before[name].tobytes(), name
        assert any(not np.array_equal(tuned.blocks[k], before[k])
                   for k in tuned.blocks if k.startswith("head."))
        # base parameters are untouched
        for name in base.blocks:
            assert np.array_equal(base.blocks[name], before[name])

    def test_internal_split_is_70_15_15(self):
        cfg = tiny_config(max_epochs=2)
        base = init_params(cfg)
        data = _toy_data(cfg, 100, seed=7)
        _, _, (idx_train, idx_val, idx_test) = finetune(base, data, cfg)
        assert (len(idx_train), len(idx_val), len(idx_test)) == (70, 15, 15)
        combined = sorted(np.concatenate([idx_train, idx_val, idx_test]))
        assert combined == list(range(100))


class TestCheckpoint:
    def _params(self):
        return init_params(tiny_config(dtype="float32"))

    def test_roundtrip_bit_identical(self, tmp_path):
        params = self._params()
        path = tmp_path / "model.ckpt"
        save_checkpoint(params, path)
        loaded = load_checkpoint(path)
        assert loaded.config == params.config
        assert set(loaded.blocks) == set(params.blocks)
        for name in params.blocks:
            assert loaded.blocks[name].tobytes() == \
                params.blocks[name].tobytes(), name

    def test_save_is_deterministic(self, tmp_path):
        params = self._params()
        save_checkpoint(params, tmp_path / "a.ckpt")
        save_checkpoint(params, tmp_path / "b.ckpt")
        assert (tmp_path / "a.ckpt").read_bytes() == \
            (tmp_path / "b.ckpt").read_bytes()
        assert (tmp_path / "a.ckpt.bin").read_bytes() == \
            (tmp_path / "b.ckpt.bin").read_bytes()

    def test_freeze_flags_survive(self, tmp_path):
        params = self._params()
        params.freeze_flags["fusion"] = True
        save_checkpoint(params, tmp_path / "m.ckpt")
        assert load_checkpoint(tmp_path / "m.ckpt").freeze_flags["fusion"]

    def test_version_mismatch(self, tmp_path):
        import json
        params = self._params()
        path = tmp_path / "m.ckpt"
        save_checkpoint(params, path)
        manifest = json.loads(path.read_text())
        manifest["schema_version"] = 99
        path.write_text(json.dumps(manifest))
        with pytest.raises(VersionError):
            load_checkpoint(path)

    def test_truncated_payload(self, tmp_path):
        params = self._params()
        path = tmp_path / "m.ckpt"
        save_checkpoint(params, path)
        bin_path = tmp_path / "m.ckpt.bin"
        bin_path.write_bytes(bin_path.read_bytes()[:-10])
        with pytest.raises(CorruptError):
            load_checkpoint(path)

    def test_tampered_shape(self, tmp_path):
        import json
        params = self._params()
        path = tmp_path / "m.ckpt"
        save_checkpoint(params, path)
        manifest = json.loads(path.read_text())
        manifest["blocks"][0]["shape"][0] += 1
        path.write_text(json.dumps(manifest))
        with pytest.raises(CorruptError):
            load_checkpoint(path)

    def test_missing_block(self, tmp_path):
        import json
        params = self._params()
        path = tmp_path / "m.ckpt"
        save_checkpoint(params, path)
        manifest = json.loads(path.read_text())
        dropped = manifest["blocks"].pop()
        path.write_text(json.dumps(manifest))
        with pytest.raises(CorruptError, match=dropped["name"].split(".")[0]):
            load_checkpoint(path)


class TestAdam:
    def test_descends_on_quadratic(self):
        cfg = tiny_config()
        params = init_params(cfg)
        # minimize ||W||^2 over one block using the optimizer directly
        opt = AdamOptimizer(params, lr=0.05)
        name = "head.W0"
        start = float(np.sum(params.blocks[name] ** 2))
        for _ in range(200):
            grads = {k: (2 * params.blocks[k] if k == name
                         else np.zeros_like(params.blocks[k]))
                     for k in params.blocks}
            opt.step(params, grads)
        assert float(np.sum(params.blocks[name] ** 2)) < 0.01 * start
