import numpy as np
import pytest

from fedchat.errors import NonMatrixTargetError, UnknownTargetError
from fedchat.peft import attach_lora, attach_prefix, default_lora_targets, param_stats
from fedchat.tinylm import TrainBatch, forward, generate, grad, loss_and_grad, sgd_step


class TestAttachLora:
    def test_zero_init_forward_identical(self, params, config, rng):
        adapted = attach_lora(params, config, r=4, alpha=8)
        for _ in range(20):
            x = rng.integers(0, 259, size=(2, rng.integers(1, 16)))
            assert np.array_equal(forward(params, config, x), forward(adapted, config, x))

    def test_param_count_per_target(self, params, config):
        adapted = attach_lora(params, config, target_names=["layers.0.attn.wq"], r=4, alpha=8)
        assert adapted["layers.0.attn.wq.lora_A"].shape == (4, 64)
        assert adapted["layers.0.attn.wq.lora_B"].shape == (64, 4)
        added_trainable = (param_stats(adapted).trainable_params)
        assert added_trainable == 2 * 64 * 4 == 512

    def test_base_frozen_only_factors_trainable(self, params, config):
        adapted = attach_lora(params, config, r=4)
        for name in adapted.names:
            if name.endswith(".lora_A") or name.endswith(".lora_B"):
                assert adapted.is_trainable(name)
            else:
                assert not adapted.is_trainable(name)

    def test_rank_above_min_dim_warns_but_attaches(self, params, config):
        with pytest.warns(UserWarning, match="rank"):
            adapted = attach_lora(params, config, target_names=["layers.0.attn.wq"], r=128)
        assert adapted["layers.0.attn.wq.lora_A"].shape == (128, 64)

    def test_unknown_target(self, params, config):
        with pytest.raises(UnknownTargetError):
            attach_lora(params, config, target_names=["layers.9.attn.wq"])

    def test_non_matrix_target(self, params, config):
        with pytest.raises(NonMatrixTargetError):
            attach_lora(params, config, target_names=["lnf.g"])

    def test_default_targets_are_attention_projections(self, config):
        targets = default_lora_targets(config)
        assert len(targets) == 4 * config.n_layers
        assert all(".attn.w" in t for t in targets)

    def test_training_moves_only_factors(self, params, config, rng):
        adapted = attach_lora(params, config, r=2)
        batch = TrainBatch(
            inputs=rng.integers(0, 259, size=(2, 8)),
            targets=rng.integers(0, 259, size=(2, 8)),
            loss_mask=np.ones((2, 8), dtype=bool),
        )
        stepped = sgd_step(adapted, grad(adapted, config, batch), 0.5)
        moved = [n for n in adapted.names if not np.array_equal(stepped[n], adapted[n])]
        assert moved and all(".lora_" in n for n in moved)
        out_before = forward(adapted, config, batch.inputs)
        out_after = forward(stepped, config, batch.inputs)
        assert not np.array_equal(out_before, out_after)


class TestAttachPrefix:
    def test_param_count(self, params, config):
        adapted = attach_prefix(params, config, prefix_len=4)
        stats = param_stats(adapted)
        assert stats.trainable_params == 2 * config.n_layers * 4 * config.d_model == 1024

    def test_output_length_unchanged(self, params, config, rng):
        adapted = attach_prefix(params, config, prefix_len=6)
        x = rng.integers(0, 259, size=(2, 11))
        assert forward(adapted, config, x).shape == (2, 11, 259)

    def test_zero_init_changes_output_only_by_renormalization(self, params, config, rng):
        adapted = attach_prefix(params, config, prefix_len=4, init_std=0.0)
        x = rng.integers(0, 259, size=(1, 8))
        base_logits = forward(params, config, x)
        pref_logits = forward(adapted, config, x)
        assert pref_logits.shape == base_logits.shape
        assert np.all(np.isfinite(pref_logits))
        # Zero keys with zero values: the prefix only absorbs softmax mass.
        assert not np.array_equal(base_logits, pref_logits)

    def test_generate_runs_after_attach(self, params, config):
        adapted = attach_prefix(params, config, prefix_len=4)
        out = generate(adapted, config, "social", max_new=8)
        assert isinstance(out, str)

    def test_prefix_gradients_flow(self, params, config, rng):
        adapted = attach_prefix(params, config, prefix_len=4)
        batch = TrainBatch(
            inputs=rng.integers(0, 259, size=(2, 8)),
            targets=rng.integers(0, 259, size=(2, 8)),
            loss_mask=np.ones((2, 8), dtype=bool),
        )
        _, grads = loss_and_grad(adapted, config, batch)
        assert grads["layers.0.prefix_k"].any()
        assert grads["layers.0.prefix_v"].any()
        assert not grads["wte"].any()

    def test_prefix_len_validated(self, params, config):
        with pytest.raises(ValueError):
            attach_prefix(params, config, prefix_len=0)


class TestParamStats:
    def test_all_trainable_is_100_percent(self, params):
        stats = param_stats(params)
        assert stats.trainable_percent == 100.0
        assert stats.trainable_params == stats.total_params

    def test_counts_match_mask_iteration(self, params, config):
        adapted = attach_lora(params, config, r=4)
        stats = param_stats(adapted)
        total = sum(a.size for _, a in adapted.items())
        trainable = sum(a.size for n, a in adapted.items() if adapted.is_trainable(n))
        assert stats.total_params == total
        assert stats.trainable_params == trainable
        assert stats.trainable_percent == 100.0 * trainable / total
        assert stats.model_bytes == 4 * total
        assert stats.trainable_bytes == 4 * trainable

    def test_lora_percent_closed_form(self, params, config):
        adapted = attach_lora(params, config, r=4)
        stats = param_stats(adapted)
        n_targets = 4 * config.n_layers
        expected_trainable = n_targets * 2 * 64 * 4
        assert stats.trainable_params == expected_trainable
        base_total = sum(a.size for _, a in params.items())
        expected_total = base_total + expected_trainable + n_targets  # +1 scale each
        assert stats.total_params == expected_total
