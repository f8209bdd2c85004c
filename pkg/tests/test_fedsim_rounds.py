"""Client updates, transport modes and round orchestration."""

import numpy as np
import pytest

from fedchat.errors import EmptyDatasetError
from fedchat.fedsim import (
    ClientState,
    RoundConfig,
    client_update,
    fedavg,
    make_batches,
    run_round,
)
from fedchat.peft import attach_lora, param_stats
from fedchat.tinylm import loss_and_grad, sgd_step

DOCS = [
    f"article {i}: the {w} pipeline batches {w} updates for review and audit."
    for i, w in enumerate(["caption", "stream", "forum", "badge", "digest", "poll",
                           "thread", "filter"])
]


@pytest.fixture(scope="module")
def clients():
    return [ClientState(client_id=k, docs=DOCS[k * 2:(k + 1) * 2], seed=100 + k)
            for k in range(4)]


class TestClientUpdate:
    def test_zero_lr_identity(self, params, config, clients):
        out = client_update(params, config, clients[0], lr=0.0, steps=2)
        for name, arr in params.items():
            assert np.array_equal(out[name], arr)

    def test_single_step_equals_grad_plus_sgd(self, params, config, clients):
        client = clients[1]
        out = client_update(params, config, client, lr=0.3, steps=1)
        batch = client.batches(config, 1)[0]
        _, grads = loss_and_grad(params, config, batch)
        expected = sgd_step(params, grads, 0.3)
        for name in params.names:
            assert np.array_equal(out[name], expected[name])

    def test_three_steps_match_scripted_loop(self, params, config, clients):
        client = clients[2]
        out = client_update(params, config, client, lr=0.2, steps=3)
        scripted = params
        for batch in client.batches(config, 3):
            _, grads = loss_and_grad(scripted, config, batch)
            scripted = sgd_step(scripted, grads, 0.2)
        for name in params.names:
            assert np.array_equal(out[name], scripted[name])

    def test_global_params_not_mutated(self, params, config, clients):
        before = {n: a.copy() for n, a in params.items()}
        client_update(params, config, clients[0], lr=0.5, steps=2)
        for name, arr in params.items():
            assert np.array_equal(arr, before[name])

    def test_empty_dataset(self, params, config):
        with pytest.raises(EmptyDatasetError):
            client_update(params, config, ClientState(0, [], seed=0), lr=0.1, steps=1)


class TestBatches:
    def test_targets_shift_within_document(self, config):
        batches = make_batches(["abcdef"], config.context_len, batch_size=4, seed=0)
        batch = batches[0]
        mask = batch.loss_mask[0]
        assert np.array_equal(batch.inputs[0, 1:][mask[1:]], batch.targets[0, :-1][mask[1:]])

    def test_masked_positions_are_padding(self, config):
        batch = make_batches(["short doc"], config.context_len, 4, seed=0)[0]
        assert not batch.loss_mask.all() or batch.inputs.shape[1] < config.context_len

    def test_deterministic(self, config):
        a = make_batches(DOCS, config.context_len, 4, seed=5)
        b = make_batches(DOCS, config.context_len, 4, seed=5)
        for x, y in zip(a, b):
            assert np.array_equal(x.inputs, y.inputs)
            assert np.array_equal(x.loss_mask, y.loss_mask)


class TestRunRound:
    def test_zero_lr_keeps_global_and_diff_is_header_only(self, params, config, clients):
        cfg = RoundConfig(num_clients=4, local_steps=1, lr=0.0,
                          transport_mode="diff", rounds=1)
        new_global, record, _ = run_round(params, config, clients, cfg)
        for name, arr in params.items():
            assert np.array_equal(new_global[name], arr)
        assert all(size <= 64 for size in record.uplink_bytes.values())

    def test_k1_equals_centralized(self, params, config, clients):
        cfg = RoundConfig(num_clients=1, local_steps=3, lr=0.2, rounds=1)
        new_global, _, _ = run_round(params, config, clients[:1], cfg)
        centralized = client_update(params, config, clients[0], lr=0.2, steps=3)
        for name in params.names:
            assert np.array_equal(new_global[name], centralized[name])

    def test_lossless_transport_equivalence(self, params, config, clients):
        adapted = attach_lora(params, config, r=2)
        globals_by_mode = {}
        for mode in ("full", "diff", "adapters-only"):
            g = adapted
            for r in range(1, 4):
                cfg = RoundConfig(num_clients=4, local_steps=2, lr=0.4,
                                  transport_mode=mode, rounds=3)
                g, _, _ = run_round(g, config, clients, cfg, round_index=r)
            globals_by_mode[mode] = g
        ref = globals_by_mode["full"]
        for mode, g in globals_by_mode.items():
            for name in ref.names:
                assert np.array_equal(g[name], ref[name]), (mode, name)

    def test_adapters_only_uplink_ratio_matches_stats(self, params, config, clients):
        adapted = attach_lora(params, config, r=4)
        stats = param_stats(adapted)
        full_cfg = RoundConfig(num_clients=4, local_steps=1, lr=0.1,
                               transport_mode="full", rounds=1)
        ad_cfg = RoundConfig(num_clients=4, local_steps=1, lr=0.1,
                             transport_mode="adapters-only", rounds=1)
        _, full_rec, _ = run_round(adapted, config, clients, full_cfg)
        _, ad_rec, _ = run_round(adapted, config, clients, ad_cfg)
        ratio = 100.0 * ad_rec.total_uplink / full_rec.total_uplink
        assert abs(ratio - stats.trainable_percent) < 1.0

    def test_diff_uplink_smaller_than_full(self, params, config, clients):
        adapted = attach_lora(params, config, r=4)
        full_cfg = RoundConfig(num_clients=4, local_steps=2, lr=0.4,
                               transport_mode="full", rounds=1)
        diff_cfg = RoundConfig(num_clients=4, local_steps=2, lr=0.4,
                               transport_mode="diff", rounds=1)
        _, full_rec, _ = run_round(adapted, config, clients, full_cfg)
        _, diff_rec, _ = run_round(adapted, config, clients, diff_cfg)
        assert diff_rec.total_uplink < full_rec.total_uplink

    def test_quantized_transport_bounded_deviation(self, params, config, clients):
        cfg_exact = RoundConfig(num_clients=4, local_steps=2, lr=0.3,
                                transport_mode="full", rounds=1)
        cfg_quant = RoundConfig(num_clients=4, local_steps=2, lr=0.3,
                                transport_mode="full", quant_bits=8, rounds=1)
        exact, _, exact_clients = run_round(params, config, clients, cfg_exact)
        quant, _, _ = run_round(params, config, clients, cfg_quant)
        # Per-coordinate deviation is bounded by the largest per-tensor scale/2.
        for name in exact.names:
            stacked = np.stack([exact_clients[c.client_id][name] for c in clients])
            max_scale = 0.0
            for c in clients:
                arr = exact_clients[c.client_id][name]
                span = float(arr.max() - arr.min())
                max_scale = max(max_scale, span / 255.0)
            dev = np.max(np.abs(quant[name].astype(np.float64) -
                                exact[name].astype(np.float64)))
            assert dev <= max_scale / 2 + 1e-6, name

    def test_ledger_matches_serialized_payloads(self, params, config, clients):
        from fedchat.tinylm.io import serialize_model
        cfg = RoundConfig(num_clients=4, local_steps=1, lr=0.1,
                          transport_mode="full", rounds=1)
        _, record, client_models = run_round(params, config, clients, cfg)
        for client in clients:
            expected = len(serialize_model(client_models[client.client_id], config))
            assert record.uplink_bytes[client.client_id] == expected
            assert record.downlink_bytes[client.client_id] == len(
                serialize_model(params, config))


class TestRoundConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            RoundConfig(num_clients=0)
        with pytest.raises(ValueError):
            RoundConfig(local_steps=0)
        with pytest.raises(ValueError):
            RoundConfig(transport_mode="carrier-pigeon")
        with pytest.raises(ValueError):
            RoundConfig(quant_bits=4)

    def test_json_round_trip(self, tmp_path):
        cfg = RoundConfig(num_clients=3, local_steps=7, lr=0.25,
                          transport_mode="diff", quant_bits=8, rounds=2, eval_every=2)
        path = tmp_path / "round.json"
        import json
        path.write_text(json.dumps(cfg.to_dict()))
        loaded = RoundConfig.from_json(path)
        assert loaded == cfg
        assert set(cfg.to_dict()) == {
            "num_clients", "local_steps", "lr", "transport_mode",
            "quant_bits", "rounds", "eval_every"}
