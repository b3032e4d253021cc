import math
from dataclasses import replace

import numpy as np
import pytest

from fedgcc.aggregation import StrategyConfig
from fedgcc.compression import dense_bytes, kept_count
from fedgcc.data import WindowedDataset, generate_synthetic, prepare_clients
from fedgcc.fedcore import (ClientState, RoundConfig, local_round, run_training, sample_clients,
                            with_algorithm_defaults)
from fedgcc.model import init_params, layer_dims_for, loss_and_grad, param_count
from fedgcc.numerics import RngStream

HIDDEN = (8, 8)


@pytest.fixture(scope="module")
def small_sets():
    _, train, _ = prepare_clients(generate_synthetic(4, 400, seed=3, heterogeneity=0.7), 6)
    return train


def cfg(**kw):
    base = dict(tau=3, batch_size=8, rounds=6, gamma=0.2, strategy=StrategyConfig("k_relevant", k=2))
    base.update(kw)
    return RoundConfig(**base)


def history_key(result):
    return [(r.round, r.loss, r.uplink_bytes, r.downlink_bytes) for r in result.history]


def test_sample_clients_full_participation_draws_nothing():
    rng = RngStream(0, 1)
    assert sample_clients(5, 1.0, rng) == [0, 1, 2, 3, 4]
    assert rng.draws == 0


def test_sample_clients_partial():
    picks = [sample_clients(8, 0.5, RngStream(2, 1)) for _ in range(2)]
    assert picks[0] == picks[1]
    assert len(set(picks[0])) == 4 and picks[0] == sorted(picks[0])
    assert len(sample_clients(8, 0.3, RngStream(2, 1))) == math.ceil(0.3 * 8)
    seen = set()
    rng = RngStream(3, 1)
    for _ in range(50):
        seen.update(sample_clients(8, 0.25, rng))
    assert seen == set(range(8))


def test_round_config_validation_and_schedule():
    c = RoundConfig()
    assert c.local_lr(0) == 0.1
    assert c.local_lr(100) == pytest.approx(0.01)
    assert c.local_lr(150) == pytest.approx(0.001)
    for bad in (dict(tau=0), dict(gamma=0.0), dict(gamma=1.5), dict(participation=0.0), dict(mu=-1.0)):
        with pytest.raises(ValueError):
            RoundConfig(**bad)


def _client(train, d, seed=0):
    return ClientState("a", np.zeros(d), np.zeros(d), np.zeros(d), train, RngStream(seed, 100))


def test_single_step_gradient(small_sets):
    model = init_params(6, RngStream(0, 0), HIDDEN)
    c = _client(small_sets[0], model.dim)
    res = local_round(c, model.params, model.layer_dims, cfg(tau=1, gamma=1.0), 0.1)
    idx = RngStream(0, 100).integers(8, len(small_sets[0]))
    _, grad = loss_and_grad(model, small_sets[0].inputs[idx], small_sets[0].targets[idx])
    np.testing.assert_allclose(res.g_raw, grad, rtol=1e-9, atol=1e-12)
    assert np.array_equal(res.phi_g.values, res.g_raw)


def test_tracking_term_cancels_its_own_gradient():
    x = np.array([[0.3, -1.0, 0.5, 0.2, 0.0, 1.1]])
    train = WindowedDataset(x, np.array([0.7]), 6)
    model = init_params(6, RngStream(1, 0), HIDDEN)
    _, grad = loss_and_grad(model, x, train.targets)
    c = _client(train, model.dim)
    c.h = 4 * grad  # the per-step correction is h / tau
    res = local_round(c, model.params, model.layer_dims, cfg(tau=4, gamma=1.0, batch_size=1), 0.1)
    assert not np.any(res.g_raw)


def test_zero_rounds_returns_initial_model(small_sets):
    init = init_params(6, RngStream(0, 0), HIDDEN)
    res = run_training(cfg(rounds=0), small_sets, seed=0, hidden=HIDDEN)
    assert res.history == []
    assert res.model == init


@pytest.mark.parametrize("participation", [1.0, 0.5])
def test_client_copies_track_the_server(small_sets, participation):
    res = run_training(cfg(participation=participation), small_sets, seed=1, hidden=HIDDEN)
    synced = [c for c in res.clients if np.array_equal(c.w_local, res.model.params)]
    assert len(synced) >= math.ceil(participation * len(small_sets))


def test_tracking_terms_sum_to_zero_under_mean(small_sets):
    res = run_training(cfg(strategy=StrategyConfig("mean")), small_sets, seed=2, hidden=HIDDEN)
    total = sum(c.h for c in res.clients)
    assert np.abs(total).max() < 1e-12
    assert any(np.any(c.h) for c in res.clients)


def test_uncompressed_single_client_keeps_e_and_h_zero(small_sets):
    res = run_training(cfg(gamma=1.0, strategy=StrategyConfig("mean")), small_sets[:1], seed=0, hidden=HIDDEN)
    assert not np.any(res.clients[0].e)
    assert not np.any(res.clients[0].h)


def test_degenerate_fedgcc_matches_fedavg(small_sets):
    c = cfg(gamma=1.0, strategy=StrategyConfig("mean"))
    a = run_training(c, small_sets[:1], "fedgcc", seed=4, hidden=HIDDEN)
    b = run_training(c, small_sets[:1], "fedavg", seed=4, hidden=HIDDEN)
    assert history_key(a) == history_key(b)
    assert a.model == b.model


def test_fedprox_without_proximal_term_is_fedavg(small_sets):
    a = run_training(with_algorithm_defaults(cfg(mu=0.0), "fedprox"), small_sets, "fedprox", seed=5, hidden=HIDDEN)
    b = run_training(with_algorithm_defaults(cfg(), "fedavg"), small_sets, "fedavg", seed=5, hidden=HIDDEN)
    assert history_key(a) == history_key(b)
    assert a.model == b.model
    c = run_training(with_algorithm_defaults(cfg(mu=1.0), "fedprox"), small_sets, "fedprox", seed=5, hidden=HIDDEN)
    assert c.model != b.model


@pytest.mark.parametrize("kind", ["mean", "k_relevant", "delta_threshold", "all_correlated"])
def test_threads_do_not_change_results(small_sets, kind):
    c = cfg(strategy=StrategyConfig(kind, k=2))
    a = run_training(c, small_sets, seed=6, hidden=HIDDEN, threads=1)
    b = run_training(c, small_sets, seed=6, hidden=HIDDEN, threads=4)
    assert history_key(a) == history_key(b)
    assert a.model == b.model


def test_byte_accounting(small_sets):
    d = param_count(layer_dims_for(6, HIDDEN))
    res = run_training(cfg(gamma=0.05), small_sets, seed=0, hidden=HIDDEN)
    per_up = 4 * 8 * kept_count(d, 0.05)
    per_down = 4 * dense_bytes(d)
    for t, rec in enumerate(res.history, start=1):
        assert rec.uplink_bytes == t * per_up
        assert rec.downlink_bytes == t * per_down
    dense = run_training(with_algorithm_defaults(cfg(), "fedavg"), small_sets, "fedavg", seed=0, hidden=HIDDEN)
    assert dense.history[0].uplink_bytes == 4 * dense_bytes(d)


def test_returning_clients_download_the_model(small_sets):
    d = param_count(layer_dims_for(6, HIDDEN))
    res = run_training(cfg(participation=0.5, rounds=10), small_sets, seed=3, hidden=HIDDEN)
    broadcasts = 10 * 2 * dense_bytes(d)
    extra = res.history[-1].downlink_bytes - broadcasts
    assert extra > 0 and extra % dense_bytes(d) == 0


def test_rmse_callback_recorded(small_sets):
    res = run_training(cfg(rounds=2), small_sets, seed=0, hidden=HIDDEN, evaluate=lambda m: 1.25)
    assert [r.rmse for r in res.history] == [1.25, 1.25]


def test_invalid_inputs(small_sets):
    with pytest.raises(ValueError, match="algorithm"):
        run_training(cfg(), small_sets, "sgd", hidden=HIDDEN)
    with pytest.raises(ValueError, match="k=5"):
        run_training(cfg(strategy=StrategyConfig("k_relevant", k=5)), small_sets, hidden=HIDDEN)
    with pytest.raises(ValueError, match="empty"):
        empty = replace(small_sets[0], inputs=np.empty((0, 6)), targets=np.empty(0))
        run_training(cfg(), [small_sets[0], empty], hidden=HIDDEN)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported(small_sets):
    with pytest.raises(FloatingPointError):
        run_training(cfg(epsilon=1e6, rounds=5), small_sets, seed=0, hidden=HIDDEN)
