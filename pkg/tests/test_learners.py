import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from leakprop import envsim, evaluation, learners, net
from leakprop.learners import ReturnSamples, TrainConfig, Transitions


def _episode(rewards, terminated=True):
    n = len(rewards)
    xs = np.linspace(10, 10 + 20 * n, n + 1)
    return envsim.Episode(xs, np.full(n + 1, 50.0), np.zeros(n, dtype=np.int64),
                          np.asarray(rewards, float), terminated)


def _ds(episodes, gamma=0.99):
    return envsim.TrajectoryDataset("map1", gamma, 0, 2000, episodes)


def tabular_chain_data(seed=0, n=3000, gamma=0.9):
    """Transitions of a random 3-state chain with one-hot inputs, plus the empirical-model values."""
    rng = np.random.default_rng(seed)
    P = np.array([[0.1, 0.6, 0.2], [0.3, 0.2, 0.4], [0.5, 0.1, 0.1]])   # rows leave 0.1-0.3 for termination
    R = np.array([1.0, -0.5, 2.0])
    s = rng.integers(0, 3, n)
    u = rng.random(n)
    cum = np.cumsum(P, axis=1)
    nxt = (u[:, None] > cum[s]).sum(axis=1)            # 3 means terminate
    term = nxt == 3
    r = R[s] + rng.normal(0, 0.1, n) + np.where(term, 5.0, 0.0)
    nxt_c = np.where(term, 0, nxt)
    eye = np.eye(3)
    tr = Transitions(eye[s], r, eye[nxt_c], term)
    # maximum-likelihood model
    counts = np.zeros((3, 3))
    np.add.at(counts, (s[~term], nxt[~term]), 1.0)
    visits = np.bincount(s, minlength=3).astype(float)
    P_hat = counts / visits[:, None]
    r_hat = np.bincount(s, weights=r, minlength=3) / visits
    v = np.linalg.solve(np.eye(3) - gamma * P_hat, r_hat)
    return tr, v


# ---------------------------------------------------------------- returns

def test_return_example():
    s = learners.compute_returns(_ds([_episode([0, 0, 30])]), 0.99)
    assert np.isclose(s.returns[0], 30 * 0.99**2, rtol=1e-15) and len(s.returns) == 3


def test_zero_reward_returns():
    s = learners.compute_returns(_ds([_episode([0] * 7, False)]))
    assert np.all(s.returns == 0)


def test_gamma_zero_returns_are_rewards():
    ep = _episode([1, 2, 3])
    assert np.array_equal(learners.compute_returns(_ds([ep]), 0.0).returns, [1, 2, 3])


@settings(max_examples=50, deadline=None)
@given(r=st.lists(st.floats(-10, 10), min_size=1, max_size=40), g=st.floats(0, 0.999))
def test_returns_backward_recursion_and_direct_sum(r, g):
    G = learners.discounted_returns(np.array(r), g)
    for t in range(len(r)):
        direct = sum(g**k * r[t + k] for k in range(len(r) - t))
        assert abs(G[t] - direct) < 1e-9 * (1 + abs(direct))
        nxt = G[t + 1] if t + 1 < len(r) else 0.0
        assert G[t] == r[t] + g * nxt


def test_empty_dataset_rejected():
    with pytest.raises(ValueError):
        learners.compute_returns(_ds([]))


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(method="SARSA")
    with pytest.raises(ValueError):
        TrainConfig(gamma=1.0)
    with pytest.raises(ValueError):
        TrainConfig(embedding="pca")
    assert TrainConfig(method="td").method == "TD"
    d = TrainConfig()
    assert (d.minibatch_size, d.steps, d.lr, d.beta1, d.beta2, d.eps) == (32, 40000, 1e-3, 0.9, 0.999, 1e-8)


# ---------------------------------------------------------------- MC

def test_mc_regresses_to_constant():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, size=(500, 2))
    c = 7.5
    model = net.Mlp(net.MlpSpec((2, 30, 30, 1)), seed=0)
    learners.train_mc(ReturnSamples(x, np.full(500, c)), model, TrainConfig("MC", steps=3000, lr=1e-2))
    assert np.all(np.abs(model.predict(x)[:, 0] - c) < 0.05 * c + 0.01)


def test_zero_steps_leaves_model_unchanged(small_ds1):
    model = net.Mlp(net.MlpSpec((2, 4, 1)), seed=0)
    before = model.params.copy()
    res = learners.train(small_ds1, model, TrainConfig("MC", steps=0), envsim.normalize_positions)
    assert np.array_equal(model.params, before) and len(res.losses) == 0


@pytest.mark.parametrize("method", ["MC", "TD"])
def test_training_deterministic(small_ds1, method):
    curves = []
    for _ in range(2):
        m = net.Mlp(net.MlpSpec((2, 8, 1)), seed=1)
        curves.append(learners.train(small_ds1, m, TrainConfig(method, steps=200, seed=4),
                                     envsim.normalize_positions))
    assert np.array_equal(curves[0].losses, curves[1].losses)
    assert np.array_equal(curves[0].model.params, curves[1].model.params)


def test_nan_loss_aborts():
    x = np.zeros((4, 1))
    with pytest.raises(net.TrainingDiverged, match="step 0"):
        learners.train_mc(ReturnSamples(x, np.full(4, np.nan)), net.Mlp(net.MlpSpec((1, 1))),
                          TrainConfig("MC", steps=3))


# ---------------------------------------------------------------- TD

def test_td_one_step_sgd_arithmetic():
    # zero input, so the bias is the single effective (constant-feature) parameter
    tr = Transitions(np.zeros((1, 1)), np.array([30.0]), np.zeros((1, 1)), np.array([True]))
    model = net.Mlp(net.MlpSpec((1, 1)), np.zeros(2))
    learners.train_td(tr, model, TrainConfig("TD", steps=1, lr=0.5, optimizer="sgd", full_batch=True))
    assert model.predict(np.zeros((1, 1)))[0, 0] == 15.0


def test_td_is_semi_gradient():
    rng = np.random.default_rng(0)
    spec = net.MlpSpec((2, 5, 1))
    model = net.Mlp(spec, seed=3)
    x, xn = rng.normal(size=(6, 2)), rng.normal(size=(6, 2))
    r = rng.normal(size=6)
    term = np.zeros(6, bool)
    y = learners.td_targets(model, r, xn, term, 0.9)
    out, cache = model.forward(x)
    err = out[:, 0] - y
    semi = model.backward(cache, (err / 6)[:, None])
    # full gradient of the squared TD error adds a term through v(s'); removing it recovers semi
    _, cn = model.forward(xn)
    through_next = model.backward(cn, (-0.9 * err / 6)[:, None])
    full = semi + through_next
    assert np.allclose(full - through_next, semi, rtol=0, atol=1e-15)
    assert np.max(np.abs(through_next)) > 1e-6
    # and the applied update is the semi-gradient one
    m2 = net.Mlp(spec, model.params.copy())
    learners.train_td(Transitions(x, r, xn, term), m2,
                      TrainConfig("TD", steps=1, lr=0.1, gamma=0.9, optimizer="sgd", full_batch=True))
    assert np.allclose(m2.params, model.params - 0.1 * semi, rtol=0, atol=1e-15)


def test_td_terminal_target_is_reward():
    model = net.Mlp(net.MlpSpec((1, 1)), np.array([0.0, 3.0]))
    y = learners.td_targets(model, np.array([1.0, 1.0]), np.zeros((2, 1)), np.array([True, False]), 0.5)
    assert np.array_equal(y, [1.0, 2.5])


def test_gamma_zero_targets_coincide(small_ds1):
    tr = learners.transitions(small_ds1)
    ret = learners.compute_returns(small_ds1, 0.0)
    model = net.Mlp(net.MlpSpec((2, 3, 1)), seed=0)
    y = learners.td_targets(model, tr.rewards, envsim.normalize_positions(tr.next_states), tr.terminal, 0.0)
    assert np.array_equal(y, ret.returns)


def test_gamma_zero_td_and_mc_agree(map1):
    ds = envsim.generate_dataset(map1, 30, 300, seed=1, gamma=0.0)
    preds = []
    for method in ("MC", "TD"):
        m = net.Mlp(net.MlpSpec((2, 30, 30, 1)), seed=0)
        learners.train(ds, m, TrainConfig(method, steps=1500, gamma=0.0, seed=2), envsim.normalize_positions)
        preds.append(m.predict(envsim.normalize_positions(learners.transitions(ds).states))[:, 0])
    assert np.mean((preds[0] - preds[1]) ** 2) < 0.05


def test_tabular_td_recovers_empirical_model():
    tr, v = tabular_chain_data()
    model = net.Mlp(net.MlpSpec((3, 1)), np.zeros(4))
    learners.train_td(tr, model, TrainConfig("TD", steps=4000, lr=0.5, gamma=0.9, optimizer="sgd",
                                             full_batch=True))
    assert np.max(np.abs(model.predict(np.eye(3))[:, 0] - v)) < 1e-3


def test_transitions_terminal_flag_last_only(small_ds1):
    tr = learners.transitions(small_ds1)
    ends = np.cumsum([len(e) for e in small_ds1.episodes]) - 1
    assert set(np.flatnonzero(tr.terminal)) <= set(ends)
    assert tr.terminal.sum() == sum(e.terminated for e in small_ds1.episodes)


def test_frozen_two_stage_trains_only_head(small_ds1):
    m = net.TwoStage(net.MlpSpec((2, 6, 2)), net.MlpSpec((2, 5, 1)), frozen=True, seed=0)
    e0 = m.embed_params.copy()
    v0 = m.value_params.copy()
    learners.train(small_ds1, m, TrainConfig("TD", steps=50), envsim.normalize_positions)
    assert np.array_equal(m.embed_params, e0) and not np.array_equal(m.value_params, v0)


@pytest.mark.slow
def test_map2_mc_error_concentrated_near_wall(map2):
    from leakprop.experiment import ExperimentConfig, run_experiment
    truth = evaluation.ground_truth(map2, 0.99, 10.0, 100, 12345)
    cfg = ExperimentConfig(map_id="map2", method="MC", seed=0, value_steps=10000, truth_rollouts=100)
    rep = run_experiment(cfg, truth=truth).report
    d = evaluation.wall_distance(map2, rep.errors)
    err = np.abs(rep.errors.values)
    free = rep.errors.free
    far = err[free & (d > 50)].mean()
    near = err[free & (d <= 20)].mean()
    assert far < 0.5 * near


@pytest.mark.slow
def test_leakage_experiment_td_exceeds_mc(map2):
    td = learners.leakage_experiment("map2", "TD", "none", 0, value_steps=10000, truth_rollouts=100)
    mc = learners.leakage_experiment("map2", "MC", "none", 0, value_steps=10000, truth_rollouts=100)
    assert td.leakage_region == "upper"
    assert td.leakage_score > mc.leakage_score
