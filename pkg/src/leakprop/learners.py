"""Offline Monte-Carlo regression and semi-gradient TD(0) over stored trajectories."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from leakprop import net
from leakprop.envsim import TrajectoryDataset

METHODS = ("MC", "TD")
EMBEDDINGS = ("none", "oracle", "timeprox", "sf")


@dataclass
class TrainConfig:
    method: str = "TD"
    minibatch_size: int = 32
    steps: int = 40000
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    gamma: float = 0.99
    seed: int = 0
    embedding: str = "none"
    optimizer: str = "adam"
    full_batch: bool = False

    def __post_init__(self):
        self.method = self.method.upper()
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.embedding not in EMBEDDINGS:
            raise ValueError(f"embedding must be one of {EMBEDDINGS}")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")

    def to_dict(self):
        return asdict(self)


class ReturnSamples(NamedTuple):
    states: np.ndarray     # (n, d)
    returns: np.ndarray    # (n,)


class Transitions(NamedTuple):
    states: np.ndarray       # (n, d)
    rewards: np.ndarray      # (n,)
    next_states: np.ndarray  # (n, d)
    terminal: np.ndarray     # (n,) bool


class TrainResult(NamedTuple):
    model: object
    losses: np.ndarray


def discounted_returns(rewards, gamma):
    """G_t = R_{t+1} + gamma * G_{t+1}, zero after the last stored reward."""
    out = np.empty(len(rewards))
    g = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        g = rewards[t] + gamma * g
        out[t] = g
    return out


def compute_returns(dataset: TrajectoryDataset, gamma: float | None = None) -> ReturnSamples:
    """One (state, return) sample per state that has an outgoing transition."""
    if not dataset.episodes:
        raise ValueError("empty dataset")
    gamma = dataset.gamma if gamma is None else gamma
    states = np.concatenate([e.states[:-1] for e in dataset.episodes])
    returns = np.concatenate([discounted_returns(e.rewards, gamma) for e in dataset.episodes])
    return ReturnSamples(states, returns)


def transitions(dataset: TrajectoryDataset) -> Transitions:
    s, r, sn, term = [], [], [], []
    for e in dataset.episodes:
        st = e.states
        s.append(st[:-1])
        sn.append(st[1:])
        r.append(e.rewards)
        t = np.zeros(len(e), dtype=bool)
        if e.terminated:
            t[-1] = True
        term.append(t)
    return Transitions(np.concatenate(s), np.concatenate(r), np.concatenate(sn), np.concatenate(term))


class _Optimizer:
    def __init__(self, config: TrainConfig, n):
        self.config = config
        if config.optimizer == "adam":
            self.state = net.AdamState.zeros(n, config.lr, config.beta1, config.beta2, config.eps)

    def step(self, params, grad):
        if self.config.optimizer == "adam":
            net.adam_step(self.state, params, grad)
        else:
            net.sgd_step(self.config.lr, params, grad)


def _trainable(model):
    """(forward/backward target, params array to optimize) for a model.

    A frozen two-stage model trains only its value head, on embeddings that
    are computed once up front; this is exactly the same update as training
    the full composition with a zero embedding gradient.
    """
    if isinstance(model, net.TwoStage) and model.frozen:
        head = net.Mlp(model.value_spec, model.value_params)

        def featurize(x):
            return net._act(model.link, model.embed(x))
        return head, featurize
    return model, None


def _check_loss(loss, step):
    if not np.isfinite(loss):
        raise net.TrainingDiverged(f"non-finite loss at step {step}")


def train_mc(data, model, config: TrainConfig, featurize=None) -> TrainResult:
    """Regress model outputs onto Monte-Carlo returns with 1/2 mean squared error.

    ``data`` is a TrajectoryDataset (states are passed through ``featurize``)
    or ready-made ReturnSamples whose states are model inputs.
    """
    if isinstance(data, TrajectoryDataset):
        samples = compute_returns(data, config.gamma)
        x_all = featurize(samples.states) if featurize else samples.states
        g_all = samples.returns
    else:
        x_all, g_all = data.states, data.returns
    target, pre = _trainable(model)
    if pre is not None:
        x_all = pre(x_all)
    rng = np.random.default_rng(config.seed)
    opt = _Optimizer(config, target.params.size)
    n = len(g_all)
    losses = np.empty(config.steps)
    for i in range(config.steps):
        if config.full_batch:
            x, g = x_all, g_all
        else:
            idx = rng.integers(0, n, size=config.minibatch_size)
            x, g = x_all[idx], g_all[idx]
        out, cache = target.forward(x)
        err = out[:, 0] - g
        loss = 0.5 * float(np.mean(err * err))
        _check_loss(loss, i)
        losses[i] = loss
        grad = target.backward(cache, (err / len(err))[:, None])
        opt.step(target.params, grad)
    return TrainResult(model, losses)


def td_targets(model, rewards, next_inputs, terminal, gamma):
    """Bootstrap targets r + gamma * v(s'); no gradient flows through v(s')."""
    v_next = model.predict(next_inputs)[:, 0]
    return rewards + gamma * np.where(terminal, 0.0, v_next)


def train_td(data, model, config: TrainConfig, featurize=None) -> TrainResult:
    """Semi-gradient TD(0) on uniformly sampled stored transitions."""
    if isinstance(data, TrajectoryDataset):
        tr = transitions(data)
        if featurize:
            tr = Transitions(featurize(tr.states), tr.rewards, featurize(tr.next_states), tr.terminal)
    else:
        tr = data
    target, pre = _trainable(model)
    xs, xn = tr.states, tr.next_states
    if pre is not None:
        xs, xn = pre(xs), pre(xn)
    rng = np.random.default_rng(config.seed)
    opt = _Optimizer(config, target.params.size)
    n = len(tr.rewards)
    losses = np.empty(config.steps)
    for i in range(config.steps):
        if config.full_batch:
            idx = slice(None)
        else:
            idx = rng.integers(0, n, size=config.minibatch_size)
        x = xs[idx]
        y = td_targets(target, tr.rewards[idx], xn[idx], tr.terminal[idx], config.gamma)
        out, cache = target.forward(x)
        err = out[:, 0] - y
        loss = 0.5 * float(np.mean(err * err))
        _check_loss(loss, i)
        losses[i] = loss
        grad = target.backward(cache, (err / len(err))[:, None])
        opt.step(target.params, grad)
    return TrainResult(model, losses)


def train(data, model, config: TrainConfig, featurize=None) -> TrainResult:
    if config.method == "MC":
        return train_mc(data, model, config, featurize)
    return train_td(data, model, config, featurize)


def fit_regression(x, y, model, steps, seed, batch=32, lr=1e-3):
    """Minibatch Adam on 1/2 mean squared error for multi-output targets."""
    rng = np.random.default_rng(seed)
    opt = net.AdamState.zeros(model.params.size, lr)
    losses = np.empty(steps)
    n = len(x)
    for i in range(steps):
        idx = rng.integers(0, n, size=batch)
        out, cache = model.forward(x[idx])
        err = out - y[idx]
        loss = 0.5 * float(np.mean(np.sum(err * err, axis=1)))
        _check_loss(loss, i)
        losses[i] = loss
        net.adam_step(opt, model.params, model.backward(cache, err / len(err)))
    return losses


def leakage_experiment(map_id, method, embedding_mode, seed, **overrides):
    """Dataset -> optional embedding -> value training -> evaluation; see ``experiment``."""
    from leakprop.experiment import ExperimentConfig, run_experiment
    cfg = ExperimentConfig(map_id=map_id, method=method, embedding=embedding_mode, seed=seed, **overrides)
    return run_experiment(cfg).report
