"""Two-dimensional state embeddings: oracle unfolding, time proximity, successor features."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from leakprop import net
from leakprop.envsim import HEIGHT, WIDTH, TrajectoryDataset, normalize_positions
from leakprop.learners import fit_regression

EMBED_SIZES = (2, 20, 20, 20, 2)
ORACLE_MAX_ANGLE = 60.0
# map1 corridor junctions: the top corridor hinges on the right end of wall A,
# the bottom corridor on the left end of wall B
_TOP_PIVOT = (400.0, 100.0)
_BOTTOM_PIVOT = (0.0, 200.0)


@dataclass(frozen=True)
class OracleParams:
    alpha: float = 1.0
    map_id: str = "map1"

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.map_id != "map1":
            raise ValueError("the oracle embedding is only defined for map1")


def _rotate(x, y, pivot, theta):
    c, s = math.cos(theta), math.sin(theta)
    dx, dy = x - pivot[0], y - pivot[1]
    return pivot[0] + c * dx - s * dy, pivot[1] + s * dx + c * dy


def oracle_unfold(params: OracleParams, positions) -> np.ndarray:
    """Piecewise-rigid unfolding of map1 in map units.

    The middle corridor stays put; the top and bottom corridors swing away
    from it about their junctions by alpha * 60 degrees.
    """
    pos = np.array(positions, dtype=np.float64, copy=True).reshape(-1, 2)
    x, y = pos[:, 0], pos[:, 1]
    if np.any(((y == 100.0) & (x <= 300.0)) | ((y == 200.0) & (x >= 100.0))):
        raise ValueError("position lies on a wall")
    theta = math.radians(params.alpha * ORACLE_MAX_ANGLE)
    if theta == 0.0:
        return pos
    top = y < 100.0
    bottom = y > 200.0
    pos[top, 0], pos[top, 1] = _rotate(x[top], y[top], _TOP_PIVOT, theta)
    pos[bottom, 0], pos[bottom, 1] = _rotate(x[bottom], y[bottom], _BOTTOM_PIVOT, theta)
    return pos


def oracle_embed(params: OracleParams, positions) -> np.ndarray:
    """Unfolded positions, scaled like network inputs (identity at alpha = 0)."""
    return normalize_positions(oracle_unfold(params, positions))


# ---------------------------------------------------------------- time proximity

@dataclass
class TimeProxConfig:
    K: int = 5
    gamma: float = 0.99
    negative_fraction: float | None = None
    classifier_sizes: tuple = (4, 30, 30, 5)
    steps: int = 40000
    batch: int = 32
    lr: float = 1e-3

    def __post_init__(self):
        if self.K < 2:
            raise ValueError("K must be >= 2")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.negative_fraction is None:
            self.negative_fraction = 1.0 / self.K
        if not 0.0 <= self.negative_fraction <= 1.0:
            raise ValueError("negative_fraction must lie in [0, 1]")
        sizes = tuple(self.classifier_sizes)
        if sizes[0] != 2 * EMBED_SIZES[-1] or sizes[-1] != self.K:
            sizes = (2 * EMBED_SIZES[-1],) + sizes[1:-1] + (self.K,)
        self.classifier_sizes = sizes

    def to_dict(self):
        d = asdict(self)
        d["classifier_sizes"] = list(self.classifier_sizes)
        return d


def timeprox_bins(config: TimeProxConfig) -> np.ndarray:
    """Upper bounds T_1..T_{K-1}: T_k = ln(1 - k/K) / ln(gamma)."""
    k = np.arange(1, config.K)
    return np.log(1.0 - k / config.K) / math.log(config.gamma)


def time_bin(dt, bounds) -> np.ndarray:
    """Bin label in 1..K: dt lands in bin k iff T_{k-1} < dt <= T_k."""
    return np.searchsorted(bounds, np.asarray(dt), side="left") + 1


class _PairSampler:
    def __init__(self, dataset: TrajectoryDataset, config: TimeProxConfig):
        self.config = config
        self.bounds = timeprox_bins(config)
        self.states = [e.states for e in dataset.episodes]
        self.lengths = np.array([len(s) for s in self.states])
        self.offsets = np.concatenate([[0], np.cumsum(self.lengths)[:-1]])
        self.flat = np.concatenate(self.states)
        # episodes by decreasing length: the eligible ones for a gap dt form a prefix
        self.order = np.argsort(-self.lengths, kind="stable")
        self.sorted_span = (self.lengths - 1)[self.order]
        if self.sorted_span[0] < 1:
            raise ValueError("every episode has a single state; no positive pairs possible")
        if config.negative_fraction > 0 and len(self.states) < 2:
            raise ValueError("cross-episode pairs need at least two episodes")

    def _gaps(self, rng, n):
        g = self.config.gamma
        dt = rng.geometric(1.0 - g, size=n)
        bad = dt > self.sorted_span[0]
        while bad.any():
            dt[bad] = rng.geometric(1.0 - g, size=int(bad.sum()))
            bad = dt > self.sorted_span[0]
        return dt

    def sample(self, rng, n):
        neg = rng.random(n) < self.config.negative_fraction
        n_pos = int((~neg).sum())
        n_neg = n - n_pos
        s1 = np.empty((n, 2))
        s2 = np.empty((n, 2))
        labels = np.empty(n, dtype=np.int64)
        if n_pos:
            dt = self._gaps(rng, n_pos)
            # number of episodes with at least dt + 1 states
            n_ok = np.searchsorted(-self.sorted_span, -dt, side="right")
            ep = self.order[(rng.random(n_pos) * n_ok).astype(np.int64)]
            t = (rng.random(n_pos) * (self.lengths[ep] - dt)).astype(np.int64)
            base = self.offsets[ep] + t
            s1[~neg] = self.flat[base]
            s2[~neg] = self.flat[base + dt]
            labels[~neg] = time_bin(dt, self.bounds)
        if n_neg:
            n_ep = len(self.states)
            e1 = rng.integers(0, n_ep, size=n_neg)
            e2 = (e1 + rng.integers(1, n_ep, size=n_neg)) % n_ep
            i1 = (rng.random(n_neg) * self.lengths[e1]).astype(np.int64)
            i2 = (rng.random(n_neg) * self.lengths[e2]).astype(np.int64)
            s1[neg] = self.flat[self.offsets[e1] + i1]
            s2[neg] = self.flat[self.offsets[e2] + i2]
            labels[neg] = self.config.K
        return s1, s2, labels


def sample_pairs(dataset: TrajectoryDataset, config: TimeProxConfig, seed: int, n: int):
    """``n`` labelled pairs (s1, s2, bin label in 1..K) in map coordinates.

    Same-episode pairs keep temporal order (earlier, later); their gap dt is
    geometric with P(dt = d) = (1 - gamma) * gamma**(d - 1).
    """
    return _PairSampler(dataset, config).sample(np.random.default_rng(seed), n)


def sample_pair(dataset: TrajectoryDataset, config: TimeProxConfig, seed: int):
    s1, s2, lab = sample_pairs(dataset, config, seed, 1)
    return s1[0], s2[0], int(lab[0])


class TimeProxModel:
    """Shared embedding f applied to both states, classifier g on [f(s1), f(s2)]."""

    def __init__(self, config: TimeProxConfig, seed: int = 0):
        self.config = config
        self.embed_spec = net.MlpSpec(EMBED_SIZES)
        self.cls_spec = net.MlpSpec(config.classifier_sizes)
        ne = self.embed_spec.n_params
        self.params = np.concatenate([net.init_params(self.embed_spec, seed),
                                      net.init_params(self.cls_spec, seed + 1)])
        self._ne = ne

    @property
    def embed_params(self):
        return self.params[:self._ne]

    @property
    def cls_params(self):
        return self.params[self._ne:]

    def logits(self, x1, x2):
        h1 = net.forward(self.embed_spec, self.embed_params, x1, check=False)[0]
        h2 = net.forward(self.embed_spec, self.embed_params, x2, check=False)[0]
        return net.forward(self.cls_spec, self.cls_params, np.concatenate([h1, h2], axis=1),
                           check=False)[0]

    def loss_and_grad(self, x1, x2, labels):
        """Mean softmax cross-entropy over the batch and its gradient."""
        h1, c1 = net.forward(self.embed_spec, self.embed_params, x1, check=False)
        h2, c2 = net.forward(self.embed_spec, self.embed_params, x2, check=False)
        logits, cc = net.forward(self.cls_spec, self.cls_params, np.concatenate([h1, h2], axis=1),
                                 check=False)
        z = logits - logits.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        n = len(labels)
        rows = np.arange(n)
        loss = -float(np.mean(logp[rows, labels - 1]))
        d = np.exp(logp)
        d[rows, labels - 1] -= 1.0
        d /= n
        g_cls, g_in = net.backward_with_input(self.cls_spec, self.cls_params, cc, d, check=False)
        g_e = (net.backward(self.embed_spec, self.embed_params, c1, g_in[:, :2], check=False)
               + net.backward(self.embed_spec, self.embed_params, c2, g_in[:, 2:], check=False))
        return loss, np.concatenate([g_e, g_cls])

    def accuracy(self, x1, x2, labels):
        return float(np.mean(np.argmax(self.logits(x1, x2), axis=1) + 1 == labels))


def train_timeprox_model(dataset: TrajectoryDataset, config: TimeProxConfig, seed: int):
    """Train the pair classifier; returns (model, loss curve)."""
    sampler = _PairSampler(dataset, config)
    rng = np.random.default_rng(seed)
    model = TimeProxModel(config, seed)
    opt = net.AdamState.zeros(model.params.size, config.lr)
    losses = np.empty(config.steps)
    for i in range(config.steps):
        s1, s2, lab = sampler.sample(rng, config.batch)
        loss, grad = model.loss_and_grad(normalize_positions(s1), normalize_positions(s2), lab)
        if not np.isfinite(loss):
            raise net.TrainingDiverged(f"non-finite loss at step {i}")
        losses[i] = loss
        net.adam_step(opt, model.params, grad)
    return model, losses


def train_timeprox(dataset: TrajectoryDataset, config: TimeProxConfig, seed: int) -> np.ndarray:
    """Embedding weights w_e of a trained time-proximity classifier."""
    model, _ = train_timeprox_model(dataset, config, seed)
    return model.embed_params.copy()


# ---------------------------------------------------------------- successor features

@dataclass
class SfConfig:
    gamma: float = 0.99
    steps: int = 40000
    batch: int = 32
    lr: float = 1e-3

    def to_dict(self):
        return asdict(self)


def sf_features(positions) -> np.ndarray:
    """phi(s) = position scaled to [0, 1]^2."""
    p = np.asarray(positions, dtype=np.float64)
    return np.stack([p[..., 0] / WIDTH, p[..., 1] / HEIGHT], axis=-1)


def sf_targets_episode(states, gamma) -> np.ndarray:
    """psi_t = (1 - gamma) phi(S_t) + gamma psi_{t+1} over the stored suffix."""
    phi = sf_features(states)
    psi = np.empty_like(phi)
    acc = np.zeros(2)
    for t in range(len(phi) - 1, -1, -1):
        acc = (1.0 - gamma) * phi[t] + gamma * acc
        psi[t] = acc
    return psi


def compute_sf_targets(dataset: TrajectoryDataset, gamma: float | None = None):
    """(positions, psi) for every stored state."""
    if not dataset.episodes:
        raise ValueError("empty dataset")
    gamma = dataset.gamma if gamma is None else gamma
    states = np.concatenate([e.states for e in dataset.episodes])
    psi = np.concatenate([sf_targets_episode(e.states, gamma) for e in dataset.episodes])
    return states, psi


def train_sf_model(dataset: TrajectoryDataset, config: SfConfig, seed: int):
    """Monte-Carlo regression of successor features; returns (Mlp, loss curve)."""
    states, psi = compute_sf_targets(dataset, config.gamma)
    model = net.Mlp(net.MlpSpec(EMBED_SIZES), seed=seed)
    losses = fit_regression(normalize_positions(states), psi, model, config.steps, seed,
                            config.batch, config.lr)
    return model, losses


def train_sf(dataset: TrajectoryDataset, config: SfConfig, seed: int) -> np.ndarray:
    return train_sf_model(dataset, config, seed)[0].params.copy()

