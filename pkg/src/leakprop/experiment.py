"""End-to-end runs: dataset, optional embedding stage, value stage, evaluation."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from leakprop import embeddings as emb
from leakprop import envsim, evaluation, net
from leakprop.learners import EMBEDDINGS, TrainConfig, train

VALUE_SIZES = (2, 30, 30, 1)


@dataclass
class ExperimentConfig:
    map_id: str = "map1"
    method: str = "TD"
    embedding: str = "none"
    seed: int = 0
    n_episodes: int = envsim.N_EPISODES
    max_len: int = envsim.MAX_LEN
    gamma: float = envsim.GAMMA
    value_steps: int = 40000
    embed_steps: int = 40000
    minibatch_size: int = 32
    lr: float = 1e-3
    alpha: float = 1.0
    timeprox_bins: int = 5
    truth_rollouts: int = 1000
    truth_seed: int = 12345
    cell_size: float = evaluation.CELL_SIZE

    def __post_init__(self):
        self.method = self.method.upper()
        if self.embedding not in EMBEDDINGS:
            raise ValueError(f"embedding must be one of {EMBEDDINGS}")
        if self.embedding == "oracle" and self.map_id != "map1":
            raise ValueError(f"the oracle embedding requires map1, got {self.map_id}")

    def train_config(self) -> TrainConfig:
        return TrainConfig(method=self.method, minibatch_size=self.minibatch_size,
                           steps=self.value_steps, lr=self.lr, gamma=self.gamma,
                           seed=self.seed, embedding=self.embedding)


class ValueFunction:
    """Maps map positions to value estimates through a fixed featurizer and a network."""

    def __init__(self, mode: str, model, alpha: float | None = None, map_id: str = "",
                 meta: dict | None = None):
        self.mode = mode
        self.model = model
        self.alpha = alpha
        self.map_id = map_id
        self.meta = dict(meta or {})

    def featurize(self, positions):
        if self.mode == "oracle":
            return emb.oracle_embed(emb.OracleParams(self.alpha, self.map_id), positions)
        return envsim.normalize_positions(positions)

    def __call__(self, positions):
        return self.model.predict(self.featurize(positions))[:, 0]

    def to_dict(self) -> dict:
        return {"format": "leakprop-value-model", "mode": self.mode, "alpha": self.alpha,
                "map_id": self.map_id, "meta": self.meta, "model": self.model.to_dict()}

    @classmethod
    def from_dict(cls, d) -> "ValueFunction":
        if d.get("format") != "leakprop-value-model":
            raise ValueError("not a value model file")
        return cls(d["mode"], net.model_from_dict(d["model"]), d.get("alpha"), d["map_id"], d.get("meta"))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "ValueFunction":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def dataset_hash(dataset: envsim.TrajectoryDataset) -> str:
    return hashlib.sha256(dataset.to_json().encode()).hexdigest()[:16]


def embedding_stage(cfg: ExperimentConfig, dataset: envsim.TrajectoryDataset):
    """Trained embedding weights and the loss curve (None for none/oracle)."""
    if cfg.embedding == "timeprox":
        tcfg = emb.TimeProxConfig(K=cfg.timeprox_bins, gamma=cfg.gamma, steps=cfg.embed_steps,
                                  batch=cfg.minibatch_size, lr=cfg.lr)
        model, losses = emb.train_timeprox_model(dataset, tcfg, cfg.seed)
        return model.embed_params.copy(), losses
    elif cfg.embedding == "sf":
        scfg = emb.SfConfig(gamma=cfg.gamma, steps=cfg.embed_steps, batch=cfg.minibatch_size, lr=cfg.lr)
        model, losses = emb.train_sf_model(dataset, scfg, cfg.seed)
        return model.params.copy(), losses
    return None, None


def build_value_function(cfg: ExperimentConfig, embed_params=None) -> ValueFunction:
    vspec = net.MlpSpec(VALUE_SIZES)
    espec = net.MlpSpec(emb.EMBED_SIZES)
    if cfg.embedding == "none":
        model = net.TwoStage(espec, vspec, frozen=False, link="tanh", seed=cfg.seed)
    elif cfg.embedding == "oracle":
        model = net.Mlp(vspec, seed=cfg.seed + 1)
    else:
        model = net.TwoStage(espec, vspec, embed_params=embed_params, frozen=True,
                             link="identity", seed=cfg.seed)
    return ValueFunction(cfg.embedding, model, cfg.alpha if cfg.embedding == "oracle" else None,
                         cfg.map_id, {"method": cfg.method, "seed": cfg.seed})


@dataclass
class RunResult:
    value_fn: ValueFunction
    prediction: evaluation.ValueGrid
    report: evaluation.EvalReport
    value_losses: np.ndarray
    embed_losses: np.ndarray | None
    dataset: envsim.TrajectoryDataset


def train_value_function(cfg: ExperimentConfig, dataset: envsim.TrajectoryDataset):
    embed_params, embed_losses = embedding_stage(cfg, dataset)
    vf = build_value_function(cfg, embed_params)
    result = train(dataset, vf.model, cfg.train_config(), featurize=vf.featurize)
    return vf, result.losses, embed_losses


def run_experiment(cfg: ExperimentConfig, dataset=None, truth=None) -> RunResult:
    layout = envsim.builtin_map(cfg.map_id)
    if dataset is None:
        dataset = envsim.generate_dataset(layout, cfg.n_episodes, cfg.max_len, cfg.seed, cfg.gamma)
    if truth is None:
        truth = evaluation.ground_truth(layout, cfg.gamma, cfg.cell_size, cfg.truth_rollouts,
                                        cfg.truth_seed, cfg.max_len)
    vf, v_losses, e_losses = train_value_function(cfg, dataset)
    pred = evaluation.predict_grid(vf, layout, cfg.cell_size)
    meta = {**asdict(cfg), "dataset_hash": dataset_hash(dataset)}
    report = evaluation.evaluate(pred, truth, layout, dataset, metadata=meta)
    return RunResult(vf, pred, report, v_losses, e_losses, dataset)
