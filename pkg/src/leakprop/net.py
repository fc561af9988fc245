"""Small tanh MLPs on flat float64 parameter vectors, backprop and Adam.

Parameters of an MLP live in one flat array laid out layer by layer as
(W0, b0, W1, b1, ...), with W of shape (fan_in, fan_out). Training code
updates that array in place.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass

import numpy as np

ACTIVATIONS = ("tanh", "identity")


class TrainingDiverged(FloatingPointError):
    pass


class StaleCacheError(RuntimeError):
    pass


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple[int, ...]
    activation: str = "tanh"
    output_activation: str = "identity"

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if len(self.layer_sizes) < 2:
            raise ValueError("an MLP needs at least an input and an output layer")
        if min(self.layer_sizes) < 1:
            raise ValueError("layer sizes must be positive")
        for a in (self.activation, self.output_activation):
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def n_params(self) -> int:
        s = self.layer_sizes
        return sum(a * b + b for a, b in zip(s[:-1], s[1:]))

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    def activation_of(self, layer: int) -> str:
        return self.output_activation if layer == self.n_layers - 1 else self.activation

    def to_dict(self) -> dict:
        return {"layer_sizes": list(self.layer_sizes), "activation": self.activation,
                "output_activation": self.output_activation}

    @classmethod
    def from_dict(cls, d) -> "MlpSpec":
        return cls(tuple(d["layer_sizes"]), d.get("activation", "tanh"),
                   d.get("output_activation", "identity"))


def unpack(spec: MlpSpec, params: np.ndarray):
    """Per-layer (W, b) views into the flat parameter array."""
    if params.shape != (spec.n_params,):
        raise ValueError(f"expected {spec.n_params} parameters, got {params.shape}")
    out = []
    i = 0
    for a, b in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        W = params[i:i + a * b].reshape(a, b)
        i += a * b
        out.append((W, params[i:i + b]))
        i += b
    return out


def init_params(spec: MlpSpec, seed: int) -> np.ndarray:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    params = np.zeros(spec.n_params)
    for W, _ in unpack(spec, params):
        limit = np.sqrt(6.0 / (W.shape[0] + W.shape[1]))
        W[...] = rng.uniform(-limit, limit, size=W.shape)
    return params


def _stamp(params):
    return zlib.crc32(params.view(np.uint8))


@dataclass
class ForwardCache:
    layers: list          # input of each layer, then the final output
    params_stamp: int
    squeeze: bool


def _act(name, z):
    return np.tanh(z) if name == "tanh" else z


def forward(spec: MlpSpec, params: np.ndarray, x, check: bool = True):
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.shape[-1] != spec.n_in:
        raise ValueError(f"input dimension {x.shape[-1]} does not match spec input {spec.n_in}")
    h = x
    layers = [h]
    for k, (W, b) in enumerate(unpack(spec, params)):
        h = _act(spec.activation_of(k), h @ W + b)
        layers.append(h)
    cache = ForwardCache(layers, _stamp(params) if check else 0, squeeze)
    return (h[0] if squeeze else h), cache


def _backward(spec, params, cache, output_grad):
    g = np.asarray(output_grad, dtype=np.float64)
    if cache.squeeze and g.ndim == 1:
        g = g[None, :]
    grad = np.empty(spec.n_params)
    gviews = unpack(spec, grad)
    wviews = unpack(spec, params)
    for k in range(spec.n_layers - 1, -1, -1):
        if spec.activation_of(k) == "tanh":
            out = cache.layers[k + 1]
            g = g * (1.0 - out * out)
        gW, gb = gviews[k]
        np.matmul(cache.layers[k].T, g, out=gW)
        gb[...] = g.sum(axis=0)
        g = g @ wviews[k][0].T
    return grad, (g[0] if cache.squeeze else g)


def backward(spec: MlpSpec, params: np.ndarray, cache: ForwardCache, output_grad,
             check: bool = True) -> np.ndarray:
    """Gradient of sum(output * output_grad) with respect to every parameter."""
    if check and cache.params_stamp != _stamp(params):
        raise StaleCacheError("cache was produced with different parameters")
    return _backward(spec, params, cache, output_grad)[0]


def backward_with_input(spec, params, cache, output_grad, check: bool = True):
    """Like ``backward`` but also returns the gradient with respect to the input."""
    if check and cache.params_stamp != _stamp(params):
        raise StaleCacheError("cache was produced with different parameters")
    return _backward(spec, params, cache, output_grad)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, lr, beta1, beta2, eps)


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray):
    """Bias-corrected Adam update, in place. Returns (params, state)."""
    if grad.shape != params.shape or state.m.shape != params.shape:
        raise ValueError("shape mismatch between params, grad and optimizer state")
    if not np.all(np.isfinite(grad)):
        raise TrainingDiverged(f"non-finite gradient at Adam step {state.step + 1}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1.0 - b1) * grad
    state.v *= b2
    state.v += (1.0 - b2) * grad * grad
    m_hat = state.m / (1.0 - b1**state.step)
    v_hat = state.v / (1.0 - b2**state.step)
    params -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


def sgd_step(lr: float, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(grad)):
        raise TrainingDiverged("non-finite gradient")
    params -= lr * grad
    return params


class Mlp:
    """A single MLP bound to its flat parameters."""

    def __init__(self, spec: MlpSpec, params: np.ndarray | None = None, seed: int = 0):
        self.spec = spec
        self.params = init_params(spec, seed) if params is None else np.asarray(params, dtype=np.float64)
        if self.params.shape != (spec.n_params,):
            raise ValueError("parameter vector does not match spec")

    @property
    def n_in(self):
        return self.spec.n_in

    def forward(self, x):
        return forward(self.spec, self.params, x, check=False)

    def backward(self, cache, output_grad):
        return _backward(self.spec, self.params, cache, output_grad)[0]

    def predict(self, x):
        return forward(self.spec, self.params, x, check=False)[0]

    def trainable_mask(self):
        return np.ones(self.spec.n_params, dtype=bool)

    def to_dict(self) -> dict:
        return {"kind": "mlp", **self.spec.to_dict(), "params": self.params.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Mlp":
        return cls(MlpSpec.from_dict(d), np.array(d["params"], dtype=np.float64))


@dataclass
class _TwoStageCache:
    embed: ForwardCache
    value: ForwardCache


class TwoStage:
    """value(link(embedding(x))) with an optionally frozen embedding.

    ``params`` is the concatenation (w_e, w_v); ``embed_params`` and
    ``value_params`` are views into it.
    """

    def __init__(self, embed_spec: MlpSpec, value_spec: MlpSpec, embed_params=None,
                 value_params=None, frozen: bool = True, link: str = "identity", seed: int = 0):
        if embed_spec.n_out != value_spec.n_in:
            raise ValueError(f"embedding output {embed_spec.n_out} does not match value input {value_spec.n_in}")
        if link not in ACTIVATIONS:
            raise ValueError(f"unknown link activation {link!r}")
        self.embed_spec = embed_spec
        self.value_spec = value_spec
        self.frozen = frozen
        self.link = link
        ne = embed_spec.n_params
        self.params = np.empty(ne + value_spec.n_params)
        self.params[:ne] = init_params(embed_spec, seed) if embed_params is None else embed_params
        self.params[ne:] = init_params(value_spec, seed + 1) if value_params is None else value_params

    @property
    def n_in(self):
        return self.embed_spec.n_in

    @property
    def embed_params(self):
        return self.params[:self.embed_spec.n_params]

    @property
    def value_params(self):
        return self.params[self.embed_spec.n_params:]

    def embed(self, x):
        return forward(self.embed_spec, self.embed_params, x, check=False)[0]

    def forward(self, x):
        h, ce = forward(self.embed_spec, self.embed_params, x, check=False)
        out, cv = forward(self.value_spec, self.value_params, _act(self.link, h), check=False)
        return out, _TwoStageCache(ce, cv)

    def predict(self, x):
        return self.forward(x)[0]

    def backward(self, cache, output_grad):
        grad = np.zeros_like(self.params)
        ne = self.embed_spec.n_params
        gv, gz = _backward(self.value_spec, self.value_params, cache.value, output_grad)
        grad[ne:] = gv
        if not self.frozen:
            if self.link == "tanh":
                z = cache.value.layers[0]
                gz = gz * (1.0 - z * z)
            grad[:ne] = _backward(self.embed_spec, self.embed_params, cache.embed, gz)[0]
        return grad

    def trainable_mask(self):
        mask = np.ones(self.params.shape, dtype=bool)
        if self.frozen:
            mask[:self.embed_spec.n_params] = False
        return mask

    def as_single_mlp(self) -> Mlp:
        """Equivalent single MLP; only defined for a tanh link and tanh hidden layers."""
        if self.link != "tanh" or self.embed_spec.activation != "tanh" or self.value_spec.activation != "tanh":
            raise ValueError("only a tanh-linked composition flattens to one MLP")
        sizes = self.embed_spec.layer_sizes + self.value_spec.layer_sizes[1:]
        spec = MlpSpec(sizes, "tanh", self.value_spec.output_activation)
        return Mlp(spec, self.params.copy())

    def to_dict(self) -> dict:
        return {"kind": "two_stage", "frozen": self.frozen, "link": self.link,
                "embedding": {**self.embed_spec.to_dict(), "params": self.embed_params.tolist()},
                "value": {**self.value_spec.to_dict(), "params": self.value_params.tolist()}}

    @classmethod
    def from_dict(cls, d) -> "TwoStage":
        e, v = d["embedding"], d["value"]
        return cls(MlpSpec.from_dict(e), MlpSpec.from_dict(v),
                   np.array(e["params"], dtype=np.float64), np.array(v["params"], dtype=np.float64),
                   frozen=bool(d["frozen"]), link=d["link"])


def compose(embedding, value, link: str = "identity") -> TwoStage:
    """Build a two-stage model from ``(spec, params, frozen)`` and ``(spec, params)``."""
    e_spec, e_params, frozen = embedding
    v_spec, v_params = value
    return TwoStage(e_spec, v_spec, e_params, v_params, frozen=frozen, link=link)


def model_from_dict(d):
    kind = d.get("kind")
    if kind == "mlp":
        return Mlp.from_dict(d)
    if kind == "two_stage":
        return TwoStage.from_dict(d)
    raise ValueError(f"unknown model kind {kind!r}")


def save_params_text(path, spec: MlpSpec, params: np.ndarray, extra: dict | None = None) -> None:
    """Plain-text parameter file: JSON header line, then one repr() float per line."""
    header = {**spec.to_dict(), "n_params": spec.n_params, **(extra or {})}
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        fh.writelines(f"{v!r}\n" for v in params.tolist())


def load_params_text(path):
    with open(path) as fh:
        header = json.loads(fh.readline())
        params = np.array([float(line) for line in fh if line.strip()], dtype=np.float64)
    spec = MlpSpec.from_dict(header)
    if params.shape != (spec.n_params,):
        raise ValueError("parameter count does not match header")
    return spec, params, header
