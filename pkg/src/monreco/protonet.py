"""Prototype network: autoencoder plus a distance-to-prototype classifier.

The encoder maps an input ``x`` to a latent code ``z``; the prototype layer
emits squared distances from ``z`` to each learned prototype; a linear
layer turns those distances into class logits, followed by a softmax. The
decoder reconstructs ``x`` from ``z`` and also renders prototypes back in
input space for explanations.

Training minimizes

    CE + l_recon * mean_i |x_i - g(f(x_i))|^2
       + l_r1 * mean_j min_i |p_j - f(x_i)|^2
       + l_r2 * mean_i min_j |f(x_i) - p_j|^2

by full-batch gradient descent with hand-written backpropagation.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DivergenceError
from .model import ResourceClass

CHECKPOINT_FORMAT = "monreco.protonet"
CHECKPOINT_VERSION = 1
POSITIVE = 1

R = ResourceClass
# operating thresholds on the positive-class probability, per resource class
DEFAULT_THRESHOLDS: dict[ResourceClass, float] = {
    R.SERVICE_LEVEL: 0.45,
    R.API: 0.30,
    R.CPU: 0.20,
    R.CONTAINER: 0.40,
    R.DEPENDENCY: 0.20,
    R.COMPUTE_CLUSTER: 0.05,
    R.STORAGE: 0.35,
    R.RAM_MEMORY: 0.30,
    R.CERTIFICATE: 0.50,
    R.CACHE_MEMORY: 0.41,
    R.NONE_OF_THE_ABOVE: 0.40,
}
FALLBACK_THRESHOLD = 0.5


def default_threshold(cls: ResourceClass) -> float:
    return DEFAULT_THRESHOLDS.get(cls, FALLBACK_THRESHOLD)


@dataclass(frozen=True)
class NetworkConfig:
    input_dim: int = 5
    latent_dim: int = 3
    prototype_count: int = 4
    class_count: int = 2
    encoder_hidden: tuple[int, ...] = (8,)
    activation: str = "sigmoid"
    lambdas: tuple[float, float, float] = (0.05, 0.05, 0.05)
    learning_rate: float = 0.05
    epochs: int = 1500
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "encoder_hidden", tuple(int(h) for h in self.encoder_hidden))
        object.__setattr__(self, "lambdas", tuple(float(v) for v in self.lambdas))
        dims = (self.input_dim, self.latent_dim, self.prototype_count, self.class_count, *self.encoder_hidden)
        if any(d < 1 for d in dims):
            raise ValueError("all dimensions must be positive")
        if self.class_count != 2:
            raise ValueError("per-class networks are binary: class_count must be 2")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"activation must be one of {sorted(_ACTIVATIONS)}")
        if len(self.lambdas) != 3 or any(v < 0 for v in self.lambdas):
            raise ValueError("lambdas must be three non-negative reals")
        if self.learning_rate <= 0 or self.epochs < 1:
            raise ValueError("learning_rate must be positive and epochs >= 1")

    @classmethod
    def from_mapping(cls, data: dict) -> "NetworkConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown NetworkConfig keys: {sorted(unknown)}")
        return cls(**data)

    def to_json(self) -> dict:
        d = asdict(self)
        d["encoder_hidden"] = list(self.encoder_hidden)
        d["lambdas"] = list(self.lambdas)
        return d


def _sigmoid(a):
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


# (function, derivative expressed through the activation's output)
_ACTIVATIONS = {
    "sigmoid": (_sigmoid, lambda y: y * (1.0 - y)),
    "tanh": (np.tanh, lambda y: 1.0 - y * y),
}


def softmax(logits: np.ndarray) -> np.ndarray:
    # a gap beyond the float range saturates to -inf, whose exp is exactly 0
    with np.errstate(over="ignore"):
        shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class PrototypeNetwork:
    """Parameter container. Weight matrices are stored ``(fan_in, fan_out)``."""

    config: NetworkConfig
    encoder_weights: list[np.ndarray]
    encoder_biases: list[np.ndarray]
    decoder_weights: list[np.ndarray]
    decoder_biases: list[np.ndarray]
    prototypes: np.ndarray  # (prototype_count, latent_dim)
    class_weights: np.ndarray  # (class_count, prototype_count)
    meta: dict = field(default_factory=dict)

    # flat, ordered view used by the optimizer and gradient checks
    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.encoder_weights, self.encoder_biases)):
            out[f"enc_W{i}"] = w
            out[f"enc_b{i}"] = b
        for i, (w, b) in enumerate(zip(self.decoder_weights, self.decoder_biases)):
            out[f"dec_W{i}"] = w
            out[f"dec_b{i}"] = b
        out["prototypes"] = self.prototypes
        out["class_weights"] = self.class_weights
        return out

    def copy(self) -> "PrototypeNetwork":
        return PrototypeNetwork(
            self.config,
            [w.copy() for w in self.encoder_weights],
            [b.copy() for b in self.encoder_biases],
            [w.copy() for w in self.decoder_weights],
            [b.copy() for b in self.decoder_biases],
            self.prototypes.copy(),
            self.class_weights.copy(),
            dict(self.meta),
        )

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.parameters().values())

    # -- layers --------------------------------------------------------------

    def _run(self, x, weights, biases):
        act = _ACTIVATIONS[self.config.activation][0]
        outs = [x]
        for w, b in zip(weights, biases):
            outs.append(act(outs[-1] @ w + b))
        return outs

    def encode(self, x: np.ndarray) -> np.ndarray:
        return self._run(np.atleast_2d(x), self.encoder_weights, self.encoder_biases)[-1]

    def decode(self, z: np.ndarray) -> np.ndarray:
        return self._run(np.atleast_2d(z), self.decoder_weights, self.decoder_biases)[-1]


def init_network(config: NetworkConfig, x_train: np.ndarray | None = None) -> PrototypeNetwork:
    """Seeded uniform(-0.5, 0.5) weights, zero biases.

    With ``x_train`` the prototypes start at encodings of randomly chosen
    training rows; otherwise they are uniform in the latent box.
    """
    rng = np.random.default_rng(config.seed)
    enc_dims = [config.input_dim, *config.encoder_hidden, config.latent_dim]
    dec_dims = enc_dims[::-1]

    def layers(dims):
        ws = [rng.uniform(-0.5, 0.5, size=(a, b)) for a, b in zip(dims[:-1], dims[1:])]
        bs = [np.zeros(b) for b in dims[1:]]
        return ws, bs

    enc_w, enc_b = layers(enc_dims)
    dec_w, dec_b = layers(dec_dims)
    class_weights = rng.uniform(-0.5, 0.5, size=(config.class_count, config.prototype_count))
    net = PrototypeNetwork(config, enc_w, enc_b, dec_w, dec_b, np.zeros((config.prototype_count, config.latent_dim)), class_weights)
    if x_train is not None and len(x_train):
        x_train = np.asarray(x_train, dtype=float)
        replace = len(x_train) < config.prototype_count
        idx = rng.choice(len(x_train), size=config.prototype_count, replace=replace)
        net.prototypes = net.encode(x_train[idx]).copy()
    else:
        net.prototypes = rng.uniform(-0.5, 0.5, size=(config.prototype_count, config.latent_dim))
    return net


@dataclass(frozen=True)
class ForwardResult:
    z: np.ndarray
    x_hat: np.ndarray
    distances: np.ndarray
    probabilities: np.ndarray


def _sq_distances(z: np.ndarray, prototypes: np.ndarray) -> np.ndarray:
    diff = z[:, None, :] - prototypes[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def forward(net: PrototypeNetwork, x: np.ndarray) -> ForwardResult:
    """Forward pass for one input vector or a batch of rows."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    z = net.encode(xb)
    x_hat = net.decode(z)
    d = _sq_distances(z, net.prototypes)
    probs = softmax(d @ net.class_weights.T)
    if single:
        return ForwardResult(z[0], x_hat[0], d[0], probs[0])
    return ForwardResult(z, x_hat, d, probs)


def predict_proba(net: PrototypeNetwork, x: np.ndarray) -> np.ndarray | float:
    """Probability of the positive class (index 1)."""
    probs = forward(net, x).probabilities
    return float(probs[POSITIVE]) if probs.ndim == 1 else probs[:, POSITIVE]


def predict_class(net: PrototypeNetwork, x: np.ndarray):
    probs = forward(net, x).probabilities
    return int(np.argmax(probs)) if probs.ndim == 1 else np.argmax(probs, axis=1)


def decode_prototypes(net: PrototypeNetwork) -> list[np.ndarray]:
    """Prototypes rendered in input space by the decoder."""
    return list(net.decode(net.prototypes))


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    cross_entropy: float
    recon: float
    r1: float
    r2: float


def _loss_and_cache(net: PrototypeNetwork, x: np.ndarray, y: np.ndarray):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y).astype(np.int64).ravel()
    if x.shape[0] == 0:
        raise ValueError("batch must be non-empty")
    lam_recon, lam_r1, lam_r2 = net.config.lambdas
    enc = net._run(x, net.encoder_weights, net.encoder_biases)
    z = enc[-1]
    dec = net._run(z, net.decoder_weights, net.decoder_biases)
    x_hat = dec[-1]
    d = _sq_distances(z, net.prototypes)
    logits = d @ net.class_weights.T
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    n = x.shape[0]
    ce = float(-log_probs[np.arange(n), y].mean())
    recon = float(np.sum((x - x_hat) ** 2) / n)
    nearest_input = d.argmin(axis=0)  # per prototype
    nearest_proto = d.argmin(axis=1)  # per input
    r1 = float(d[nearest_input, np.arange(d.shape[1])].mean())
    r2 = float(d[np.arange(n), nearest_proto].mean())
    total = ce + lam_recon * recon + lam_r1 * r1 + lam_r2 * r2
    cache = dict(x=x, y=y, enc=enc, dec=dec, z=z, x_hat=x_hat, d=d, log_probs=log_probs,
                 nearest_input=nearest_input, nearest_proto=nearest_proto)
    return LossBreakdown(total, ce, recon, r1, r2), cache


def loss(net: PrototypeNetwork, x: np.ndarray, y: Sequence[int]) -> LossBreakdown:
    return _loss_and_cache(net, x, y)[0]


def _backprop_layers(grad_out, outs, weights, act_deriv, prefix, grads):
    """Push ``grad_out`` (w.r.t. the last activation) back through dense layers."""
    g = grad_out
    for i in range(len(weights) - 1, -1, -1):
        g = g * act_deriv(outs[i + 1])
        grads[f"{prefix}_W{i}"] = outs[i].T @ g
        grads[f"{prefix}_b{i}"] = g.sum(axis=0)
        g = g @ weights[i].T
    return g


def loss_and_gradients(net: PrototypeNetwork, x: np.ndarray, y: Sequence[int]) -> tuple[LossBreakdown, dict[str, np.ndarray]]:
    """Loss components and exact gradients w.r.t. every parameter."""
    breakdown, c = _loss_and_cache(net, x, y)
    lam_recon, lam_r1, lam_r2 = net.config.lambdas
    act_deriv = _ACTIVATIONS[net.config.activation][1]
    x, y, z, d = c["x"], c["y"], c["z"], c["d"]
    n, m = d.shape
    grads: dict[str, np.ndarray] = {}

    # cross-entropy through softmax and the class-weight layer
    dlogits = np.exp(c["log_probs"])
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    grads["class_weights"] = dlogits.T @ d
    dd = dlogits @ net.class_weights

    # interpretability terms route through the selected distance entries
    dd[c["nearest_input"], np.arange(m)] += lam_r1 / m
    dd[np.arange(n), c["nearest_proto"]] += lam_r2 / n

    # d_ij = |z_i - p_j|^2
    row = dd.sum(axis=1)[:, None]
    col = dd.sum(axis=0)[:, None]
    dz = 2.0 * (row * z - dd @ net.prototypes)
    grads["prototypes"] = 2.0 * (col * net.prototypes - dd.T @ z)

    # reconstruction through the decoder
    dx_hat = lam_recon * 2.0 * (c["x_hat"] - x) / n
    dz = dz + _backprop_layers(dx_hat, c["dec"], net.decoder_weights, act_deriv, "dec", grads)
    _backprop_layers(dz, c["enc"], net.encoder_weights, act_deriv, "enc", grads)

    ordered = {name: grads[name] for name in net.parameters()}
    return breakdown, ordered


def gradients(net: PrototypeNetwork, x: np.ndarray, y: Sequence[int]) -> dict[str, np.ndarray]:
    return loss_and_gradients(net, x, y)[1]


@dataclass(frozen=True)
class TrainResult:
    network: PrototypeNetwork
    history: tuple[LossBreakdown, ...]


def train(config: NetworkConfig, x: np.ndarray, y: Sequence[int], *, init: PrototypeNetwork | None = None) -> TrainResult:
    """Full-batch gradient descent for ``config.epochs`` epochs.

    ``history[e]`` is the loss before the update of epoch ``e``.

    Raises:
        DivergenceError: the loss or a parameter became non-finite.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y).astype(np.int64)
    if x.shape[1] != config.input_dim:
        raise ValueError(f"inputs have {x.shape[1]} features, config expects {config.input_dim}")
    net = init.copy() if init is not None else init_network(config, x)
    params = net.parameters()
    history = []
    lr = config.learning_rate
    for epoch in range(config.epochs):
        breakdown, grads = loss_and_gradients(net, x, y)
        if not math.isfinite(breakdown.total):
            raise DivergenceError(epoch)
        history.append(breakdown)
        for name, g in grads.items():
            params[name] -= lr * g
        if not net.is_finite():
            raise DivergenceError(epoch, "parameters became non-finite")
    return TrainResult(net, tuple(history))


# -- checkpoints -----------------------------------------------------------------


def network_to_json(net: PrototypeNetwork) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": net.config.to_json(),
        "params": {name: p.tolist() for name, p in net.parameters().items()},
        "meta": net.meta,
    }


def network_from_json(data: dict) -> PrototypeNetwork:
    if data.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not a prototype-network checkpoint")
    if data.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {data.get('version')!r}")
    config = NetworkConfig.from_mapping(data["config"])
    params = {k: np.asarray(v, dtype=float) for k, v in data["params"].items()}
    n_layers = len(config.encoder_hidden) + 1
    net = PrototypeNetwork(
        config,
        [params[f"enc_W{i}"] for i in range(n_layers)],
        [params[f"enc_b{i}"] for i in range(n_layers)],
        [params[f"dec_W{i}"] for i in range(n_layers)],
        [params[f"dec_b{i}"] for i in range(n_layers)],
        params["prototypes"],
        params["class_weights"],
        dict(data.get("meta", {})),
    )
    reference = init_network(config)
    for name, p in reference.parameters().items():
        if net.parameters()[name].shape != p.shape:
            raise ValueError(f"checkpoint parameter {name} has shape {net.parameters()[name].shape}, expected {p.shape}")
    return net


def save_network(net: PrototypeNetwork, path: str | os.PathLike) -> None:
    Path(path).write_text(json.dumps(network_to_json(net), sort_keys=True) + "\n", encoding="utf-8")


def load_network(path: str | os.PathLike) -> PrototypeNetwork:
    return network_from_json(json.loads(Path(path).read_text(encoding="utf-8")))
