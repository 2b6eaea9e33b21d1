"""The original classifier: encoder e(x), linear head, baselines and inference."""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .numerics import AdamState, adam_step, as_dims, he_uniform_init, mlp_forward, \
    xent_loss_grad

log = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1
TOY_DIMS = (10, 32, 2, 6)


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    lr: float = 1e-3
    weight_decay: float = 5e-4
    optimizer: str = "adam"
    seed: int = 0

    def validate(self):
        if self.epochs < 0 or self.batch_size < 1 or not self.lr > 0:
            raise ValueError(f"invalid training config {self}")
        if self.optimizer not in ("adam", "adamw", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class FeedForwardNet:
    """Dense ReLU network ``dims[0] -> ... -> dims[-2] -> dims[-1]``.

    ``dims[-2]`` is the representation width: the layer producing it is left
    linear, and the last layer is the classifier head whose weight rows are
    the class prototypes.
    """

    dims: tuple
    params: np.ndarray
    activation: str = "relu"
    training_config: dict = field(default_factory=dict)
    seed: int = 0
    history: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if len(self.dims) < 3:
            raise ValueError("need at least input, representation and class dims")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        self.params = np.ascontiguousarray(self.params, dtype=np.float64)
        if self.params.shape != (kernels.n_params(self.dims),):
            raise ValueError(f"expected {kernels.n_params(self.dims)} params, "
                             f"got {self.params.shape}")

    @property
    def n_act(self):
        return len(self.dims) - 3

    @property
    def rep_dim(self):
        return self.dims[-2]

    @property
    def n_classes(self):
        return self.dims[-1]

    @property
    def _head_offset(self):
        return int(kernels.layer_offsets(self.dims)[-2])

    @property
    def encoder_params(self):
        return self.params[:self._head_offset]

    @property
    def head(self):
        """``(W, b)`` of the classifier head, as read-only copies."""
        off = self._head_offset
        C, dz = self.dims[-1], self.dims[-2]
        W = self.params[off:off + C * dz].reshape(C, dz).copy()
        b = self.params[off + C * dz:].copy()
        return W, b

    def copy(self):
        return FeedForwardNet(self.dims, self.params.copy(), self.activation,
                              dict(self.training_config), self.seed, list(self.history))

    def encode(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.dims[0]:
            raise ValueError(f"expected inputs with {self.dims[0]} columns, got {x.shape}")
        return mlp_forward(x, self.encoder_params, self.dims[:-1], self.n_act)

    def head_logits(self, z):
        z = np.asarray(z, dtype=np.float64)
        if z.ndim != 2 or z.shape[1] != self.rep_dim:
            raise ValueError(f"expected representations with {self.rep_dim} columns, "
                             f"got {z.shape}")
        W, b = self.head
        return z @ W.T + b


def forward(net, x):
    """Return ``(z, logits)``: penultimate representation and head output."""
    z = net.encode(x)
    return z, net.head_logits(z)


def classifier_prototypes(net):
    """Head weight rows ``w_c`` (C x d_z), the class prototypes."""
    return net.head[0]


def _fit(net, data, cfg, rng):
    dims = as_dims(net.dims)
    n = len(data)
    x, y = data.features, data.labels
    params = net.params.copy()
    if cfg.optimizer == "sgd":
        state = None
    else:
        state = AdamState.zeros(len(params), lr=cfg.lr, weight_decay=cfg.weight_decay,
                                decoupled=cfg.optimizer == "adamw")
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grad = xent_loss_grad(x[idx], y[idx], params, dims, net.n_act)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            if state is None:
                params -= cfg.lr * (grad + cfg.weight_decay * params)
            else:
                adam_step(params, grad, state, inplace=True)
            total += loss * len(idx)
        history.append(total / n)
    out = net.copy()
    out.params = params
    out.history = net.history + history
    return out


def init_network(dims, rng):
    dims = tuple(int(d) for d in dims)
    return FeedForwardNet(dims, he_uniform_init(dims, rng, n_act=len(dims) - 3))


def train_classifier(config, data, dims=TOY_DIMS, rng=None):
    """Train a fresh network on ``data`` with mini-batch softmax cross-entropy.

    ``rng`` drives both initialisation and per-epoch shuffling; it defaults to
    a generator seeded with ``config.seed``.
    """
    config.validate()
    if rng is None:
        rng = np.random.default_rng(config.seed)
    if data.dim != dims[0] or data.n_classes != dims[-1]:
        raise ValueError(f"dims {dims} do not match data (d={data.dim}, C={data.n_classes})")
    net = init_network(dims, rng)
    net.training_config = config.to_dict()
    net.seed = config.seed
    trained = _fit(net, data, config, rng)
    h = trained.history
    if len(h) > 1:
        ups = sum(b > a for a, b in zip(h, h[1:]))
        if ups:
            log.debug("training loss rose in %d of %d epochs", ups, len(h) - 1)
    return trained


def retrain_baseline(config, retain_data, dims=TOY_DIMS, rng=None):
    """Exact-unlearning reference: fresh training on the retain set only."""
    return train_classifier(config, retain_data, dims, rng)


def fine_tune_baseline(net, retain_data, epochs=10, lr=1e-3, rng=None, batch_size=64,
                       weight_decay=5e-4):
    """Continue training ``net`` on the retain set with a fresh Adam state."""
    cfg = TrainConfig(epochs=epochs, batch_size=batch_size, lr=lr, weight_decay=weight_decay,
                      optimizer="adam").validate()
    if rng is None:
        rng = np.random.default_rng(0)
    return _fit(net, retain_data, cfg, rng)


@dataclass
class Pipeline:
    net: FeedForwardNet
    transformation: object = None

    def __post_init__(self):
        t = self.transformation
        if t is not None and t.dim != self.net.rep_dim:
            raise ValueError(f"transformation acts on {t.dim}-d inputs, "
                             f"representation is {self.net.rep_dim}-d")

    def represent(self, x):
        z = self.net.encode(x)
        return z if self.transformation is None else self.transformation.apply(z)


def predict_pipeline(p, x):
    """Logits ``head(f(e(x)))``, or ``head(e(x))`` without a transformation."""
    return p.net.head_logits(p.represent(x))


# -------------------------------------------------------------- persistence

def net_to_dict(net):
    layers = kernels._np_layers(net.params, net.dims)
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "kind": "feedforward",
        "layer_dims": list(net.dims),
        "activation": net.activation,
        "weights": [W.ravel().tolist() for W, _ in layers],
        "biases": [b.tolist() for _, b in layers],
        "training_config": net.training_config,
        "seed": net.seed,
    }


def net_from_dict(d):
    if d.get("format_version") != MODEL_FORMAT_VERSION or d.get("kind") != "feedforward":
        raise ValueError("not a feedforward model document of a supported version")
    parts = []
    for W, b in zip(d["weights"], d["biases"]):
        parts.append(np.asarray(W, dtype=np.float64))
        parts.append(np.asarray(b, dtype=np.float64))
    return FeedForwardNet(tuple(d["layer_dims"]), np.concatenate(parts), d["activation"],
                          dict(d.get("training_config", {})), int(d.get("seed", 0)))


def save_net(net, path):
    Path(path).write_text(json.dumps(net_to_dict(net), indent=1) + "\n", encoding="utf-8")


def load_net(path, access_log=None, stage=None):
    if access_log is not None:
        access_log.record(stage, path)
    return net_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
