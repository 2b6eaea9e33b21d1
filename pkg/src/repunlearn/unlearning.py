"""Representation unlearning: a learned map over penultimate representations.

The transformation ``f`` sits between the frozen encoder and the frozen head.
Two objectives are supported, each a retain term plus ``beta`` times a forget
term:

* standard (retain and forget data available): the retain term keeps
  ``f(z_r)`` close to ``z_r``; the forget term pulls every ``f(z_f)`` toward a
  reference batch drawn from the whole training set.
* zero-shot (forget data plus class counts only): the head rows ``w_c`` stand in
  for class-conditional representations, weighted by retain or global class
  frequencies.

All four losses are squared-distance forms with unit-covariance Gaussians, so
each carries a factor 1/2.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .datasets import retain_class_prior
from .encoder import classifier_prototypes
from .numerics import AdamState, adam_step, as_dims, he_uniform_init, mlp_forward, net_backward

log = logging.getLogger(__name__)

TRANSFORM_FORMAT_VERSION = 1


class UnlearningDiverged(FloatingPointError):
    pass


@dataclass
class Transformation:
    """``f(z) = A z + c`` for depth 0, ``f(z) = z + MLP(z)`` for depth 1 or 2."""

    dim: int
    depth: int
    widths: tuple
    params: np.ndarray
    history: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if self.depth not in (0, 1, 2):
            raise ValueError(f"depth must be 0, 1 or 2, got {self.depth}")
        if len(self.widths) != self.depth:
            raise ValueError(f"depth {self.depth} needs {self.depth} hidden widths")
        self.params = np.ascontiguousarray(self.params, dtype=np.float64)
        if self.params.shape != (kernels.n_params(self.mlp_dims),):
            raise ValueError("parameter vector does not match the architecture")

    @property
    def mlp_dims(self):
        return (self.dim, *self.widths, self.dim)

    @property
    def residual(self):
        return self.depth > 0

    def copy(self):
        return Transformation(self.dim, self.depth, self.widths, self.params.copy(),
                              list(self.history))

    def apply(self, z):
        z = np.ascontiguousarray(z, dtype=np.float64)
        out = mlp_forward(z, self.params, self.mlp_dims, self.depth)
        return z + out if self.residual else out

    def vjp(self, z, grad_out):
        """Gradient of ``sum(grad_out * f(z))`` with respect to ``params``."""
        g, _ = net_backward(z, self.params, self.mlp_dims, self.depth, grad_out)
        return g


def init_transformation(d_z, depth=0, widths=None, rng=None):
    """Start ``f`` exactly at the identity.

    Depth 0 gets ``A = I, c = 0``. Deeper maps are residual with a zero output
    layer; their hidden layers use He-uniform init so gradients flow at once.
    """
    if depth not in (0, 1, 2):
        raise ValueError(f"depth must be 0, 1 or 2, got {depth}")
    if widths is None:
        widths = (32,) * depth
    widths = tuple(int(w) for w in widths)
    dims = (d_z, *widths, d_z)
    if depth == 0:
        params = np.concatenate([np.eye(d_z).ravel(), np.zeros(d_z)])
    else:
        if rng is None:
            raise ValueError("an rng is needed to initialise hidden layers")
        params = he_uniform_init(dims, rng, n_act=depth)
        off = int(kernels.layer_offsets(dims)[-2])
        params[off:] = 0.0
    return Transformation(d_z, depth, widths, params)


@dataclass(frozen=True)
class ZeroShotMetadata:
    prototypes: np.ndarray
    class_counts: np.ndarray
    forget_counts: np.ndarray

    def __post_init__(self):
        W = np.asarray(self.prototypes, dtype=np.float64)
        n = np.asarray(self.class_counts, dtype=np.int64)
        nf = np.asarray(self.forget_counts, dtype=np.int64)
        if W.ndim != 2 or len(W) != len(n) or n.shape != nf.shape:
            raise ValueError("prototypes and counts must agree on the class count")
        if np.any(nf > n) or np.any(nf < 0):
            raise ValueError("forget counts must lie within [0, class counts]")
        object.__setattr__(self, "prototypes", W)
        object.__setattr__(self, "class_counts", n)
        object.__setattr__(self, "forget_counts", nf)

    @property
    def N(self):
        return int(self.class_counts.sum())

    @property
    def N_f(self):
        return int(self.forget_counts.sum())

    @property
    def N_r(self):
        return self.N - self.N_f

    @property
    def retain_counts(self):
        return self.class_counts - self.forget_counts

    @classmethod
    def from_net(cls, net, class_counts, forget_counts):
        return cls(classifier_prototypes(net), class_counts, forget_counts)

    def to_dict(self):
        return {"prototypes": self.prototypes.tolist(),
                "class_counts": self.class_counts.tolist(),
                "forget_counts": self.forget_counts.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["prototypes"]), np.asarray(d["class_counts"]),
                   np.asarray(d["forget_counts"]))


# ------------------------------------------------------------------- losses
#
# Each ``_*_terms`` helper returns (value, points, grad wrt f(points)) so the
# parameter gradient is a single vector-Jacobian product through f.

def _nonempty(z, what):
    z = np.ascontiguousarray(z, dtype=np.float64)
    if z.ndim != 2 or len(z) == 0:
        raise ValueError(f"{what} batch must be a non-empty 2-d array")
    return z


def _retain_terms(z_r, f):
    z_r = _nonempty(z_r, "retain")
    out = f.apply(z_r)
    diff = out - z_r
    value = 0.5 * float(np.mean(np.sum(diff * diff, axis=1)))
    return value, z_r, diff / len(z_r)


def _forget_terms(z_f, z_ref, f):
    z_f = _nonempty(z_f, "forget")
    z_ref = _nonempty(z_ref, "reference")
    out = f.apply(z_f)
    value = 0.5 * kernels.mean_pairwise_sqdist(out, z_ref)
    return value, z_f, (out - z_ref.mean(axis=0)) / len(z_f)


def _zs_retain_terms(meta, f):
    if meta.N_r <= 0:
        raise ValueError("zero-shot retain loss needs a non-empty retain set")
    W = meta.prototypes
    weights = retain_class_prior(meta.N, meta.class_counts, meta.forget_counts)
    out = f.apply(W)
    diff = out - W
    value = 0.5 * float(weights @ np.sum(diff * diff, axis=1))
    return value, W, weights[:, None] * diff


def _zs_forget_terms(z_f, meta, f):
    z_f = _nonempty(z_f, "forget")
    counts = meta.class_counts.astype(np.float64)
    out = f.apply(z_f)
    value = 0.5 * kernels.weighted_sqdist(out, meta.prototypes, counts) / meta.N
    centroid = counts @ meta.prototypes / meta.N
    return value, z_f, (out - centroid) / len(z_f)


def retain_loss(z_r, f):
    """``1/(2 B_r) sum_i ||z_r_i - f(z_r_i)||^2``."""
    return _retain_terms(z_r, f)[0]


def forget_loss(z_f, z_ref, f):
    """``1/(2 B_f B) sum_i sum_j ||z_ref_j - f(z_f_i)||^2``."""
    return _forget_terms(z_f, z_ref, f)[0]


def zs_retain_loss(meta, f):
    """``1/(2 N_r) sum_c N_r^c ||w_c - f(w_c)||^2``."""
    return _zs_retain_terms(meta, f)[0]


def zs_forget_loss(z_f, meta, f):
    """``1/(2 B_f N) sum_i sum_c N^c ||w_c - f(z_f_i)||^2``."""
    return _zs_forget_terms(z_f, meta, f)[0]


def _with_grad(terms, f):
    value, points, gout = terms
    return value, f.vjp(points, gout)


def retain_loss_grad(z_r, f):
    return _with_grad(_retain_terms(z_r, f), f)


def forget_loss_grad(z_f, z_ref, f):
    return _with_grad(_forget_terms(z_f, z_ref, f), f)


def zs_retain_loss_grad(meta, f):
    return _with_grad(_zs_retain_terms(meta, f), f)


def zs_forget_loss_grad(z_f, meta, f):
    return _with_grad(_zs_forget_terms(z_f, meta, f), f)


def total_loss(retain_part, forget_part, beta):
    if beta < 0:
        raise ValueError(f"beta must be non-negative, got {beta}")
    return retain_part + beta * forget_part


# --------------------------------------------------------------- algorithms

@dataclass(frozen=True)
class UnlearnConfig:
    beta: float = 1e-3
    lr: float = 1e-3
    batch_retain: int = 64
    batch_forget: int = 64
    batch_ref: int = 64
    max_epochs: int = 200
    tol: float = 1e-5
    depth: int = 0
    hidden_width: int = 32
    seed: int = 0

    def validate(self):
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if min(self.batch_retain, self.batch_forget, self.batch_ref) < 1:
            raise ValueError("batch sizes must be positive")
        if self.tol < 0 or self.max_epochs < 0 or not self.lr > 0:
            raise ValueError("need tol >= 0, max_epochs >= 0 and lr > 0")
        if self.depth not in (0, 1, 2):
            raise ValueError("depth must be 0, 1 or 2")
        return self

    @property
    def widths(self):
        return (self.hidden_width,) * self.depth

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _converged(prev, cur, tol):
    if prev is None:
        return False
    scale = max(abs(prev), np.finfo(float).tiny)
    return abs(prev - cur) / scale < tol


def _optimise(f, n_forget, cfg, rng, step_loss_grad):
    """Shared epoch loop: one epoch is one shuffled pass over the forget set."""
    state = AdamState.zeros(len(f.params), lr=cfg.lr)
    prev = None
    history = []
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n_forget)
        total, steps = 0.0, 0
        for start in range(0, n_forget, cfg.batch_forget):
            loss, grad = step_loss_grad(order[start:start + cfg.batch_forget])
            if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
                raise UnlearningDiverged(f"non-finite loss at epoch {epoch}")
            adam_step(f.params, grad, state, inplace=True)
            total += loss
            steps += 1
        cur = total / steps
        history.append(cur)
        if _converged(prev, cur, cfg.tol):
            break
        prev = cur
    f.history = history
    return f


def unlearn_standard(net, data, split, cfg, rng):
    """Learn ``f`` with retain and forget data available.

    Each step draws a forget batch (a slice of the epoch's shuffled forget
    order), a retain batch i.i.d. from the retain set and a reference batch
    i.i.d. from all training indices, then takes an Adam step on
    ``L_r + beta * L_f``. The encoder is frozen, so representations are
    computed once up front.
    """
    cfg.validate()
    z_all = net.encode(data.features)
    z_f_all = z_all[split.forget_indices]
    retain_idx = split.retain_indices
    n_all = len(z_all)
    f = init_transformation(net.rep_dim, cfg.depth, cfg.widths, rng)

    def step(batch):
        z_f = z_f_all[batch]
        z_r = z_all[retain_idx[rng.integers(0, len(retain_idx), size=cfg.batch_retain)]]
        z_ref = z_all[rng.integers(0, n_all, size=cfg.batch_ref)]
        lr_, gr = retain_loss_grad(z_r, f)
        lf, gf = forget_loss_grad(z_f, z_ref, f)
        return total_loss(lr_, lf, cfg.beta), gr + cfg.beta * gf

    return _optimise(f, len(z_f_all), cfg, rng, step)


def unlearn_zero_shot(net, forget_features, meta, cfg, rng):
    """Learn ``f`` from forget samples, head prototypes and class counts only.

    ``forget_features`` is any row container (e.g. ``TrackedRows``); it is read
    once, in full, to encode the forget set. No retain sample is touched.
    """
    cfg.validate()
    n_f = len(forget_features)
    if n_f == 0:
        raise ValueError("zero-shot unlearning needs forget samples")
    z_f_all = net.encode(np.asarray(forget_features[np.arange(n_f)]))
    f = init_transformation(net.rep_dim, cfg.depth, cfg.widths, rng)

    def step(batch):
        lr_, gr = zs_retain_loss_grad(meta, f)
        lf, gf = zs_forget_loss_grad(z_f_all[batch], meta, f)
        return total_loss(lr_, lf, cfg.beta), gr + cfg.beta * gf

    return _optimise(f, n_f, cfg, rng, step)


# -------------------------------------------------------------- persistence

def transformation_to_dict(f):
    layers = kernels._np_layers(f.params, f.mlp_dims)
    return {
        "format_version": TRANSFORM_FORMAT_VERSION,
        "kind": "transformation",
        "dim": f.dim,
        "depth": f.depth,
        "widths": list(f.widths),
        "residual": f.residual,
        "weights": [W.ravel().tolist() for W, _ in layers],
        "biases": [b.tolist() for _, b in layers],
    }


def transformation_from_dict(d):
    if d.get("format_version") != TRANSFORM_FORMAT_VERSION or d.get("kind") != "transformation":
        raise ValueError("not a transformation document of a supported version")
    parts = []
    for W, b in zip(d["weights"], d["biases"]):
        parts.append(np.asarray(W, dtype=np.float64))
        parts.append(np.asarray(b, dtype=np.float64))
    return Transformation(int(d["dim"]), int(d["depth"]), tuple(d["widths"]),
                          np.concatenate(parts))


def save_transformation(f, path):
    Path(path).write_text(json.dumps(transformation_to_dict(f), indent=1) + "\n",
                          encoding="utf-8")


def load_transformation(path, access_log=None, stage=None):
    if access_log is not None:
        access_log.record(stage, path)
    return transformation_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
