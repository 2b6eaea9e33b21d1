"""Deterministic numerical substrate: RNG, Gaussian helpers, Adam, dense stacks.

Random streams are numpy ``Generator`` objects over PCG64, a documented
counter-free permuted congruential generator whose output for a given seed is
stable across platforms and numpy versions. Normal variates come from numpy's
documented ziggurat sampler.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels


def seeded_rng(seed):
    """Return a fresh PCG64 generator whose draws are a pure function of ``seed``."""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    if int(seed) < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    return np.random.Generator(np.random.PCG64(int(seed)))


def spawn_streams(seed, names):
    """Independent named child generators derived from ``seed``.

    Children are produced by ``SeedSequence.spawn`` in the order of ``names``,
    so adding a name at the end never perturbs the earlier streams.
    """
    if isinstance(seed, np.random.SeedSequence):
        ss = seed
    else:
        ss = np.random.SeedSequence(seed)
    children = ss.spawn(len(names))
    return {name: seeded_rng(child) for name, child in zip(names, children)}


def sample_gaussian(rng, mean, cov_scale=1.0, size=None):
    """Draw from N(mean, cov_scale * I).

    ``size`` adds leading sample dimensions; ``None`` returns a single vector.
    """
    if not cov_scale > 0:
        raise ValueError(f"cov_scale must be positive, got {cov_scale}")
    mean = np.asarray(mean, dtype=np.float64)
    shape = mean.shape if size is None else tuple(np.atleast_1d(size)) + mean.shape
    return mean + np.sqrt(cov_scale) * rng.standard_normal(shape)


def gaussian_kl_identity_cov(mu1, mu2):
    """KL(N(mu1, I) || N(mu2, I)) = 0.5 * ||mu1 - mu2||^2, over the last axis."""
    mu1 = np.asarray(mu1, dtype=np.float64)
    mu2 = np.asarray(mu2, dtype=np.float64)
    if mu1.shape[-1] != mu2.shape[-1]:
        raise ValueError(f"dimension mismatch: {mu1.shape[-1]} vs {mu2.shape[-1]}")
    return 0.5 * np.sum((mu1 - mu2) ** 2, axis=-1)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    decoupled: bool = False

    @classmethod
    def zeros(cls, n, **kwargs):
        return cls(m=np.zeros(n), v=np.zeros(n), **kwargs)

    def copy(self):
        return AdamState(self.m.copy(), self.v.copy(), self.step, self.lr, self.beta1,
                         self.beta2, self.eps, self.weight_decay, self.decoupled)


def adam_step(params, grads, state, inplace=False):
    """One bias-corrected Adam step; returns ``(params, state)``.

    With ``inplace=False`` the inputs are left untouched. ``state.decoupled``
    selects AdamW-style weight decay; otherwise decay is added to the gradient.
    """
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ValueError(f"shape mismatch: params {params.shape}, grads {grads.shape}, "
                         f"state {state.m.shape}")
    if not np.all(np.isfinite(grads)):
        raise FloatingPointError("non-finite gradient passed to adam_step")
    if not inplace:
        params = params.copy()
        state = state.copy()
    state.step += 1
    kernels.adam_update(params, grads, state.m, state.v, state.step, state.lr, state.beta1,
                        state.beta2, state.eps, state.weight_decay, state.decoupled)
    return params, state


# ------------------------------------------------------------- dense stacks

def as_dims(dims):
    return np.ascontiguousarray(dims, dtype=np.int64)


def unpack_layers(flat, dims):
    """List of ``(W, b)`` views into ``flat``."""
    return kernels._np_layers(flat, dims)


def he_uniform_init(dims, rng, n_act=None):
    """Symmetric uniform fan-in init with He gain, zero biases.

    Layers after the last ReLU use gain 1 (Glorot-style fan-in) since no
    rectifier halves their input variance.
    """
    dims = as_dims(dims)
    if n_act is None:
        n_act = len(dims) - 2
    parts = []
    for l in range(len(dims) - 1):
        din, dout = int(dims[l]), int(dims[l + 1])
        gain = 2.0 if 0 < l <= n_act else 1.0
        bound = np.sqrt(3.0 * gain / din)
        parts.append(rng.uniform(-bound, bound, size=dout * din))
        parts.append(np.zeros(dout))
    return np.concatenate(parts)


def mlp_forward(x, flat, dims, n_act):
    return kernels.mlp_forward(np.ascontiguousarray(x, dtype=np.float64), flat, as_dims(dims),
                               int(n_act))


def net_backward(x, flat, dims, n_act, grad_out):
    """Reverse-mode gradient of ``sum(grad_out * mlp(x))``.

    Returns ``(grad_params, grad_input)``. The supported composition is a stack
    of affine layers with ReLU after the first ``n_act`` of them; losses feed in
    through ``grad_out``.
    """
    grad_out = np.ascontiguousarray(grad_out, dtype=np.float64)
    if not np.all(np.isfinite(grad_out)):
        raise FloatingPointError("non-finite upstream gradient")
    return kernels.mlp_vjp(np.ascontiguousarray(x, dtype=np.float64), flat, as_dims(dims),
                           int(n_act), grad_out)


def xent_loss_grad(x, labels, flat, dims, n_act):
    """Mean softmax cross-entropy of the stack and its gradient w.r.t. ``flat``."""
    return kernels.mlp_xent_grad(np.ascontiguousarray(x, dtype=np.float64),
                                 np.ascontiguousarray(labels, dtype=np.int64), flat,
                                 as_dims(dims), int(n_act))


def log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits):
    return np.exp(log_softmax(logits))


def per_sample_xent(logits, labels):
    return -log_softmax(logits)[np.arange(len(labels)), labels]
