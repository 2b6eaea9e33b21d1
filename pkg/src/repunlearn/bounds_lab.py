"""Numerical checks of variational information bounds on finite-support channels.

The input takes finitely many values x_k with probabilities p_k, the encoder
is a lookup table z_k, and the transformed representation is the Gaussian
channel Z' | Z ~ N(f(Z), I). Mixture densities are then exact finite sums,
so every expectation over x is computed exactly and only the Gaussian draws
are Monte Carlo.

Quantities compared (estimate <= bound):

* ``retain``: I(Z'; Z | X_r) <= E_{x_r} E_{z|x_r} KL(N(f(z), I) || N(z(x_r), I)).
  With a deterministic encoder the left side is 0. An optional encoder noise
  scale ``s`` (Z | x ~ N(z_k, s^2 I)) makes it non-trivial for affine f.
* ``forget_marginal``: I(Z'; X_f) <= E_{x_f} KL(p(z'|x_f) || r(z')) with
  r the mixture of N(z_j, I) under p(x).
* ``forget_pairwise``: the Jensen relaxation E_{x_f} E_{x} KL(N(f(z_f), I) || N(z_x, I)).
* ``forget_labels``: the class version, r(z') = sum_c p(y=c) N(w_c, I),
  relaxed the same way to prototype distances.
* ``jensen``: forget_marginal <= forget_pairwise.
"""

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .numerics import gaussian_kl_identity_cov
from .unlearning import Transformation

QUANTITIES = ("retain", "forget_marginal", "forget_pairwise", "forget_labels", "jensen")
CSV_COLUMNS = ("instance_seed", "quantity", "estimate", "stderr", "bound", "margin", "verdict")


class DegenerateSupport(ValueError):
    pass


@dataclass
class DiscreteGaussianChannel:
    probs: np.ndarray
    labels: np.ndarray
    codes: np.ndarray
    forget_mask: np.ndarray
    transform: object
    prototypes: np.ndarray = None
    encoder_scale: float = 0.0

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.codes = np.atleast_2d(np.asarray(self.codes, dtype=np.float64))
        self.forget_mask = np.asarray(self.forget_mask, dtype=bool)
        K = len(self.probs)
        if K == 0 or self.codes.shape[0] != K or self.labels.shape != (K,) \
                or self.forget_mask.shape != (K,):
            raise DegenerateSupport("support arrays disagree on the number of points")
        if np.any(self.probs < 0) or not math.isclose(self.probs.sum(), 1.0, abs_tol=1e-9):
            raise ValueError("support probabilities must be non-negative and sum to 1")
        if self.encoder_scale < 0:
            raise ValueError("encoder_scale must be non-negative")
        if self.prototypes is None:
            self.prototypes = class_means(self.codes, self.probs, self.labels)
        self.prototypes = np.atleast_2d(np.asarray(self.prototypes, dtype=np.float64))
        if self.prototypes.shape[1] != self.dim or self.labels.max() >= len(self.prototypes):
            raise ValueError("prototypes do not cover every label")

    @property
    def dim(self):
        return self.codes.shape[1]

    @property
    def class_prior(self):
        return np.bincount(self.labels, weights=self.probs, minlength=len(self.prototypes))

    def mapped(self, z=None):
        return self.transform.apply(self.codes if z is None else z)

    def _part(self, mask, what):
        p = self.probs[mask]
        if not mask.any() or p.sum() <= 0:
            raise DegenerateSupport(f"{what} part of the support has no mass")
        return p / p.sum(), self.codes[mask]


def class_means(codes, probs, labels):
    C = int(labels.max()) + 1
    out = np.zeros((C, codes.shape[1]))
    for c in range(C):
        m = labels == c
        if m.any() and probs[m].sum() > 0:
            out[c] = probs[m] @ codes[m] / probs[m].sum()
    return out


@dataclass
class BoundReport:
    quantity: str
    estimate: float
    stderr: float
    bound: float
    n_samples: int

    @property
    def margin(self):
        return self.bound - self.estimate

    @property
    def verdict(self):
        return "pass" if self.estimate - 3.0 * self.stderr <= self.bound else "fail"

    @property
    def passed(self):
        return self.verdict == "pass"


def _weighted_mean_se(weights, values):
    """Mean and standard error of ``sum_k w_k mean_i values[k, i]``."""
    n = values.shape[1]
    means = values.mean(axis=1)
    var = values.var(axis=1, ddof=1) if n > 1 else np.zeros(len(values))
    return float(weights @ means), float(np.sqrt(np.sum(weights ** 2 * var) / n))


def _forget_log_terms(ch, n_samples, rng):
    """Per-draw log densities at z' = f(z_k) + eps for every forget point k.

    Returns ``(p_f, log p(z'|x_k), log q_f(z'), log r_all(z'), log r_labels(z'))``,
    each of shape (K_f, n_samples).
    """
    if n_samples < 2:
        raise ValueError("need at least two Monte Carlo samples")
    p_f, z_f = ch._part(ch.forget_mask, "forget")
    mu = ch.mapped(z_f)
    d = ch.dim
    eps = rng.standard_normal((len(mu), n_samples, d))
    zp = (mu[:, None, :] + eps).reshape(-1, d)
    shape = (len(mu), n_samples)
    log_cond = (-0.5 * np.sum(eps ** 2, axis=2) - 0.5 * d * math.log(2 * math.pi))
    with np.errstate(divide="ignore"):
        log_qf = kernels.mixture_logpdf(zp, mu, np.log(p_f)).reshape(shape)
        log_r = kernels.mixture_logpdf(zp, ch.codes, np.log(ch.probs)).reshape(shape)
        log_ry = kernels.mixture_logpdf(zp, ch.prototypes, np.log(ch.class_prior)).reshape(shape)
    return p_f, log_cond, log_qf, log_r, log_ry


def mi_z_prime_x_estimate(ch, n_samples, rng):
    """``(estimate, stderr)`` of I(Z'; X_f) over the forget part of the support."""
    p_f, log_cond, log_qf, _, _ = _forget_log_terms(ch, n_samples, rng)
    return _weighted_mean_se(p_f, log_cond - log_qf)


def retain_mi(ch):
    """I(Z'; Z | X_r): 0 for a deterministic encoder, closed form for affine f."""
    if ch.encoder_scale == 0:
        return 0.0
    f = ch.transform
    if not (isinstance(f, Transformation) and f.depth == 0):
        raise NotImplementedError("encoder noise is supported for affine maps only")
    A = f.params[:f.dim * f.dim].reshape(f.dim, f.dim)
    s2 = ch.encoder_scale ** 2
    return 0.5 * float(np.linalg.slogdet(np.eye(f.dim) + s2 * A @ A.T)[1])


def _retain_rhs(ch, n_samples, rng):
    p_r, z_r = ch._part(~ch.forget_mask, "retain")
    if ch.encoder_scale == 0:
        return float(p_r @ gaussian_kl_identity_cov(ch.mapped(z_r), z_r)), 0.0
    if n_samples < 2:
        raise ValueError("need at least two Monte Carlo samples")
    d = ch.dim
    z = z_r[:, None, :] + ch.encoder_scale * rng.standard_normal((len(z_r), n_samples, d))
    kl = gaussian_kl_identity_cov(ch.mapped(z.reshape(-1, d)).reshape(z.shape), z_r[:, None, :])
    return _weighted_mean_se(p_r, kl)


def retain_bound_rhs(ch, n_samples, rng):
    """E_{x_r} E_{z|x_r} KL(N(f(z), I) || N(z(x_r), I)); exact without encoder noise."""
    return _retain_rhs(ch, n_samples, rng)[0]


def retain_bound_report(ch, n_samples, rng):
    rhs, se = _retain_rhs(ch, n_samples, rng)
    return BoundReport("retain", retain_mi(ch), se, rhs, n_samples)


def forget_bound_chain(ch, n_samples, rng):
    """Reports for the three forget-side bounds and their Jensen ordering.

    The same Gaussian draws feed the MI estimate and the mixture-KL bound, so
    their comparison uses the standard error of the paired difference.
    """
    p_f, log_cond, log_qf, log_r, log_ry = _forget_log_terms(ch, n_samples, rng)
    mi, mi_se = _weighted_mean_se(p_f, log_cond - log_qf)
    marg, marg_se = _weighted_mean_se(p_f, log_cond - log_r)
    _, diff_se = _weighted_mean_se(p_f, log_qf - log_r)
    _, z_f = ch._part(ch.forget_mask, "forget")
    mu = ch.mapped(z_f)
    pair = gaussian_kl_identity_cov(mu[:, None, :], ch.codes[None, :, :])
    pairwise = float(p_f @ pair @ ch.probs)
    proto = gaussian_kl_identity_cov(mu[:, None, :], ch.prototypes[None, :, :])
    labels = float(p_f @ proto @ ch.class_prior)
    return [
        BoundReport("forget_marginal", mi, diff_se, marg, n_samples),
        BoundReport("forget_pairwise", mi, mi_se, pairwise, n_samples),
        BoundReport("forget_labels", mi, mi_se, labels, n_samples),
        BoundReport("jensen", marg, marg_se, pairwise, n_samples),
    ]


# --------------------------------------------------------- random instances

def random_channel(rng, max_support=8, max_dim=4):
    """A small random channel: K <= 8 support points, d_z <= 4.

    Half of the instances use a random affine map with encoder noise; the other
    half a random residual one-hidden-layer map with a deterministic encoder.
    Prototypes are the class means plus a small perturbation.
    """
    K = int(rng.integers(2, max_support + 1))
    d = int(rng.integers(1, max_dim + 1))
    C = int(rng.integers(2, min(K, 4) + 1))
    probs = rng.dirichlet(np.ones(K))
    labels = np.concatenate([np.arange(C), rng.integers(0, C, size=K - C)])
    codes = 2.0 * rng.standard_normal((K, d))
    forget = np.zeros(K, dtype=bool)
    forget[rng.choice(K, size=int(rng.integers(1, K)), replace=False)] = True
    if rng.random() < 0.5:
        A = np.eye(d) + 0.5 * rng.standard_normal((d, d))
        c = 0.5 * rng.standard_normal(d)
        f = Transformation(d, 0, (), np.concatenate([A.ravel(), c]))
        scale = float(rng.uniform(0.2, 1.5))
    else:
        h = int(rng.integers(2, 9))
        n = kernels.n_params((d, h, d))
        f = Transformation(d, 1, (h,), 0.7 * rng.standard_normal(n))
        scale = 0.0
    protos = class_means(codes, probs, labels) + 0.3 * rng.standard_normal((C, d))
    return DiscreteGaussianChannel(probs, labels, codes, forget, f, protos, scale)


def certify_instance(seed, n_samples=4000):
    """All bound reports for the random instance built from ``seed``."""
    build, mc = np.random.SeedSequence(seed).spawn(2)
    ch = random_channel(np.random.default_rng(build))
    rng = np.random.default_rng(mc)
    return [retain_bound_report(ch, n_samples, rng)] + forget_bound_chain(ch, n_samples, rng)


def reports_to_csv_text(rows):
    """``rows`` is an iterable of ``(instance_seed, BoundReport)``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for seed, r in rows:
        w.writerow([seed, r.quantity, format(r.estimate, ".17g"), format(r.stderr, ".17g"),
                    format(r.bound, ".17g"), format(r.margin, ".17g"), r.verdict])
    return buf.getvalue()
