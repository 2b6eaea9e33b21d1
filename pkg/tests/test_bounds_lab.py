import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from repunlearn import bounds_lab as bl
from repunlearn.unlearning import Transformation, init_transformation


def affine(A, c):
    A = np.atleast_2d(A)
    return Transformation(A.shape[0], 0, (), np.concatenate([A.ravel(), c]))


def channel(codes, probs, forget, f, labels=None, **kw):
    codes = np.asarray(codes, dtype=float).reshape(len(probs), -1)
    labels = np.arange(len(probs)) % 2 if labels is None else labels
    return bl.DiscreteGaussianChannel(probs, labels, codes, forget, f, **kw)


def mi_quad_1d(points, probs):
    """I(Z'; X) for Z' | x_k ~ N(points[k], 1) by numerical integration."""
    def integrand(t):
        dens = stats.norm.pdf(t, points, 1.0)
        mix = probs @ dens
        return float(np.sum(probs * dens * (np.log(dens) - np.log(mix))))
    lo, hi = min(points) - 12, max(points) + 12
    return integrate.quad(integrand, lo, hi, limit=200)[0]


# ------------------------------------------------------------- MI estimator

def test_collapsed_map_has_no_information():
    ch = channel(np.arange(4.0), np.full(4, 0.25), [True] * 4, affine([[0.0]], [1.5]))
    est, se = bl.mi_z_prime_x_estimate(ch, 2000, np.random.default_rng(0))
    assert abs(est) <= 3 * se + 1e-12


@pytest.mark.parametrize("m", [0.0, 1.0, 4.0])
def test_two_point_mi_matches_quadrature(m):
    probs = np.array([0.5, 0.5])
    ch = channel([0.0, m], probs, [True, True], init_transformation(1, 0))
    est, se = bl.mi_z_prime_x_estimate(ch, 20000, np.random.default_rng(1))
    assert abs(est - mi_quad_1d(np.array([0.0, m]), probs)) <= 4 * se + 1e-12


def test_two_point_mi_increases_with_separation():
    probs = np.array([0.5, 0.5])
    vals = []
    for m in (0.0, 1.0, 4.0):
        ch = channel([0.0, m], probs, [True, True], init_transformation(1, 0))
        vals.append(bl.mi_z_prime_x_estimate(ch, 4000, np.random.default_rng(2))[0])
    assert vals[0] < vals[1] < vals[2]
    assert vals[2] <= math.log(2)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_mi_estimate_nonnegative(seed):
    ch = bl.random_channel(np.random.default_rng(seed))
    est, se = bl.mi_z_prime_x_estimate(ch, 500, np.random.default_rng(seed + 1))
    assert est >= -3 * se - 1e-12  # one forget point: exactly 0 up to rounding


def test_stderr_shrinks_as_inverse_sqrt():
    ch = channel([0.0, 1.0, 2.5], [0.3, 0.3, 0.4], [True, True, False], init_transformation(1, 0))
    ses = [bl.mi_z_prime_x_estimate(ch, n, np.random.default_rng(3))[1] for n in (1000, 16000)]
    assert 3.0 <= ses[0] / ses[1] <= 5.3  # ideal 4


def test_degenerate_support_errors():
    f = init_transformation(1, 0)
    with pytest.raises(bl.DegenerateSupport):
        bl.mi_z_prime_x_estimate(channel([0.0, 1.0], [0.5, 0.5], [False, False], f), 10,
                                 np.random.default_rng(0))
    with pytest.raises(bl.DegenerateSupport):
        bl.retain_bound_rhs(channel([0.0, 1.0], [0.5, 0.5], [True, True], f), 10,
                            np.random.default_rng(0))
    with pytest.raises(bl.DegenerateSupport):
        bl.DiscreteGaussianChannel([1.0], [0, 1], [[0.0], [1.0]], [True, False], f)
    with pytest.raises(ValueError):
        channel([0.0, 1.0], [0.7, 0.7], [True, False], f)


# -------------------------------------------------------------- retain side

def test_retain_rhs_identity_is_zero():
    ch = channel([[0.0, 1.0], [2.0, -1.0], [3.0, 3.0]], [0.2, 0.3, 0.5], [True, False, False],
                 init_transformation(2, 0))
    assert bl.retain_bound_rhs(ch, 10, np.random.default_rng(0)) == 0.0


def test_retain_rhs_zero_map_hand_value():
    probs = np.array([0.1, 0.2, 0.3, 0.4])
    ch = channel(np.arange(4.0), probs, [False] * 4, affine([[0.0]], [0.0]))
    expect = float(probs @ (0.5 * np.arange(4.0) ** 2))
    assert math.isclose(bl.retain_bound_rhs(ch, 10, np.random.default_rng(0)), expect,
                        rel_tol=1e-14)


def test_retain_rhs_affine_with_encoder_noise():
    rng = np.random.default_rng(5)
    A, c, s = np.eye(2) + 0.4 * rng.standard_normal((2, 2)), rng.standard_normal(2), 0.8
    codes = rng.standard_normal((3, 2))
    probs = np.array([0.5, 0.25, 0.25])
    ch = channel(codes, probs, [False] * 3, affine(A, c), encoder_scale=s)
    exact = sum(p * (0.5 * np.sum(((A - np.eye(2)) @ z + c) ** 2) + 0.5 * s * s * np.sum(A * A))
                for p, z in zip(probs, codes))
    r = bl.retain_bound_report(ch, 20000, rng)
    assert abs(r.bound - exact) <= 4 * r.stderr
    # I(Z'; Z | X) = h(Z'|X) - h(Z'|Z) for jointly Gaussian Z, Z'
    cov = np.eye(2) + s * s * A @ A.T
    h = stats.multivariate_normal(np.zeros(2), cov).entropy()
    assert math.isclose(r.estimate, h - stats.multivariate_normal(np.zeros(2)).entropy(),
                        rel_tol=1e-12)
    assert r.passed


def test_deterministic_encoder_retain_mi_is_zero():
    ch = bl.random_channel(np.random.default_rng(0))
    ch.encoder_scale = 0.0
    assert bl.retain_mi(ch) == 0.0


# -------------------------------------------------------------- forget side

def test_collapsed_chain_values():
    codes = np.array([0.0, 1.0, 3.0, 4.0])
    probs = np.array([0.1, 0.2, 0.3, 0.4])
    c = 2.0
    ch = channel(codes, probs, [True, True, False, False], affine([[0.0]], [c]),
                 labels=np.array([0, 0, 1, 1]))
    reps = {r.quantity: r for r in bl.forget_bound_chain(ch, 4000, np.random.default_rng(0))}
    assert math.isclose(reps["forget_pairwise"].bound, float(probs @ (0.5 * (c - codes) ** 2)),
                        rel_tol=1e-14)
    w = ch.prototypes[:, 0]
    assert math.isclose(reps["forget_labels"].bound, float(ch.class_prior @ (0.5 * (c - w) ** 2)),
                        rel_tol=1e-14)
    assert abs(reps["forget_pairwise"].estimate) <= 3 * reps["forget_pairwise"].stderr + 1e-12
    assert all(r.passed for r in reps.values())


def test_marginal_bound_matches_quadrature():
    codes, probs = np.array([0.0, 1.0, 3.0]), np.array([0.5, 0.3, 0.2])
    ch = channel(codes, probs, [True, False, False], init_transformation(1, 0))
    exact = integrate.quad(lambda t: stats.norm.pdf(t) * (stats.norm.logpdf(t) - np.log(
        probs @ stats.norm.pdf(t, codes))), -12, 15)[0]
    rep = bl.forget_bound_chain(ch, 20000, np.random.default_rng(4))[-1]  # jensen: est = marginal
    assert abs(rep.estimate - exact) <= 4 * rep.stderr


def test_random_k4_jensen_ordering():
    rng = np.random.default_rng(7)
    for _ in range(20):
        codes = rng.standard_normal((4, 2)) * 2
        ch = channel(codes, rng.dirichlet(np.ones(4)), [True, True, False, False],
                     affine(np.eye(2) + 0.3 * rng.standard_normal((2, 2)), rng.standard_normal(2)))
        jensen = bl.forget_bound_chain(ch, 2000, rng)[-1]
        assert jensen.passed


def test_bounds_nonnegative_on_random_instances():
    for seed in range(30):
        for r in bl.certify_instance(seed, 300):
            assert r.bound >= 0


def test_hundred_random_instances_pass():
    verdicts = [all(r.passed for r in bl.certify_instance(s)) for s in range(100)]
    assert sum(verdicts) >= 99


def test_report_verdict_rule():
    assert bl.BoundReport("x", 1.3, 0.1, 1.0, 10).verdict == "pass"
    assert bl.BoundReport("x", 1.31, 0.1, 1.0, 10).verdict == "fail"
    assert bl.BoundReport("x", 0.5, 0.0, 1.0, 10).margin == 0.5


def test_certify_is_deterministic_and_csv():
    a = bl.reports_to_csv_text([(3, r) for r in bl.certify_instance(3, 200)])
    b = bl.reports_to_csv_text([(3, r) for r in bl.certify_instance(3, 200)])
    assert a == b
    lines = a.splitlines()
    assert lines[0] == ",".join(bl.CSV_COLUMNS) and len(lines) == 1 + len(bl.QUANTITIES)
    assert [ln.split(",")[1] for ln in lines[1:]] == list(bl.QUANTITIES)
