import os
import subprocess
import sys

import numpy as np
import pytest

from repunlearn import kernels

pytestmark = pytest.mark.skipif(not kernels.HAVE_NUMBA, reason="numba not installed")


def _args(name, rng):
    dims = np.array([4, 6, 5, 3], dtype=np.int64)
    flat = rng.standard_normal(kernels.n_params(dims))
    x = rng.standard_normal((9, 4))
    if name == "mlp_forward":
        return (x, flat, dims, 2)
    if name == "mlp_vjp":
        return (x, flat, dims, 2, rng.standard_normal((9, 3)))
    if name == "mlp_xent_grad":
        return (x, rng.integers(0, 3, 9), flat, dims, 2)
    if name == "mean_pairwise_sqdist":
        return (rng.standard_normal((7, 3)), rng.standard_normal((5, 3)))
    if name == "weighted_sqdist":
        return (rng.standard_normal((7, 3)), rng.standard_normal((4, 3)), rng.random(4) * 10)
    if name == "mixture_logpdf":
        return (rng.standard_normal((50, 2)) * 5, rng.standard_normal((4, 2)),
                np.log(rng.dirichlet(np.ones(4))))
    if name == "threshold_accuracy":
        return (rng.random(20), rng.random(30) + 0.2, np.linspace(-0.1, 1.3, 17))
    raise KeyError(name)


def _close(a, b):
    if isinstance(a, tuple):
        return all(_close(u, v) for u, v in zip(a, b))
    return np.allclose(a, b, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("name", [n for n in kernels._NAMES if n != "adam_update"])
def test_backends_agree(name):
    impl = kernels.implementations(name)
    for seed in range(5):
        a = impl["numpy"](*_args(name, np.random.default_rng(seed)))
        b = impl["numba"](*_args(name, np.random.default_rng(seed)))
        assert _close(a, b)


@pytest.mark.parametrize("decoupled", [False, True])
def test_adam_backends_agree(decoupled):
    rng = np.random.default_rng(0)
    p, g = rng.standard_normal(10), rng.standard_normal(10)
    states = []
    for fn in kernels.implementations("adam_update").values():
        q, m, v = p.copy(), np.zeros(10), np.zeros(10)
        for t in range(1, 4):
            fn(q, g, m, v, t, 1e-2, 0.9, 0.999, 1e-8, 5e-4, decoupled)
        states.append((q, m, v))
    assert _close(tuple(states[0]), tuple(states[1]))


def test_pairwise_distance_matches_double_loop():
    rng = np.random.default_rng(3)
    a, b = rng.standard_normal((6, 2)), rng.standard_normal((4, 2))
    brute = np.mean([[np.sum((u - v) ** 2) for v in b] for u in a])
    assert np.isclose(kernels.mean_pairwise_sqdist(a, b), brute, rtol=1e-13)


def test_numpy_fallback_selected_by_env():
    env = dict(os.environ, REPUNLEARN_NUMBA="0")
    out = subprocess.run([sys.executable, "-c", "import repunlearn; print(repunlearn.backend())"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"


def test_numpy_fallback_trains_identically():
    code = ("import numpy as np;"
            "from repunlearn import encoder, datasets;"
            "tr,_=datasets.generate_toy_mixture(datasets.MixtureConfig(n_per_class=40));"
            "n=encoder.train_classifier(encoder.TrainConfig(epochs=3),tr);"
            "print(repr(float(n.params.sum())))")
    vals = []
    for flag in ("0", "1"):
        env = dict(os.environ, REPUNLEARN_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                             text=True, check=True)
        vals.append(float(out.stdout))
    assert np.isclose(vals[0], vals[1], rtol=1e-10)
