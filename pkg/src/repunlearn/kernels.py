"""Hot numeric kernels with a numba path and a pure-numpy fallback.

Every kernel exists twice: ``np_<name>`` (plain numpy) and ``nb_<name>``
(``@njit``). The public ``<name>`` is bound at import time to one of them:
numba when it is importable and ``REPUNLEARN_NUMBA`` is not set to a false
value ("0", "false", "no", "off"), numpy otherwise.

Dense stacks are described by a flat parameter vector and an integer array of
layer widths. Layer ``l`` stores its weight ``(dims[l+1], dims[l])`` row-major,
followed by its bias. ReLU is applied after the first ``n_act`` layers.
"""

import math
import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

ENV_FLAG = "REPUNLEARN_NUMBA"


def numba_requested():
    return os.environ.get(ENV_FLAG, "1").strip().lower() not in {"0", "false", "no", "off"}


USE_NUMBA = HAVE_NUMBA and numba_requested()


def backend():
    return "numba" if USE_NUMBA else "numpy"


def layer_offsets(dims):
    dims = np.asarray(dims, dtype=np.int64)
    offs = np.zeros(len(dims), dtype=np.int64)
    for l in range(len(dims) - 1):
        offs[l + 1] = offs[l] + dims[l + 1] * dims[l] + dims[l + 1]
    return offs


def n_params(dims):
    return int(layer_offsets(dims)[-1])


# ---------------------------------------------------------------- numpy path

def _np_layers(flat, dims):
    out = []
    off = 0
    for l in range(len(dims) - 1):
        din, dout = int(dims[l]), int(dims[l + 1])
        W = flat[off:off + dout * din].reshape(dout, din)
        off += dout * din
        b = flat[off:off + dout]
        off += dout
        out.append((W, b))
    return out


def _np_forward_cache(x, flat, dims, n_act):
    acts = [x]
    h = x
    for l, (W, b) in enumerate(_np_layers(flat, dims)):
        h = h @ W.T + b
        if l < n_act:
            h = np.maximum(h, 0.0)
        acts.append(h)
    return acts


def _np_backward(acts, flat, dims, n_act, gout):
    layers = _np_layers(flat, dims)
    grads = [None] * len(layers)
    g = gout
    for l in range(len(layers) - 1, -1, -1):
        W, _ = layers[l]
        if l < n_act:
            g = g * (acts[l + 1] > 0.0)
        grads[l] = np.concatenate([(g.T @ acts[l]).ravel(), g.sum(axis=0)])
        g = g @ W
    return np.concatenate(grads), g


def np_mlp_forward(x, flat, dims, n_act):
    return _np_forward_cache(x, flat, dims, n_act)[-1]


def np_mlp_vjp(x, flat, dims, n_act, gout):
    """Gradient of ``sum(gout * mlp(x))`` w.r.t. the flat parameters and the input."""
    acts = _np_forward_cache(x, flat, dims, n_act)
    return _np_backward(acts, flat, dims, n_act, gout)


def np_mlp_xent_grad(x, labels, flat, dims, n_act):
    """Mean softmax cross-entropy of the stack's outputs and its parameter gradient."""
    acts = _np_forward_cache(x, flat, dims, n_act)
    logits = acts[-1]
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(lse - shifted[np.arange(n), labels]))
    probs = np.exp(shifted - lse[:, None])
    probs[np.arange(n), labels] -= 1.0
    grad, _ = _np_backward(acts, flat, dims, n_act, probs / n)
    return loss, grad


def np_adam_update(p, g, m, v, t, lr, beta1, beta2, eps, weight_decay, decoupled):
    """In-place Adam / AdamW update of ``p``; ``t`` is the post-increment step count."""
    if weight_decay and not decoupled:
        g = g + weight_decay * p
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    mhat = m / (1.0 - beta1 ** t)
    vhat = v / (1.0 - beta2 ** t)
    step = mhat / (np.sqrt(vhat) + eps)
    if weight_decay and decoupled:
        step = step + weight_decay * p
    p -= lr * step


def np_mean_pairwise_sqdist(a, b):
    """``mean_{i,j} ||a_i - b_j||^2`` via the centred decomposition."""
    bbar = b.mean(axis=0)
    spread = np.mean(np.sum((b - bbar) ** 2, axis=1))
    return float(spread + np.mean(np.sum((a - bbar) ** 2, axis=1)))


def np_weighted_sqdist(a, centers, weights):
    """``mean_i sum_c weights_c ||centers_c - a_i||^2``; weights need not be normalised."""
    total = weights.sum()
    cbar = weights @ centers / total
    spread = weights @ np.sum((centers - cbar) ** 2, axis=1)
    return float(spread + total * np.mean(np.sum((a - cbar) ** 2, axis=1)))


def np_mixture_logpdf(x, centers, log_w):
    """``log sum_k w_k N(x; c_k, I)`` for each row of ``x``."""
    d = x.shape[1]
    sq = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    e = log_w[None, :] - 0.5 * sq
    mx = e.max(axis=1)
    return mx + np.log(np.exp(e - mx[:, None]).sum(axis=1)) - 0.5 * d * math.log(2.0 * math.pi)


def np_threshold_accuracy(member, nonmember, thresholds):
    """Balanced accuracy of the rule "member iff loss <= t" for every threshold."""
    ms = np.sort(member)
    ns = np.sort(nonmember)
    tpr = np.searchsorted(ms, thresholds, side="right") / len(ms)
    tnr = 1.0 - np.searchsorted(ns, thresholds, side="right") / len(ns)
    return 0.5 * (tpr + tnr)


# ---------------------------------------------------------------- numba path

if HAVE_NUMBA:
    _jit = numba.njit(cache=True, fastmath=False)

    @_jit
    def _nb_dense(h, flat, off, din, dout, relu):
        n = h.shape[0]
        W = flat[off:off + dout * din].reshape((dout, din))
        b = flat[off + dout * din:off + dout * din + dout]
        out = np.empty((n, dout))
        for i in range(n):
            for o in range(dout):
                s = b[o]
                for k in range(din):
                    s += h[i, k] * W[o, k]
                if relu and s < 0.0:
                    s = 0.0
                out[i, o] = s
        return out

    @_jit
    def nb_mlp_forward(x, flat, dims, n_act):
        h = np.ascontiguousarray(x)
        off = 0
        for l in range(dims.shape[0] - 1):
            din = dims[l]
            dout = dims[l + 1]
            h = _nb_dense(h, flat, off, din, dout, l < n_act)
            off += dout * din + dout
        return h

    @_jit
    def _nb_backward(acts, flat, dims, n_act, gout):
        L = dims.shape[0] - 1
        offs = np.zeros(L + 1, dtype=np.int64)
        for l in range(L):
            offs[l + 1] = offs[l] + dims[l + 1] * dims[l] + dims[l + 1]
        grad = np.zeros(offs[L])
        g = gout.copy()
        for l in range(L - 1, -1, -1):
            din = dims[l]
            dout = dims[l + 1]
            a_in = acts[l]
            a_out = acts[l + 1]
            n = g.shape[0]
            if l < n_act:
                for i in range(n):
                    for o in range(dout):
                        if a_out[i, o] <= 0.0:
                            g[i, o] = 0.0
            off = offs[l]
            for o in range(dout):
                sb = 0.0
                for i in range(n):
                    sb += g[i, o]
                grad[off + dout * din + o] = sb
                for k in range(din):
                    s = 0.0
                    for i in range(n):
                        s += g[i, o] * a_in[i, k]
                    grad[off + o * din + k] = s
            gin = np.zeros((n, din))
            for i in range(n):
                for o in range(dout):
                    go = g[i, o]
                    if go != 0.0:
                        for k in range(din):
                            gin[i, k] += go * flat[off + o * din + k]
            g = gin
        return grad, g

    @_jit
    def _nb_forward_cache(x, flat, dims, n_act):
        acts = [np.ascontiguousarray(x)]
        off = 0
        for l in range(dims.shape[0] - 1):
            din = dims[l]
            dout = dims[l + 1]
            acts.append(_nb_dense(acts[l], flat, off, din, dout, l < n_act))
            off += dout * din + dout
        return acts

    @_jit
    def nb_mlp_vjp(x, flat, dims, n_act, gout):
        acts = _nb_forward_cache(x, flat, dims, n_act)
        return _nb_backward(acts, flat, dims, n_act, np.ascontiguousarray(gout))

    @_jit
    def nb_mlp_xent_grad(x, labels, flat, dims, n_act):
        acts = _nb_forward_cache(x, flat, dims, n_act)
        logits = acts[len(acts) - 1]
        n, C = logits.shape
        g = np.empty((n, C))
        loss = 0.0
        for i in range(n):
            mx = logits[i, 0]
            for c in range(1, C):
                if logits[i, c] > mx:
                    mx = logits[i, c]
            s = 0.0
            for c in range(C):
                s += math.exp(logits[i, c] - mx)
            lse = math.log(s)
            loss += lse - (logits[i, labels[i]] - mx)
            for c in range(C):
                g[i, c] = math.exp(logits[i, c] - mx - lse) / n
            g[i, labels[i]] -= 1.0 / n
        grad, _ = _nb_backward(acts, flat, dims, n_act, g)
        return loss / n, grad

    @_jit
    def nb_adam_update(p, g, m, v, t, lr, beta1, beta2, eps, weight_decay, decoupled):
        c1 = 1.0 - beta1 ** t
        c2 = 1.0 - beta2 ** t
        for i in range(p.shape[0]):
            gi = g[i]
            if weight_decay != 0.0 and not decoupled:
                gi += weight_decay * p[i]
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi
            step = (m[i] / c1) / (math.sqrt(v[i] / c2) + eps)
            if weight_decay != 0.0 and decoupled:
                step += weight_decay * p[i]
            p[i] -= lr * step

    @_jit
    def nb_mean_pairwise_sqdist(a, b):
        na, d = a.shape
        nb_ = b.shape[0]
        bbar = np.zeros(d)
        for j in range(nb_):
            for k in range(d):
                bbar[k] += b[j, k]
        for k in range(d):
            bbar[k] /= nb_
        spread = 0.0
        for j in range(nb_):
            for k in range(d):
                spread += (b[j, k] - bbar[k]) ** 2
        dev = 0.0
        for i in range(na):
            for k in range(d):
                dev += (a[i, k] - bbar[k]) ** 2
        return spread / nb_ + dev / na

    @_jit
    def nb_weighted_sqdist(a, centers, weights):
        na, d = a.shape
        K = centers.shape[0]
        total = 0.0
        for c in range(K):
            total += weights[c]
        cbar = np.zeros(d)
        for c in range(K):
            for k in range(d):
                cbar[k] += weights[c] * centers[c, k]
        for k in range(d):
            cbar[k] /= total
        spread = 0.0
        for c in range(K):
            s = 0.0
            for k in range(d):
                s += (centers[c, k] - cbar[k]) ** 2
            spread += weights[c] * s
        dev = 0.0
        for i in range(na):
            for k in range(d):
                dev += (a[i, k] - cbar[k]) ** 2
        return spread + total * dev / na

    @_jit
    def nb_mixture_logpdf(x, centers, log_w):
        n, d = x.shape
        K = centers.shape[0]
        out = np.empty(n)
        e = np.empty(K)
        norm = 0.5 * d * math.log(2.0 * math.pi)
        for i in range(n):
            mx = -np.inf
            for c in range(K):
                s = 0.0
                for k in range(d):
                    s += (x[i, k] - centers[c, k]) ** 2
                e[c] = log_w[c] - 0.5 * s
                if e[c] > mx:
                    mx = e[c]
            acc = 0.0
            for c in range(K):
                acc += math.exp(e[c] - mx)
            out[i] = mx + math.log(acc) - norm
        return out

    @_jit
    def nb_threshold_accuracy(member, nonmember, thresholds):
        ms = np.sort(member)
        ns = np.sort(nonmember)
        out = np.empty(thresholds.shape[0])
        for t in range(thresholds.shape[0]):
            out[t] = 0.5 * (np.searchsorted(ms, thresholds[t], side="right") / ms.shape[0]
                            + 1.0 - np.searchsorted(ns, thresholds[t], side="right") / ns.shape[0])
        return out


_NAMES = (
    "mlp_forward",
    "mlp_vjp",
    "mlp_xent_grad",
    "adam_update",
    "mean_pairwise_sqdist",
    "weighted_sqdist",
    "mixture_logpdf",
    "threshold_accuracy",
)


def implementations(name):
    """``{"numpy": fn, "numba": fn}`` for one kernel (numba entry only if available)."""
    impls = {"numpy": globals()["np_" + name]}
    if HAVE_NUMBA:
        impls["numba"] = globals()["nb_" + name]
    return impls


for _name in _NAMES:
    globals()[_name] = globals()[("nb_" if USE_NUMBA else "np_") + _name]
del _name


def warmup():
    """Compile (or load from cache) every numba kernel on tiny inputs so that
    later wall-clock measurements exclude JIT time. No-op on the numpy path."""
    if not USE_NUMBA:
        return
    dims = np.array([2, 3, 2], dtype=np.int64)
    flat = np.zeros(n_params(dims))
    x = np.zeros((2, 2))
    mlp_forward(x, flat, dims, 1)
    frozen = x.copy()
    frozen.setflags(write=False)
    mlp_forward(frozen, flat, dims, 1)
    mlp_vjp(x, flat, dims, 1, x)
    mlp_xent_grad(x, np.zeros(2, dtype=np.int64), flat, dims, 1)
    adam_update(flat.copy(), flat, flat.copy(), flat.copy(), 1, 1e-3, 0.9, 0.999, 1e-8, 0.0, False)
    mean_pairwise_sqdist(x, x)
    weighted_sqdist(x, x, np.ones(2))
    mixture_logpdf(x, x, np.zeros(2))
    threshold_accuracy(np.zeros(2), np.ones(2), np.zeros(1))
