"""Independent reference implementations used by the tests.

Everything here is written from the formulas with plain Python loops or
layer-by-layer numpy, sharing no code with the kernels under test.
"""

import math

import numpy as np


def dense_stack(x, flat, dims, n_act):
    """Layer-by-layer forward pass; ReLU after the first ``n_act`` layers."""
    h = np.asarray(x, dtype=float)
    off = 0
    for l in range(len(dims) - 1):
        din, dout = dims[l], dims[l + 1]
        W = np.asarray(flat[off:off + din * dout]).reshape(dout, din)
        b = np.asarray(flat[off + din * dout:off + din * dout + dout])
        off += din * dout + dout
        h = h @ W.T + b
        if l < n_act:
            h = np.maximum(h, 0.0)
    return h


def apply_map(f, z):
    out = dense_stack(z, f.params, f.mlp_dims, f.depth)
    return np.asarray(z) + out if f.depth > 0 else out


def sqdist(a, b):
    return math.fsum((float(u) - float(v)) ** 2 for u, v in zip(a, b))


def retain_loss_loops(z, f):
    fz = apply_map(f, z)
    return math.fsum(sqdist(z[i], fz[i]) for i in range(len(z))) / (2 * len(z))


def forget_loss_loops(z_f, z_ref, f):
    fz = apply_map(f, z_f)
    total = math.fsum(sqdist(z_ref[j], fz[i]) for i in range(len(z_f)) for j in range(len(z_ref)))
    return total / (2 * len(z_f) * len(z_ref))


def zs_retain_loss_loops(W, class_counts, forget_counts, f):
    fw = apply_map(f, W)
    retain = [int(n) - int(m) for n, m in zip(class_counts, forget_counts)]
    N_r = sum(retain)
    return math.fsum(retain[c] * sqdist(W[c], fw[c]) for c in range(len(W))) / (2 * N_r)


def zs_forget_loss_loops(z_f, W, class_counts, f):
    fz = apply_map(f, z_f)
    N = int(sum(class_counts))
    total = math.fsum(int(class_counts[c]) * sqdist(W[c], fz[i])
                      for i in range(len(z_f)) for c in range(len(W)))
    return total / (2 * len(z_f) * N)


def central_difference(fun, x, h=1e-5):
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(len(x)):
        old = x[i]
        x[i] = old + h
        up = fun(x)
        x[i] = old - h
        down = fun(x)
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(a - b) / scale)


def rel_scalar(a, b):
    scale = max(abs(a), abs(b))
    return 0.0 if scale == 0 else abs(a - b) / scale


def softmax_xent_loops(x, labels, flat, dims, n_act):
    logits = dense_stack(x, flat, dims, n_act)
    total = 0.0
    for row, y in zip(logits, labels):
        m = max(row)
        lse = m + math.log(math.fsum(math.exp(v - m) for v in row))
        total += lse - row[y]
    return total / len(labels)


def adam_reference(p, g, m, v, t, lr, b1, b2, eps, wd, decoupled):
    """Textbook Adam / AdamW step on Python floats."""
    p, m, v = list(p), list(m), list(v)
    for i in range(len(p)):
        gi = g[i] + (0.0 if decoupled else wd * p[i])
        m[i] = b1 * m[i] + (1 - b1) * gi
        v[i] = b2 * v[i] + (1 - b2) * gi * gi
        mhat = m[i] / (1 - b1 ** t)
        vhat = v[i] / (1 - b2 ** t)
        step = mhat / (math.sqrt(vhat) + eps)
        if decoupled:
            step += wd * p[i]
        p[i] -= lr * step
    return np.array(p), np.array(m), np.array(v)


def min_abs_preactivation(x, flat, dims, n_act):
    """Smallest |pre-activation| over the ReLU layers; small values mean a kink is near."""
    h = np.asarray(x, dtype=float)
    off, best = 0, np.inf
    for l in range(n_act):
        din, dout = dims[l], dims[l + 1]
        W = np.asarray(flat[off:off + din * dout]).reshape(dout, din)
        b = np.asarray(flat[off + din * dout:off + din * dout + dout])
        off += din * dout + dout
        a = h @ W.T + b
        best = min(best, float(np.abs(a).min()))
        h = np.maximum(a, 0.0)
    return best
