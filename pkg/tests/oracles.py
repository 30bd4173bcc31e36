"""Slow reference implementations used only by the tests.

Each oracle is written with explicit Python loops or a different algebraic
route than the library, so agreement is evidence rather than tautology.
"""

import itertools
import math

import numpy as np


def matmul_loops(a, b):
    m, k = len(a), len(a[0])
    n = len(b[0])
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += a[i][t] * b[t][j]
            out[i, j] = acc
    return out


def frobenius_loops(x):
    return sum(float(v) * float(v) for v in np.asarray(x).ravel())


def per_sample_grad_loops(a, g):
    """``(B, d, p)`` per-sample weight gradients, one outer product at a time."""
    B, T, d = a.shape
    p = g.shape[-1]
    out = np.zeros((B, d, p))
    for i in range(B):
        for t in range(T):
            for u in range(d):
                for v in range(p):
                    out[i, u, v] += a[i, t, u] * g[i, t, v]
    return out


def act(name, s):
    if name == "identity":
        return s
    if name == "relu":
        return np.maximum(s, 0.0)
    return np.tanh(s)


def per_sample_loss(loss, y, t):
    if loss == "mean-squared-error":
        return 0.5 * ((y - t) ** 2).reshape(len(y), -1).sum(axis=1)
    if loss == "per-sample-sum":
        return y.reshape(len(y), -1).sum(axis=1)
    m = y.max(axis=-1, keepdims=True)
    logp = y - m - np.log(np.exp(y - m).sum(axis=-1, keepdims=True))
    picked = np.take_along_axis(logp, np.asarray(t)[..., None], axis=-1)[..., 0]
    return -picked.sum(axis=1)


def forward_losses(arch, weights, X, Y):
    """Per-sample losses by direct re-evaluation of the network."""
    h = np.asarray(X, dtype=float)
    for spec, W in zip(arch.layers, weights):
        h = act(spec.activation, h @ W)
    return per_sample_loss(arch.loss, h, Y)


def finite_diff_weights(arch, weights, X, Y, h=1e-5):
    """Central differences of the total loss for every weight entry."""
    grads = []
    for li, W in enumerate(weights):
        G = np.zeros_like(W)
        for idx in np.ndindex(W.shape):
            ws = [w.copy() for w in weights]
            ws[li][idx] += h
            up = forward_losses(arch, ws, X, Y).sum()
            ws[li][idx] -= 2 * h
            down = forward_losses(arch, ws, X, Y).sum()
            G[idx] = (up - down) / (2 * h)
        grads.append(G)
    return grads


def materialize_clip_sum(arch, weights, X, Y, groups, function, gamma, R):
    """Private-gradient signal (no noise) from explicit flattened per-sample gradients.

    Per-sample gradients come from finite-difference-free backprop on one
    sample at a time, written independently of the library's engine.
    """
    B = len(X)
    per = [single_sample_grads(arch, weights, X[i:i + 1],
                               None if Y is None else Y[i:i + 1]) for i in range(B)]
    out = [np.zeros_like(w) for w in weights]
    for i in range(B):
        for m, g in enumerate(groups):
            norm = math.sqrt(sum(float(np.sum(per[i][l] ** 2)) for l in g))
            if function == "auto":
                c = R[m] / (norm + gamma)
            else:
                c = 1.0 if norm == 0 else min(1.0, R[m] / norm)
            for l in g:
                out[l] += c * per[i][l]
    return out


def single_sample_grads(arch, weights, x, y):
    acts, pre = [], []
    h = np.asarray(x, dtype=float)[0]
    for spec, W in zip(arch.layers, weights):
        acts.append(h)
        s = h @ W
        pre.append(s)
        h = act(spec.activation, s)
    if arch.loss == "mean-squared-error":
        dy = h - y[0]
    elif arch.loss == "per-sample-sum":
        dy = np.ones_like(h)
    else:
        e = np.exp(h - h.max(axis=-1, keepdims=True))
        dy = e / e.sum(axis=-1, keepdims=True)
        dy[np.arange(len(h)), y[0]] -= 1.0
    grads = [None] * len(weights)
    up = dy
    for l in reversed(range(len(weights))):
        name = arch.layers[l].activation
        s = pre[l]
        if name == "relu":
            ds = up * (s > 0)
        elif name == "tanh":
            ds = up * (1 - np.tanh(s) ** 2)
        else:
            ds = up
        grads[l] = acts[l].T @ ds
        up = ds @ weights[l].T
    return grads


def contiguous_partitions(L):
    """Every composition of ``L`` layers, via recursion rather than bit masks."""
    if L == 0:
        yield []
        return
    for first in range(1, L + 1):
        for rest in contiguous_partitions(L - first):
            yield [tuple(range(first))] + [tuple(x + first for x in g) for g in rest]


def simulated_peaks(arch, groups, B):
    """Replay the book-keeping schedule on float counts, group by group."""
    L = arch.num_layers
    live = {("a", l): B * arch.layers[l].seq_len * arch.layers[l].in_dim for l in range(L)}
    owner = {l: gi for gi, g in enumerate(groups) for l in g}
    peaks = [0] * len(groups)
    current = 0
    for l in reversed(range(L)):
        live[("ds", l)] = B * arch.layers[l].seq_len * arch.layers[l].out_dim
        gi = owner[l]
        peaks[gi] = max(peaks[gi], sum(live.values()))
        if l == min(groups[gi]):
            for r in groups[gi]:
                del live[("a", r)]
                del live[("ds", r)]
        current = gi
    assert not live and current == 0
    return peaks


def bell_brute(n):
    """Set partitions of ``n`` items by restricted growth strings."""
    if n == 0:
        return 1
    count = 0
    for rgs in itertools.product(range(n), repeat=n - 1):
        seq = (0,) + rgs
        if all(seq[i] <= max(seq[:i]) + 1 for i in range(1, n)):
            count += 1
    return count


def epsilon_grid_oracle(sigma, steps, delta, alphas):
    best = math.inf
    for a in alphas:
        best = min(best, steps * a / (2 * sigma * sigma) + math.log(1 / delta) / (a - 1))
    return best
