"""Independent reference implementations used as test oracles.

Everything here is plain Python or plain numpy with no autodiff, written
from the textbook definitions rather than from the library code.
"""

import math
from itertools import product

import numpy as np


def sigmoid(z):
    return 1.0 / (1.0 + math.exp(-z))


def lstm_step_scalar(x, h, c, w_ih, w_hh, bias):
    """One LSTM step with explicit loops; gate blocks ordered i, f, g, o."""
    n = len(h)
    z = [bias[j] + sum(x[k] * w_ih[k][j] for k in range(len(x)))
         + sum(h[k] * w_hh[k][j] for k in range(n)) for j in range(4 * n)]
    h_new, c_new = [], []
    for j in range(n):
        i = sigmoid(z[j])
        f = sigmoid(z[n + j])
        g = math.tanh(z[2 * n + j])
        o = sigmoid(z[3 * n + j])
        cj = f * c[j] + i * g
        c_new.append(cj)
        h_new.append(o * math.tanh(cj))
    return h_new, c_new


def lstm_scan_scalar(xs, w_ih, w_hh, bias, reverse=False):
    n = len(bias) // 4
    h, c = [0.0] * n, [0.0] * n
    out = [None] * len(xs)
    order = range(len(xs) - 1, -1, -1) if reverse else range(len(xs))
    for t in order:
        h, c = lstm_step_scalar(xs[t], h, c, w_ih, w_hh, bias)
        out[t] = h
    return out


def blstm_scalar(xs, fwd, bwd):
    """``fwd``/``bwd`` are (w_ih, w_hh, bias) nested lists."""
    f = lstm_scan_scalar(xs, *fwd)
    b = lstm_scan_scalar(xs, *bwd, reverse=True)
    return [fi + bi for fi, bi in zip(f, b)]


def attention_dense(x, wq, bq, wk, bk, wv, bv, wo, bo, num_heads, keep=None):
    """Multi-head attention written out position by position."""
    s, h = x.shape
    d = h // num_heads
    q, k, v = x @ wq + bq, x @ wk + bk, x @ wv + bv
    ctx = np.zeros((s, h))
    for head in range(num_heads):
        cols = slice(head * d, (head + 1) * d)
        for i in range(s):
            scores = []
            for j in range(s):
                if keep is not None and not keep[j]:
                    scores.append(None)
                else:
                    scores.append(float(q[i, cols] @ k[j, cols]) / math.sqrt(d))
            m = max(sc for sc in scores if sc is not None)
            w = [0.0 if sc is None else math.exp(sc - m) for sc in scores]
            tot = sum(w)
            for j in range(s):
                ctx[i, cols] += (w[j] / tot) * v[j, cols]
    return ctx @ wo + bo


def cross_entropy_direct(logits, label):
    m = max(logits)
    return -(logits[label] - m - math.log(sum(math.exp(z - m) for z in logits)))


def all_segmentations(word, pieces, continuation="##"):
    """Every split of ``word`` into in-vocabulary pieces, as tuples of pieces."""
    out = []
    n = len(word)
    for cuts in product([False, True], repeat=max(0, n - 1)):
        bounds = [0] + [i + 1 for i, cut in enumerate(cuts) if cut] + [n]
        segs = []
        for j, (a, b) in enumerate(zip(bounds, bounds[1:])):
            segs.append(word[a:b] if j == 0 else continuation + word[a:b])
        if all(p in pieces for p in segs):
            out.append(tuple(segs))
    return out
