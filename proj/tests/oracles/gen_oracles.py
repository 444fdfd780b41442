"""Independent reference values for the unit tests.

Run with `python3 tests/oracles/gen_oracles.py`; the printed numbers are
pasted into the C++ suites. Only numpy and mpmath are used.
"""
import math

import mpmath
import numpy as np

mpmath.mp.dps = 40


def softmax_123():
    e = [mpmath.e ** v for v in (1, 2, 3)]
    s = sum(e)
    return [float(v / s) for v in e]


def round_half_away(x):
    return math.floor(abs(x) + 0.5) * (1 if x >= 0 else -1)


def log_fake_quant(x, s, c, a, bits):
    qmax = 2 ** bits - 1
    u = (x + c) / s
    if not u > 0:
        k = qmax
    else:
        k = min(max(round_half_away(-math.log2(u) / math.log2(a)), 0), qmax)
    return s * a ** (-k) - c


def adaptive_base_uniform():
    samples = [(i + 1) / 1000.0 for i in range(1000)]
    grid = sorted([1.0 + 0.05 * k for k in range(1, 21)] + [math.sqrt(2.0)])
    best, best_err = None, math.inf
    lo, hi = min(samples), max(samples)
    c = -lo + 1e-8 if lo < 0 else 0.0
    s = hi + c
    for a in grid:
        err = sum((x - log_fake_quant(x, s, c, a, 4)) ** 2 for x in samples) / len(samples)
        if err < best_err or (err == best_err and a > best):
            best, best_err = a, err
    return best, best_err


def crl_example():
    s = np.array([1.0] * 9 + [10.0])
    mu, sigma = s.mean(), s.std()
    hi = mu + 2 * sigma
    return mu, sigma, hi, 10.0 / hi


def gelu(x):
    return 0.5 * x * (1.0 + math.erf(x / math.sqrt(2.0)))


def positive_subset(a, w, r):
    """a: [k], w: [k x n], r: [n] -> relevance over a."""
    out = np.zeros(len(a))
    dropped = 0.0
    for j in range(w.shape[1]):
        z = a * w[:, j]
        zp = np.where(z > 0, z, 0.0)
        if zp.sum() == 0:
            dropped += r[j]
            continue
        out += r[j] * zp / zp.sum()
    return out, dropped


def two_layer_lrp():
    x = np.array([0.5, -1.0, 2.0])
    w1 = np.array([[1.0, -0.5, 0.25, -2.0], [0.5, 1.5, -1.0, -0.5], [-0.25, 0.75, 0.5, -1.0]])
    w2 = np.array([[1.0, -1.0], [-0.5, 2.0], [0.75, 0.25], [1.5, -0.5]])
    h = np.array([gelu(v) for v in x @ w1])
    z = h @ w2
    cls = int(np.argmax(z))
    r_out = np.zeros(2)
    r_out[cls] = 1.0
    r_h, d2 = positive_subset(h, w2, r_out)
    r_x, d1 = positive_subset(x, w1, r_h)
    return cls, z, h, r_h, r_x, d1, d2


def relevance_map_case():
    rng = np.random.default_rng(7)
    g = rng.normal(size=(3, 2, 4)).round(3)
    r = rng.normal(size=(3, 2, 4)).round(3)
    s = np.maximum(g * r, 0.0).mean(axis=0)
    return g, r, s


def fmt(v):
    return repr(float(v))


if __name__ == "__main__":
    print("softmax([1,2,3]) =", [fmt(v) for v in softmax_123()])
    print("adaptive base uniform(0,1] b=4 =", adaptive_base_uniform())
    print("log fake quant 0.3 a=2 s=1 b=4 =", log_fake_quant(0.3, 1.0, 0.0, 2.0, 4))
    print("crl example mu, sigma, hi, v1 =", [fmt(v) for v in crl_example()])
    cls, z, h, r_h, r_x, d1, d2 = two_layer_lrp()
    print("lrp cls", cls, "logits", [fmt(v) for v in z])
    print("lrp h", [fmt(v) for v in h])
    print("lrp r_h", [fmt(v) for v in r_h], "dropped", fmt(d2))
    print("lrp r_x", [fmt(v) for v in r_x], "dropped", fmt(d1))
    g, r, s = relevance_map_case()
    print("relmap g", g.flatten().tolist())
    print("relmap r", r.flatten().tolist())
    print("relmap s", [fmt(v) for v in s.flatten()])
    print("registry D=16 Df=32 N=17: fc1 params", 16 * 32 + 32, "qkv macs", 17 * 16 * 48)
