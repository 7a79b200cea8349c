"""Scratch prototype: FD-check every loss gradient before freezing tests."""
import sys

sys.path.insert(0, "src")
import numpy as np

import importlib
import spklearn.sampling as sampling
import spklearn.losses as L
importlib.reload(L)

rng = np.random.default_rng(0)


def fd(fun, arr, h=1e-5):
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        old = arr[idx]
        arr[idx] = old + h
        fp = fun()
        arr[idx] = old - h
        fm = fun()
        arr[idx] = old
        g[idx] = (fp - fm) / (2 * h)
        it.iternext()
    return g


def rel(a, b):
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)
    return np.max(np.abs(a - b) / denom)


def make_batch(n, m, d, seed):
    r = np.random.default_rng(seed)
    return L.EmbeddingBatch(r.standard_normal((n, m, d)), tuple(f"s{i}" for i in range(n)))


def check(name, result, batch, fun, extra=()):
    errs = {"emb": rel(result.grad_embeddings, fd(fun, batch.embeddings))}
    for label, arr, g in extra:
        errs[label] = rel(g, fd(fun, arr))
    print(f"{name:24s}", {k: f"{v:.2e}" for k, v in errs.items()})
    assert max(errs.values()) < 1e-5, name


# softmax
b = make_batch(4, 1, 8, 1)
head = L.ClassifierHead.initialize(5, 8, rng)
y = rng.integers(0, 5, size=4)
res = L.softmax_loss(b, y, head)
check("softmax", res, b, lambda: L.softmax_loss(b, y, head).loss,
      [("W", head.weights, res.grad_weights), ("b", head.bias, res.grad_bias)])

# nsl
res = L.nsl_loss(b, y, head)
check("nsl", res, b, lambda: L.nsl_loss(b, y, head).loss,
      [("W", head.weights, res.grad_weights)])

# am
for (m, s) in [(0.1, 15.0), (0.4, 50.0)]:
    cfg = L.MarginConfig(m, s)
    res = L.am_softmax_loss(b, y, head, cfg)
    check(f"am m={m} s={s}", res, b, lambda: L.am_softmax_loss(b, y, head, cfg).loss,
          [("W", head.weights, res.grad_weights)])

# aam
for (m, s) in [(0.1, 15.0), (0.3, 30.0)]:
    cfg = L.MarginConfig(m, s)
    res = L.aam_softmax_loss(b, y, head, cfg)
    check(f"aam m={m} s={s}", res, b, lambda: L.aam_softmax_loss(b, y, head, cfg).loss,
          [("W", head.weights, res.grad_weights)])

# triplet (hardest, away from hinge kinks checked by rerunning seeds)
bt = make_batch(6, 2, 8, 3)
pol = sampling.MiningPolicy(mode="hardest")
res = L.triplet_loss(bt, 0.3, pol)
check("triplet hardest", res, bt, lambda: L.triplet_loss(bt, 0.3, pol).loss)
pol2 = sampling.MiningPolicy(mode="random")
res = L.triplet_loss(bt, 0.3, pol2, epoch=0, seed=7)
check("triplet random", res, bt, lambda: L.triplet_loss(bt, 0.3, pol2, epoch=0, seed=7).loss)

# prototypical
bp = make_batch(5, 3, 6, 4)
res = L.prototypical_loss(bp)
check("prototypical", res, bp, lambda: L.prototypical_loss(bp).loss)

# angular prototypical
ap = L.AffineSimilarityParams(w=7.0, b=-3.0)
res = L.angular_prototypical_loss(bp, ap)


def ap_loss():
    return L.angular_prototypical_loss(bp, ap).loss


gw = fd_scalar = None
h = 1e-5
ap.w += h; fp = ap_loss(); ap.w -= 2 * h; fm = ap_loss(); ap.w += h
fd_w = (fp - fm) / (2 * h)
ap.b += h; fp = ap_loss(); ap.b -= 2 * h; fm = ap_loss(); ap.b += h
fd_b = (fp - fm) / (2 * h)
print("angular proto           ",
      {"emb": f"{rel(res.grad_embeddings, fd(ap_loss, bp.embeddings)):.2e}",
       "w": f"{rel(np.array(res.grad_w), np.array(fd_w)):.2e}",
       "b": f"{abs(res.grad_b - fd_b):.2e} (abs)"})
assert rel(res.grad_embeddings, fd(ap_loss, bp.embeddings)) < 1e-5
assert rel(np.array(res.grad_w), np.array(fd_w)) < 1e-5
assert abs(res.grad_b - fd_b) < 1e-6

# ge2e
bg = make_batch(4, 3, 6, 5)
gp = L.AffineSimilarityParams(w=5.0, b=-1.0)
res = L.ge2e_loss(bg, gp)


def g_loss():
    return L.ge2e_loss(bg, gp).loss


gp.w += h; fp = g_loss(); gp.w -= 2 * h; fm = g_loss(); gp.w += h
fd_w = (fp - fm) / (2 * h)
gp.b += h; fp = g_loss(); gp.b -= 2 * h; fm = g_loss(); gp.b += h
fd_b = (fp - fm) / (2 * h)
print("ge2e                    ",
      {"emb": f"{rel(res.grad_embeddings, fd(g_loss, bg.embeddings)):.2e}",
       "w": f"{rel(np.array(res.grad_w), np.array(fd_w)):.2e}",
       "b": f"{abs(res.grad_b - fd_b):.2e} (abs)"})
assert rel(res.grad_embeddings, fd(g_loss, bg.embeddings)) < 1e-5
assert rel(np.array(res.grad_w), np.array(fd_w)) < 1e-5
assert abs(res.grad_b - fd_b) < 1e-6

# reductions
for seed in range(5):
    bb = make_batch(4, 1, 8, 100 + seed)
    yy = np.random.default_rng(seed).integers(0, 5, size=4)
    v_nsl = L.nsl_loss(bb, yy, head).loss
    v_am = L.am_softmax_loss(bb, yy, head, L.MarginConfig(0.0, 1.0)).loss
    v_aam = L.aam_softmax_loss(bb, yy, head, L.MarginConfig(0.0, 23.0)).loss
    v_am2 = L.am_softmax_loss(bb, yy, head, L.MarginConfig(0.0, 23.0)).loss
    assert v_nsl == v_am, (v_nsl, v_am)
    assert v_aam == v_am2, (v_aam, v_am2)
print("reductions exact: OK")
print("ALL GRADIENT PROTOTYPE CHECKS PASSED")
