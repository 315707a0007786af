"""Training objectives with hand-derived gradients.

Every function returns ``(value, gradient)``; gradients are with respect to
the raw network outputs the loss consumes.  Subgradients at kinks are zero:
hinges use ``[x]_+' = 0`` at 0 and ``sign(0) = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# grasp-head channel layout: graspable logits, v_A, v_C, depth, width, score
GP, VA, VC, DEPTH, WIDTH, SCORE = slice(0, 2), slice(2, 5), slice(5, 8), 8, 9, 10
SEM, EMB = slice(0, 2), slice(2, 18)
EMBED_DIM = 16


@dataclass
class LossWeights:
    alpha: float = 0.01
    delta_v: float = 0.5
    delta_d: float = 1.5
    beta1: float = 5.0
    beta2: float = 1.0
    beta3: float = 1.0
    gamma1: float = 100.0
    gamma2: float = 1000.0
    gamma3: float = 10.0
    w1: float = 1.0
    w2: float = 5.0
    # -1 keeps the orthogonality term as printed (-mean|a.c|), +1 penalizes non-orthogonality
    orth_sign: float = -1.0
    rotation_loss: str = "decomposed"

    def __post_init__(self):
        for name in ("alpha", "delta_v", "delta_d", "beta1", "beta2", "beta3", "gamma1", "gamma2", "gamma3",
                     "w1", "w2"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.orth_sign not in (-1.0, 1.0):
            raise ValueError("orth_sign must be -1 or +1")
        if self.rotation_loss not in ("decomposed", "quat"):
            raise ValueError("rotation_loss must be 'decomposed' or 'quat'")


def _log_softmax(logits):
    m = logits.max(axis=1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _softmax(logits):
    return np.exp(_log_softmax(logits))


def loss_sem(logits, labels):
    """Mean two-class softmax cross-entropy."""
    logits = np.asarray(logits, float)
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    if n == 0:
        return 0.0, np.zeros_like(logits)
    lsm = _log_softmax(logits)
    value = -lsm[np.arange(n), labels].mean()
    grad = np.exp(lsm)
    grad[np.arange(n), labels] -= 1.0
    return float(value), grad / n


def loss_gp(logits, labels, w: LossWeights = LossWeights()):
    """Class-weighted cross-entropy over non-ignored points (label -1 is ignored).

    Normalized by the number of non-ignored points, so class weights scale
    per-point losses directly.
    """
    logits = np.asarray(logits, float)
    labels = np.asarray(labels, dtype=np.int64)
    keep = labels >= 0
    if not keep.any():
        raise ValueError("every point is ignored")
    idx = np.nonzero(keep)[0]
    y = labels[idx]
    cw = np.where(y == 1, w.w2, w.w1)
    lsm = _log_softmax(logits[idx])
    n = len(idx)
    value = -(cw * lsm[np.arange(n), y]).sum() / n
    g = np.exp(lsm)
    g[np.arange(n), y] -= 1.0
    grad = np.zeros_like(logits)
    grad[idx] = g * cw[:, None] / n
    return float(value), grad


def loss_coll(logits, labels):
    """Summed binary cross-entropy on the softmax collision-free probability; label -1 skipped."""
    logits = np.asarray(logits, float)
    labels = np.asarray(labels, dtype=np.int64)
    idx = np.nonzero(labels >= 0)[0]
    grad = np.zeros_like(logits)
    if len(idx) == 0:
        return 0.0, grad
    y = labels[idx]
    lsm = _log_softmax(logits[idx])
    value = -lsm[np.arange(len(idx)), y].sum()
    g = np.exp(lsm)
    g[np.arange(len(idx)), y] -= 1.0
    grad[idx] = g
    return float(value), grad


def instance_loss_terms(emb, ids, w: LossWeights = LossWeights()):
    """``(L_var, L_dist, L_reg)`` and the cluster means, without gradients."""
    value, _, terms = loss_ins(emb, ids, w, return_terms=True)
    return terms


def loss_ins(emb, ids, w: LossWeights = LossWeights(), return_terms: bool = False):
    """Discriminative embedding loss ``L_var + L_dist + alpha * L_reg``.

    ``L_dist`` averages over ordered pairs of distinct instances and is
    skipped when there is a single instance.
    """
    emb = np.asarray(emb, float)
    ids = np.asarray(ids)
    if len(emb) == 0:
        raise ValueError("empty embedding batch")
    uniq, inv = np.unique(ids, return_inverse=True)
    nc = len(uniq)
    counts = np.bincount(inv, minlength=nc).astype(float)
    mu = np.zeros((nc, emb.shape[1]))
    np.add.at(mu, inv, emb)
    mu /= counts[:, None]

    # variance term
    d = emb - mu[inv]
    r = np.linalg.norm(d, axis=1)
    h = np.maximum(r - w.delta_v, 0.0)
    l_var = float(((h ** 2) / counts[inv]).sum() / nc)
    g_d = np.zeros_like(emb)
    act = h > 0
    g_d[act] = (2.0 * h[act] / (r[act] * counts[inv][act] * nc))[:, None] * d[act]
    # d = x - mu(x): dL/dx_j = g_j - mean_c(g)
    sum_g = np.zeros_like(mu)
    np.add.at(sum_g, inv, g_d)
    grad = g_d - (sum_g / counts[:, None])[inv]

    g_mu = np.zeros_like(mu)
    l_dist = 0.0
    if nc > 1:
        diff = mu[:, None, :] - mu[None, :, :]
        dist = np.linalg.norm(diff, axis=2)
        hd = np.maximum(2.0 * w.delta_d - dist, 0.0)
        np.fill_diagonal(hd, 0.0)
        norm = nc * (nc - 1)
        l_dist = float((hd ** 2).sum() / norm)
        with np.errstate(invalid="ignore", divide="ignore"):
            coef = np.where(hd > 0, -2.0 * hd / dist, 0.0)
        # each unordered pair appears twice
        g_mu += 2.0 * (coef[:, :, None] * diff).sum(axis=1) / norm

    mnorm = np.linalg.norm(mu, axis=1)
    l_reg = float(mnorm.sum() / nc)
    nz = mnorm > 0
    g_mu[nz] += w.alpha * mu[nz] / (mnorm[nz, None] * nc)

    grad += (g_mu / counts[:, None])[inv]
    value = l_var + l_dist + w.alpha * l_reg
    if return_terms:
        return value, grad, (l_var, l_dist, l_reg, mu)
    return value, grad


def _normalize(p):
    n = np.linalg.norm(p, axis=1, keepdims=True)
    return p / n, n


def _normalize_backward(u, n, g):
    return (g - np.sum(g * u, axis=1, keepdims=True) * u) / n


def rotation_loss_terms(pred_va, pred_vc, true_va, true_vc, orth_sign: float = -1.0):
    """``(L_off, L_cos, L_orth)`` summed over the approach and closing terms."""
    _, _, terms = loss_rot(pred_va, pred_vc, true_va, true_vc, LossWeights(orth_sign=orth_sign), True)
    return terms


def loss_rot(pred_va, pred_vc, true_va, true_vc, w: LossWeights = LossWeights(), return_terms: bool = False):
    """``beta1 L_off + beta2 L_cos + beta3 L_orth`` on normalized predictions.

    ``L_off`` and ``L_cos`` add the approach and closing contributions, so an
    exact orthonormal match gives ``L_cos = -2``.  ``L_orth = orth_sign *
    mean |a.c|``.  Returns gradients for the two raw prediction arrays.
    """
    pa, pc = np.asarray(pred_va, float), np.asarray(pred_vc, float)
    ta, tc = np.asarray(true_va, float), np.asarray(true_vc, float)
    g_count = len(pa)
    if g_count == 0:
        z = np.zeros((0, 3))
        return (0.0, (z, z), (0.0, 0.0, 0.0)) if return_terms else (0.0, (z, z))
    ua, na = _normalize(pa)
    uc, ncn = _normalize(pc)

    l_off = 0.0
    l_cos = 0.0
    grads = []
    for u, t in ((ua, ta), (uc, tc)):
        diff = u - t
        dn = np.linalg.norm(diff, axis=1, keepdims=True)
        l_off += dn.sum() / g_count
        dot = np.sum(u * t, axis=1, keepdims=True)
        l_cos -= np.abs(dot).sum() / g_count
        g_off = np.where(dn > 0, diff / np.where(dn > 0, dn, 1.0), 0.0) / g_count
        g_cos = -np.sign(dot) * t / g_count
        grads.append(w.beta1 * g_off + w.beta2 * g_cos)
    dot_ac = np.sum(ua * uc, axis=1, keepdims=True)
    l_orth = w.orth_sign * np.abs(dot_ac).sum() / g_count
    s = w.beta3 * w.orth_sign * np.sign(dot_ac) / g_count
    grads[0] = grads[0] + s * uc
    grads[1] = grads[1] + s * ua

    value = w.beta1 * l_off + w.beta2 * l_cos + w.beta3 * l_orth
    g_a = _normalize_backward(ua, na, grads[0])
    g_c = _normalize_backward(uc, ncn, grads[1])
    if return_terms:
        return float(value), (g_a, g_c), (float(l_off), float(l_cos), float(l_orth))
    return float(value), (g_a, g_c)


def loss_regression(pred, true, w: LossWeights = LossWeights()):
    """``gamma1 MSE(width) + gamma2 MSE(depth) + gamma3 MSE(score)``; columns (width, depth, score)."""
    pred = np.asarray(pred, float)
    true = np.asarray(true, float)
    if len(pred) == 0:
        return 0.0, np.zeros_like(pred)
    gam = np.array([w.gamma1, w.gamma2, w.gamma3])
    diff = pred - true
    value = float((gam * (diff ** 2).mean(axis=0)).sum())
    grad = 2.0 * gam * diff / len(pred)
    return value, grad


def rotation_angles(pred_r, true_r, clamp: float = 1e-7):
    cos = 0.5 * (np.einsum("nij,nij->n", true_r, pred_r) - 1.0)
    return np.arccos(np.clip(cos, -1.0 + clamp, 1.0 - clamp))


def loss_quat_baseline(pred_r, true_r, clamp: float = 1e-7):
    """Mean relative rotation angle ``arccos((trace(R R_hat^T) - 1) / 2)``; gradient w.r.t. ``pred_r``."""
    pred_r = np.asarray(pred_r, float)
    true_r = np.asarray(true_r, float)
    n = len(pred_r)
    if n == 0:
        return 0.0, np.zeros_like(pred_r)
    cos = 0.5 * (np.einsum("nij,nij->n", true_r, pred_r) - 1.0)
    inside = (cos > -1.0 + clamp) & (cos < 1.0 - clamp)
    c = np.clip(cos, -1.0 + clamp, 1.0 - clamp)
    value = float(np.arccos(c).mean())
    coef = np.where(inside, -0.5 / np.sqrt(1.0 - c * c), 0.0) / n
    return value, coef[:, None, None] * true_r


def gram_schmidt(p, q):
    """Batched ``[a, c, a x c]`` from raw approach ``p`` and closing ``q`` predictions."""
    a, na = _normalize(p)
    cp = q - np.sum(a * q, axis=1, keepdims=True) * a
    c, ncp = _normalize(cp)
    return np.stack([a, c, np.cross(a, c)], axis=2), (a, na, c, ncp, q)


def gram_schmidt_backward(cache, g_r):
    """Gradients w.r.t. ``(p, q)`` given ``dL/dR`` of shape ``(n, 3, 3)``."""
    a, na, c, ncp, q = cache
    g_a = g_r[:, :, 0].copy()
    g_c = g_r[:, :, 1].copy()
    g_b = g_r[:, :, 2]
    # b = a x c
    g_a += np.cross(c, g_b)
    g_c += np.cross(g_b, a)
    # c = cp / |cp|, cp = q - (a.q) a
    g_cp = _normalize_backward(c, ncp, g_c)
    aq = np.sum(a * q, axis=1, keepdims=True)
    g_q = g_cp - np.sum(g_cp * a, axis=1, keepdims=True) * a
    g_a += -aq * g_cp - np.sum(g_cp * a, axis=1, keepdims=True) * q
    g_p = _normalize_backward(a, na, g_a)
    return g_p, g_q


@dataclass
class Targets:
    """Per-point supervision for one cloud (``-1`` marks unsupervised entries)."""

    semantic: np.ndarray
    instance_id: np.ndarray
    graspable: np.ndarray
    v_A: np.ndarray
    v_C: np.ndarray
    wds: np.ndarray
    collision: np.ndarray
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_labels(cls, cloud, labels):
        t = labels.point_targets()
        return cls(cloud.semantic.astype(np.int64), cloud.instance_id.astype(np.int64),
                   labels.graspable.astype(np.int64), t["v_A"], t["v_C"], t["wds"],
                   labels.point_collision().astype(np.int64))


@dataclass
class HeadOutputs:
    seg: np.ndarray
    grasp: np.ndarray
    coll: np.ndarray

    def __post_init__(self):
        n = len(self.seg)
        if self.seg.shape != (n, 2 + EMBED_DIM) or self.grasp.shape != (n, 11) or self.coll.shape != (n, 2):
            raise ValueError(f"bad head shapes {self.seg.shape}, {self.grasp.shape}, {self.coll.shape}")


def loss_total(out: HeadOutputs, tgt: Targets, w: LossWeights = LossWeights(), head_weights=(1.0, 1.0, 1.0)):
    """Joint objective ``L_seg + L_grasp + L_coll``.

    Returns ``(value, HeadOutputs of gradients, components)``; ``head_weights``
    scales the (segmentation, grasp, collision) groups, 0 detaches a head.
    """
    hs, hg, hc = head_weights
    comp = {}
    g_seg = np.zeros_like(out.seg)
    g_grasp = np.zeros_like(out.grasp)
    g_coll = np.zeros_like(out.coll)

    if hs:
        v, g = loss_sem(out.seg[:, SEM], tgt.semantic)
        comp["sem"] = v
        g_seg[:, SEM] = g
        fg = np.nonzero(tgt.instance_id > 0)[0]
        if len(fg):
            v, g = loss_ins(out.seg[fg, EMB], tgt.instance_id[fg], w)
            comp["ins"] = v
            g_seg[fg, EMB] = g
    if hg:
        if (tgt.graspable >= 0).any():
            v, g = loss_gp(out.grasp[:, GP], tgt.graspable, w)
            comp["gp"] = v
            g_grasp[:, GP] = g
        pg = np.nonzero(tgt.graspable == 1)[0]
        if len(pg):
            if w.rotation_loss == "quat":
                rot, cache = gram_schmidt(out.grasp[pg, VA], out.grasp[pg, VC])
                true_r = np.stack([tgt.v_A[pg], tgt.v_C[pg], np.cross(tgt.v_A[pg], tgt.v_C[pg])], axis=2)
                v, g_r = loss_quat_baseline(rot, true_r)
                ga, gc = gram_schmidt_backward(cache, g_r)
            else:
                v, (ga, gc) = loss_rot(out.grasp[pg, VA], out.grasp[pg, VC], tgt.v_A[pg], tgt.v_C[pg], w)
            comp["rot"] = v
            g_grasp[pg, VA] = ga
            g_grasp[pg, VC] = gc
            pred = out.grasp[pg][:, [WIDTH, DEPTH, SCORE]]
            v, g = loss_regression(pred, tgt.wds[pg], w)
            comp["reg"] = v
            g_grasp[pg, WIDTH] = g[:, 0]
            g_grasp[pg, DEPTH] = g[:, 1]
            g_grasp[pg, SCORE] = g[:, 2]
    if hc:
        v, g = loss_coll(out.coll, tgt.collision)
        comp["coll"] = v
        g_coll[:] = g

    value = 0.0
    for key in ("sem", "ins", "gp", "rot", "reg", "coll"):
        if key in comp:
            scale = hs if key in ("sem", "ins") else hg if key in ("gp", "rot", "reg") else hc
            value += scale * comp[key]
    g_seg *= hs
    g_grasp *= hg
    g_coll *= hc
    return value, HeadOutputs(g_seg, g_grasp, g_coll), comp
