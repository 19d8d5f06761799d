"""Independent reference implementations used only by the tests.

Everything here is deliberately written the slow, obvious way -- scalar
loops, brute-force search, textbook formulas -- so the package code is
checked against a second, structurally different route to the same
answer.  Nothing in src/ imports this module.
"""

import math

import numpy as np


# ---------------------------------------------------------------------------
# Convolution
# ---------------------------------------------------------------------------

def conv3d_loops(x, w, b, stride=1):
    """Direct 7-loop 3-D cross-correlation with same padding."""
    n, ci, d, h, wd = x.shape
    co, _, k, _, _ = w.shape
    pad = (k - 1) // 2
    od = (d - 1) // stride + 1
    oh = (h - 1) // stride + 1
    ow = (wd - 1) // stride + 1
    out = np.zeros((n, co, od, oh, ow), dtype=np.float64)
    for ni in range(n):
        for oc in range(co):
            for zi in range(od):
                for yi in range(oh):
                    for xi in range(ow):
                        acc = float(b[oc])
                        for ic in range(ci):
                            for dz in range(k):
                                for dy in range(k):
                                    for dx in range(k):
                                        z = zi * stride + dz - pad
                                        y = yi * stride + dy - pad
                                        xx = xi * stride + dx - pad
                                        if 0 <= z < d and 0 <= y < h and 0 <= xx < wd:
                                            acc += float(x[ni, ic, z, y, xx]) * \
                                                float(w[oc, ic, dz, dy, dx])
                        out[ni, oc, zi, yi, xi] = acc
    return out


# ---------------------------------------------------------------------------
# Connected components / boundaries / distances
# ---------------------------------------------------------------------------

_NEIGHBORS6 = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]


def flood_fill_components(mask):
    """Label 6-connected components with BFS; returns (labels, count)."""
    mask = np.asarray(mask, dtype=bool)
    labels = np.zeros(mask.shape, dtype=np.int64)
    nz, ny, nx = mask.shape
    current = 0
    for z0 in range(nz):
        for y0 in range(ny):
            for x0 in range(nx):
                if not mask[z0, y0, x0] or labels[z0, y0, x0]:
                    continue
                current += 1
                queue = [(z0, y0, x0)]
                labels[z0, y0, x0] = current
                while queue:
                    z, y, x = queue.pop()
                    for dz, dy, dx in _NEIGHBORS6:
                        zz, yy, xx = z + dz, y + dy, x + dx
                        if 0 <= zz < nz and 0 <= yy < ny and 0 <= xx < nx \
                                and mask[zz, yy, xx] and not labels[zz, yy, xx]:
                            labels[zz, yy, xx] = current
                            queue.append((zz, yy, xx))
    return labels, current


def boundary_voxels_loop(mask):
    """Set of (x, y, z) tuples: foreground voxels with a 6-neighbor that is
    background or outside the grid."""
    mask = np.asarray(mask, dtype=bool)
    nz, ny, nx = mask.shape
    out = set()
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                if not mask[z, y, x]:
                    continue
                for dz, dy, dx in _NEIGHBORS6:
                    zz, yy, xx = z + dz, y + dy, x + dx
                    if not (0 <= zz < nz and 0 <= yy < ny and 0 <= xx < nx) \
                            or not mask[zz, yy, xx]:
                        out.add((x, y, z))
                        break
    return out


def allpairs_boundary_distances(a_xyz, b_xyz, spacing):
    """(average, max) symmetric boundary distance by brute-force all pairs."""
    sx, sy, sz = spacing
    a = [(x * sx, y * sy, z * sz) for x, y, z in a_xyz]
    b = [(x * sx, y * sy, z * sz) for x, y, z in b_xyz]

    def nearest(p, pts):
        return min(math.dist(p, q) for q in pts)

    d_ab = [nearest(p, b) for p in a]
    d_ba = [nearest(q, a) for q in b]
    avg = (sum(d_ab) + sum(d_ba)) / (len(a) + len(b))
    return avg, max(max(d_ab), max(d_ba))


def overlap_counts_loop(a, b):
    """(|A|, |B|, |A&B|) by scalar iteration."""
    a = np.asarray(a, dtype=bool).reshape(-1)
    b = np.asarray(b, dtype=bool).reshape(-1)
    na = nb = ni = 0
    for va, vb in zip(a.tolist(), b.tolist()):
        na += va
        nb += vb
        ni += va and vb
    return na, nb, ni


# ---------------------------------------------------------------------------
# Losses (scalar-loop formulas)
# ---------------------------------------------------------------------------

def _sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def cel_loop(p, y, eps=1e-7):
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    total = 0.0
    for pi, yi in zip(p.tolist(), y.tolist()):
        total += yi * math.log(pi + eps) + (1.0 - yi) * math.log(1.0 - pi + eps)
    return -total / len(p)


def dice_loss_loop(p, y, eps=1e-5):
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    inter = sp = sy = 0.0
    for pi, yi in zip(p.tolist(), y.tolist()):
        inter += pi * yi
        sp += pi
        sy += yi
    return 1.0 - (2.0 * inter + eps) / (sp + sy + eps)


def overlap_loss_loop(p, reduction="mean"):
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    total = 0.0
    for pi in p.tolist():
        total += pi * (1.0 - pi)
    return total / len(p) if reduction == "mean" else total


def focal_positive_loop(logits, tm, y, training, tau=0.05, literal_gate=False,
                        eps=1e-5, big=40.0):
    logits = np.asarray(logits, dtype=np.float64).reshape(-1)
    tm = np.asarray(tm, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    inter = sm = sy = 0.0
    for li, ti, yi in zip(logits.tolist(), tm.tolist(), y.tolist()):
        pi = _sigmoid(li)
        gi = _sigmoid((pi - ti) / tau) if training else float(pi > ti)
        mi = _sigmoid(gi * pi - big * (1.0 - gi)) if literal_gate else pi * gi
        inter += mi * yi
        sm += mi
        sy += yi
    return 1.0 - (2.0 * inter + eps) / (sm + sy + eps)


# ---------------------------------------------------------------------------
# Optimizer / normalization
# ---------------------------------------------------------------------------

def adam_scalar_steps(p0, grads, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """Trajectory of one scalar parameter under Adam; returns values after
    each step."""
    p, m, v = float(p0), 0.0, 0.0
    out = []
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        p -= lr * m_hat / (math.sqrt(v_hat) + eps)
        out.append(p)
    return out


def zscore_loop(values):
    values = [float(v) for v in np.asarray(values, dtype=np.float64).reshape(-1)]
    n = len(values)
    mean = sum(values) / n
    var = sum((v - mean) ** 2 for v in values) / n
    std = math.sqrt(var)
    if std < 1e-12:
        return [0.0] * n
    return [(v - mean) / std for v in values]
