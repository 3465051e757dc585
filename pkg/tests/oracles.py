"""Brute-force reference implementations used to check the fast code paths.

These deliberately use explicit per-pixel loops over numpy arrays and share
no code with the package.
"""
import math

import numpy as np


def erode_bf(img):
    h, w = img.shape
    out = np.empty_like(img)
    for i in range(h):
        for j in range(w):
            vals = [img[i, j]]
            for di, dj in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                a, b = i + di, j + dj
                if 0 <= a < h and 0 <= b < w:
                    vals.append(img[a, b])
            out[i, j] = min(vals)
    return out


def dilate_bf(img):
    h, w = img.shape
    out = np.empty_like(img)
    for i in range(h):
        for j in range(w):
            out[i, j] = img[max(i - 1, 0):i + 2, max(j - 1, 0):j + 2].max()
    return out


def relu(x):
    return np.maximum(x, 0.0)


def skeleton_bf(img, iterations):
    img = np.asarray(img, dtype=np.float64)
    skel = relu(img - dilate_bf(erode_bf(img)))
    for _ in range(iterations):
        img = erode_bf(img)
        delta = relu(img - dilate_bf(erode_bf(img)))
        skel = skel + relu(delta - skel * delta)
    return skel


def cldice_bf(pred, target, iterations, smooth):
    sp = skeleton_bf(pred, iterations)
    st = skeleton_bf(target, iterations)
    tprec = ((sp * target).sum() + smooth) / (sp.sum() + smooth)
    tsens = ((st * pred).sum() + smooth) / (st.sum() + smooth)
    return 1 - 2 * tprec * tsens / (tprec + tsens)


def dice_count_bf(pred, gt, unknown):
    inter = p = g = 0
    for a, b, u in zip(np.ravel(pred), np.ravel(gt), np.ravel(unknown)):
        if u:
            continue
        p += bool(a)
        g += bool(b)
        inter += bool(a) and bool(b)
    return 1.0 if p + g == 0 else 2.0 * inter / (p + g)


def pearson_bf(x, y):
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def central_difference(f, x, h):
    """Central finite-difference gradient of scalar f at float64 array x."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for k in range(flat.size):
        old = flat[k]
        flat[k] = old + h
        fp = f(x)
        flat[k] = old - h
        fm = f(x)
        flat[k] = old
        gf[k] = (fp - fm) / (2 * h)
    return g


def central_difference_batched(f_batch, x, h):
    """Same as ``central_difference`` but evaluates all 2n shifted copies in one call.

    ``f_batch`` maps an array of shape (m, *x.shape) to m scalars.
    """
    x = np.array(x, dtype=np.float64)
    n = x.size
    steps = (np.eye(n) * h).reshape((n,) + x.shape)
    vals = np.asarray(f_batch(np.concatenate([x + steps, x - steps])), dtype=np.float64)
    return ((vals[:n] - vals[n:]) / (2 * h)).reshape(x.shape)


def relative_error(a, b):
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def bootstrap_bf(scores, n_rounds, frac, seed):
    """Resample with ``Generator.choice`` and take plain percentiles."""
    rng = np.random.default_rng(seed)
    m = int(math.floor(frac * len(scores) + 0.5))
    means = [float(np.mean(rng.choice(scores, m, replace=True))) for _ in range(n_rounds)]
    return tuple(float(q) for q in np.percentile(means, [2.5, 97.5]))
