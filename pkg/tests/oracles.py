"""Independent scalar reference implementations used by the tests.

Everything here loops over plain Python floats/ints so that it shares no
code path with the vectorized torch/numpy implementations under test.
"""

import math


def flat(xs):
    out = []
    for x in xs:
        if isinstance(x, (list, tuple)):
            out.extend(flat(x))
        else:
            out.append(float(x))
    return out


def mse(pred, true):
    p, t = flat(pred), flat(true)
    return sum((a - b) ** 2 for a, b in zip(p, t)) / len(p)


def bce(pred, true, eps=1e-7):
    p, t = flat(pred), flat(true)
    total = 0.0
    for a, y in zip(p, t):
        a = min(max(a, eps), 1 - eps)
        total += -(y * math.log(a) + (1 - y) * math.log(1 - a))
    return total / len(p)


def focal_tversky(pred, true, alpha=0.7, beta=0.3, gamma=4 / 3, eps=1e-6):
    p, t = flat(pred), flat(true)
    tp = fn = fp = 0.0
    for a, y in zip(p, t):
        tp += a * y
        fn += (1 - a) * y
        fp += a * (1 - y)
    ti = (tp + eps) / (tp + alpha * fn + beta * fp + eps)
    return (1 - ti) ** gamma


def confusion(preds, truths):
    tp = fp = tn = fn = 0
    for p, t in zip(preds, truths):
        if p and t:
            tp += 1
        elif p and not t:
            fp += 1
        elif not p and not t:
            tn += 1
        else:
            fn += 1
    return tp, fp, tn, fn


def classification(preds, truths):
    tp, fp, tn, fn = confusion(preds, truths)
    acc = (tp + tn) / len(preds)
    rec = tp / (tp + fn) if tp + fn else 0.0
    prec = tp / (tp + fp) if tp + fp else 0.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return acc, rec, f1


def pixel_counts(pred, true):
    inter = p_only = t_only = 0
    for row_p, row_t in zip(pred, true):
        for a, b in zip(row_p, row_t):
            if a and b:
                inter += 1
            elif a:
                p_only += 1
            elif b:
                t_only += 1
    return inter, p_only, t_only


def dice(pred, true):
    inter, p_only, t_only = pixel_counts(pred, true)
    denom = 2 * inter + p_only + t_only
    return 1.0 if denom == 0 else 2 * inter / denom


def iou(pred, true):
    inter, p_only, t_only = pixel_counts(pred, true)
    union = inter + p_only + t_only
    return 1.0 if union == 0 else inter / union


def box_iou_grid(a, b, n=200):
    """Box IoU by counting cells of an n x n lattice (exact for multiples of 1/n)."""
    inter = area_a = area_b = 0
    for i in range(n):
        y = (i + 0.5) / n
        for j in range(n):
            x = (j + 0.5) / n
            in_a = a[0] <= x < a[2] and a[1] <= y < a[3]
            in_b = b[0] <= x < b[2] and b[1] <= y < b[3]
            inter += in_a and in_b
            area_a += in_a
            area_b += in_b
    union = area_a + area_b - inter
    return 0.0 if union == 0 else inter / union


def central_difference(f, x, step=1e-4):
    """Gradient of scalar f at flat list x by central differences."""
    grad = []
    for i in range(len(x)):
        hi = list(x)
        lo = list(x)
        hi[i] += step
        lo[i] -= step
        grad.append((f(hi) - f(lo)) / (2 * step))
    return grad
