# SPDX-FileCopyrightText: 2024-2026 Nicolai Buchwitz <nb@tipi-net.de>
#
# SPDX-License-Identifier: LGPL-2.1-or-later

"""Pixel-loop reference implementations of the four measures.

Written straight from the definitions with explicit loops so the vectorised
versions in :mod:`refcod.metrics` can be checked against them.
"""

import math

import numpy as np

EPS = float(np.spacing(1))


def mae_loop(p: np.ndarray, g: np.ndarray) -> float:
    h, w = p.shape
    total = 0.0
    for i in range(h):
        for j in range(w):
            total += abs(float(p[i, j]) - (1.0 if g[i, j] > 0.5 else 0.0))
    return total / (h * w)


def _mean(values: list[float]) -> float:
    return sum(values) / len(values)


def _sample_std(values: list[float]) -> float:
    if len(values) < 2:
        return 0.0
    m = _mean(values)
    return math.sqrt(sum((v - m) ** 2 for v in values) / (len(values) - 1))


def _s_object(values: list[float]) -> float:
    x = _mean(values)
    return 2.0 * x / (x * x + 1.0 + _sample_std(values) + EPS)


def _ssim(pred: list[float], gt: list[float]) -> float:
    n = len(pred)
    x, y = _mean(pred), _mean(gt)
    denom = max(n - 1, 1)
    sx = sum((a - x) ** 2 for a in pred) / denom
    sy = sum((b - y) ** 2 for b in gt) / denom
    sxy = sum((a - x) * (b - y) for a, b in zip(pred, gt)) / denom
    a = 4.0 * x * y * sxy
    b = (x * x + y * y) * (sx + sy)
    if a != 0:
        return a / (b + EPS)
    return 1.0 if b == 0 else 0.0


def s_measure_loop(p: np.ndarray, g: np.ndarray, alpha: float = 0.5) -> float:
    h, w = p.shape
    fg = [(i, j) for i in range(h) for j in range(w) if g[i, j] > 0.5]
    bg = [(i, j) for i in range(h) for j in range(w) if g[i, j] <= 0.5]
    if not fg:
        return 1.0 - _mean([float(p[i, j]) for i in range(h) for j in range(w)])
    if not bg:
        return _mean([float(p[i, j]) for i in range(h) for j in range(w)])

    u = len(fg) / (h * w)
    s_obj = u * _s_object([float(p[i, j]) for i, j in fg]) + (1 - u) * _s_object(
        [1.0 - float(p[i, j]) for i, j in bg]
    )

    y = min(round(_mean([i for i, _ in fg])) + 1, h)
    x = min(round(_mean([j for _, j in fg])) + 1, w)
    weights = [x * y / (h * w), y * (w - x) / (h * w), (h - y) * x / (h * w)]
    weights.append(1.0 - sum(weights))
    quadrants = [
        (range(0, y), range(0, x)),
        (range(0, y), range(x, w)),
        (range(y, h), range(0, x)),
        (range(y, h), range(x, w)),
    ]
    s_reg = 0.0
    for weight, (rows, cols) in zip(weights, quadrants):
        pred = [float(p[i, j]) for i in rows for j in cols]
        gt = [1.0 if g[i, j] > 0.5 else 0.0 for i in rows for j in cols]
        if pred:
            s_reg += weight * _ssim(pred, gt)
    return min(max(alpha * s_obj + (1 - alpha) * s_reg, 0.0), 1.0)


def e_measure_loop(p: np.ndarray, g: np.ndarray) -> float:
    h, w = p.shape
    n = h * w
    threshold = min(2.0 * float(p.mean()), 1.0)
    fm = [[0.0] * w for _ in range(h)]
    for i in range(h):
        for j in range(w):
            on = p[i, j] > 0 if threshold == 0 else p[i, j] >= threshold
            fm[i][j] = 1.0 if on else 0.0
    gt = [[1.0 if g[i, j] > 0.5 else 0.0 for j in range(w)] for i in range(h)]
    gt_sum = sum(map(sum, gt))
    if gt_sum == 0:
        return sum(1.0 - fm[i][j] for i in range(h) for j in range(w)) / n
    if gt_sum == n:
        return sum(fm[i][j] for i in range(h) for j in range(w)) / n
    mean_fm = sum(map(sum, fm)) / n
    mean_gt = gt_sum / n
    total = 0.0
    for i in range(h):
        for j in range(w):
            dfm = fm[i][j] - mean_fm
            dgt = gt[i][j] - mean_gt
            align = 2.0 * dfm * dgt / (dfm * dfm + dgt * dgt + EPS)
            total += (align + 1.0) ** 2 / 4.0
    return total / n


def _kernel() -> list[list[float]]:
    raw = [[math.exp(-((a - 3) ** 2 + (b - 3) ** 2) / 50.0) for b in range(7)] for a in range(7)]
    s = sum(map(sum, raw))
    return [[v / s for v in row] for row in raw]


def weighted_f_loop(p: np.ndarray, g: np.ndarray, beta2: float = 1.0) -> float:
    """Loop version; ties between equidistant foreground pixels must not matter."""
    h, w = p.shape
    fg = [(i, j) for i in range(h) for j in range(w) if g[i, j] > 0.5]
    is_fg = [[g[i, j] > 0.5 for j in range(w)] for i in range(h)]
    err = [
        [abs(float(p[i, j]) - (1.0 if is_fg[i][j] else 0.0)) for j in range(w)] for i in range(h)
    ]
    err_t = [row[:] for row in err]
    dist = [[0.0] * w for _ in range(h)]
    for i in range(h):
        for j in range(w):
            if not is_fg[i][j]:
                d, (a, b) = min((math.hypot(i - a, j - b), (a, b)) for a, b in fg)
                dist[i][j] = d
                err_t[i][j] = err[a][b]

    kernel = _kernel()
    smoothed = [[0.0] * w for _ in range(h)]
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for a in range(7):
                for b in range(7):
                    y, x = i + a - 3, j + b - 3
                    if 0 <= y < h and 0 <= x < w:
                        acc += kernel[a][b] * err_t[y][x]
            smoothed[i][j] = acc

    tp = float(len(fg))
    fp = 0.0
    fg_weighted = 0.0
    for i in range(h):
        for j in range(w):
            e = err[i][j]
            if is_fg[i][j]:
                e = min(e, smoothed[i][j])
                fg_weighted += e
            else:
                fp += e * (2.0 - math.exp(math.log(0.5) / 5.0 * dist[i][j]))
    tp -= fg_weighted
    recall = 1.0 - fg_weighted / len(fg)
    precision = tp / (tp + fp + EPS)
    score = (1 + beta2) * recall * precision / (recall + beta2 * precision + EPS)
    return min(max(score, 0.0), 1.0)
