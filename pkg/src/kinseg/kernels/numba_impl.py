"""numba-compiled versions of the hot image kernels.

Loops run serially so floating-point accumulation order is fixed.
"""
import numpy as np
from numba import njit

from .numpy_impl import DIST_EPS, LEN_EPS, LOGIT_CLAMP


@njit(cache=True)
def _segment_terms(pu, pv, au, av, bu, bv, r, tau):
    abu = bu - au
    abv = bv - av
    len2 = abu * abu + abv * abv + LEN_EPS
    du = pu - au
    dv = pv - av
    t = (du * abu + dv * abv) / len2
    if t < 0.0:
        t = 0.0
    elif t > 1.0:
        t = 1.0
    qu = du - t * abu
    qv = dv - t * abv
    dist = np.sqrt(qu * qu + qv * qv + DIST_EPS)
    x = (r - dist) / tau
    live = True
    if x > LOGIT_CLAMP:
        x = LOGIT_CLAMP
        live = False
    elif x < -LOGIT_CLAMP:
        x = -LOGIT_CLAMP
        live = False
    e = np.exp(-x)
    s = 1.0 / (1.0 + e)
    comp = e * s
    return t, qu, qv, dist, s, comp, live


@njit(cache=True)
def _far_bounds(a, b, r, tau):
    # pixels outside these boxes sit beyond the clamp, where the
    # per-segment terms are constants
    n = a.shape[0]
    box = np.empty((n, 4))
    for k in range(n):
        m = r[k] + LOGIT_CLAMP * tau
        box[k, 0] = min(a[k, 0], b[k, 0]) - m
        box[k, 1] = max(a[k, 0], b[k, 0]) + m
        box[k, 2] = min(a[k, 1], b[k, 1]) - m
        box[k, 3] = max(a[k, 1], b[k, 1]) + m
    return box


@njit(cache=True)
def silhouette_forward(a, b, r, tau, height, width):
    out = np.zeros((height, width))
    n = a.shape[0]
    if n == 0:
        return out
    box = _far_bounds(a, b, r, tau)
    far_comp = np.exp(LOGIT_CLAMP) * (1.0 / (1.0 + np.exp(LOGIT_CLAMP)))
    for i in range(height):
        for j in range(width):
            pu = float(j)
            pv = float(i)
            prod = 1.0
            for k in range(n):
                if pu < box[k, 0] or pu > box[k, 1] or pv < box[k, 2] or pv > box[k, 3]:
                    prod *= far_comp
                else:
                    prod *= _segment_terms(pu, pv, a[k, 0], a[k, 1],
                                           b[k, 0], b[k, 1], r[k], tau)[5]
            out[i, j] = 1.0 - prod
    return out


@njit(cache=True)
def silhouette_backward(a, b, r, tau, grad):
    height, width = grad.shape
    n = a.shape[0]
    ga = np.zeros((n, 2))
    gb = np.zeros((n, 2))
    gr = np.zeros(n)
    if n == 0:
        return ga, gb, gr
    box = _far_bounds(a, b, r, tau)
    far_comp = np.exp(LOGIT_CLAMP) * (1.0 / (1.0 + np.exp(LOGIT_CLAMP)))
    near = np.zeros(n, dtype=np.bool_)
    ss = np.empty(n)
    ts = np.empty(n)
    qus = np.empty(n)
    qvs = np.empty(n)
    dists = np.empty(n)
    for i in range(height):
        for j in range(width):
            g = grad[i, j]
            if g == 0.0:
                continue
            pu = float(j)
            pv = float(i)
            prod = 1.0
            for k in range(n):
                if pu < box[k, 0] or pu > box[k, 1] or pv < box[k, 2] or pv > box[k, 3]:
                    near[k] = False
                    prod *= far_comp
                else:
                    t, qu, qv, dist, s, comp, live = _segment_terms(
                        pu, pv, a[k, 0], a[k, 1], b[k, 0], b[k, 1], r[k], tau)
                    near[k] = live
                    ts[k] = t
                    qus[k] = qu
                    qvs[k] = qv
                    dists[k] = dist
                    ss[k] = s
                    prod *= comp
            for k in range(n):
                if not near[k]:
                    continue
                gx = g * prod * ss[k]
                gr[k] += gx / tau
                gdist = -gx / tau / dists[k]
                wa = gdist * (ts[k] - 1.0)
                wb = -gdist * ts[k]
                ga[k, 0] += wa * qus[k]
                ga[k, 1] += wa * qvs[k]
                gb[k, 0] += wb * qus[k]
                gb[k, 1] += wb * qvs[k]
    return ga, gb, gr


@njit(cache=True)
def _correlate_rows(x, kernel):
    # correlate along axis 0 with edge replication
    n, m = x.shape
    radius = kernel.shape[0] // 2
    out = np.zeros((n, m))
    for i in range(n):
        for k in range(kernel.shape[0]):
            src = i + k - radius
            if src < 0:
                src = 0
            elif src > n - 1:
                src = n - 1
            w = kernel[k]
            for j in range(m):
                out[i, j] += w * x[src, j]
    return out


@njit(cache=True)
def _correlate_rows_adjoint(g, kernel):
    n, m = g.shape
    radius = kernel.shape[0] // 2
    out = np.zeros((n, m))
    for i in range(n):
        for k in range(kernel.shape[0]):
            dst = i + k - radius
            if dst < 0:
                dst = 0
            elif dst > n - 1:
                dst = n - 1
            w = kernel[k]
            for j in range(m):
                out[dst, j] += w * g[i, j]
    return out


def correlate_edge(x, kernel, axis):
    kernel = np.ascontiguousarray(kernel, dtype=np.float64)
    if axis == 0:
        return _correlate_rows(np.ascontiguousarray(x), kernel)
    return np.ascontiguousarray(_correlate_rows(np.ascontiguousarray(x.T), kernel).T)


def correlate_edge_adjoint(grad, kernel, axis):
    kernel = np.ascontiguousarray(kernel, dtype=np.float64)
    if axis == 0:
        return _correlate_rows_adjoint(np.ascontiguousarray(grad), kernel)
    return np.ascontiguousarray(
        _correlate_rows_adjoint(np.ascontiguousarray(grad.T), kernel).T)


@njit(cache=True)
def _max_filter(x, half_widths):
    # half_widths[dy + R] is the disc's horizontal half-width on row offset dy.
    # Row maxima per half-width grow one column at a time with leftmost-wins
    # ties, then rows combine top-down with topmost-wins ties; together this
    # matches a row-major scan of the disc with strict comparisons.
    h, w = x.shape
    big_r = (half_widths.shape[0] - 1) // 2
    max_w = 0
    for k in range(half_widths.shape[0]):
        if half_widths[k] > max_w:
            max_w = half_widths[k]
    row_val = np.empty((max_w + 1, h, w))
    row_arg = np.empty((max_w + 1, h, w), dtype=np.int64)
    for i in range(h):
        for j in range(w):
            row_val[0, i, j] = x[i, j]
            row_arg[0, i, j] = i * w + j
    for hw in range(1, max_w + 1):
        for i in range(h):
            for j in range(w):
                best = -np.inf
                where = -1
                left = j - hw
                if left >= 0:
                    best = x[i, left]
                    where = i * w + left
                if row_val[hw - 1, i, j] > best:
                    best = row_val[hw - 1, i, j]
                    where = row_arg[hw - 1, i, j]
                right = j + hw
                if right < w and x[i, right] > best:
                    best = x[i, right]
                    where = i * w + right
                row_val[hw, i, j] = best
                row_arg[hw, i, j] = where
    out = np.full((h, w), -np.inf)
    arg = np.full((h, w), -1, dtype=np.int64)
    for i in range(h):
        for k in range(half_widths.shape[0]):
            y = i + k - big_r
            if y < 0 or y >= h:
                continue
            hw = half_widths[k]
            for j in range(w):
                if row_val[hw, y, j] > out[i, j]:
                    out[i, j] = row_val[hw, y, j]
                    arg[i, j] = row_arg[hw, y, j]
    return out, arg


def max_filter_disc(x, radius):
    r = int(np.floor(radius))
    half = np.array([int(np.floor(np.sqrt(max(radius * radius - dy * dy, 0.0))))
                     for dy in range(-r, r + 1)], dtype=np.int64)
    return _max_filter(np.ascontiguousarray(x, dtype=np.float64), half)


@njit(cache=True)
def _scatter_add(grad, arg, size):
    out = np.zeros(size)
    for i in range(grad.shape[0]):
        out[arg[i]] += grad[i]
    return out


def scatter_add(grad, arg, size):
    return _scatter_add(np.ascontiguousarray(grad, dtype=np.float64).ravel(),
                        np.ascontiguousarray(arg).ravel(), size)
