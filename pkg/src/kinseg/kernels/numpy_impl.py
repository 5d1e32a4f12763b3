"""Pure-numpy reference kernels.

These are the fallback path when numba is unavailable or disabled, and the
reference the compiled kernels are tested against.
"""
import numpy as np

# Added under the square roots / divisions of the capsule distance.
DIST_EPS = 1e-12
LEN_EPS = 1e-12
# Sigmoid pre-activation clamp.
LOGIT_CLAMP = 30.0


def _capsule_terms(a, b, r, tau, height, width):
    v, u = np.mgrid[0:height, 0:width].astype(np.float64)
    ab = b - a
    abu = ab[:, 0, None, None]
    abv = ab[:, 1, None, None]
    len2 = (ab * ab).sum(axis=1)[:, None, None] + LEN_EPS
    du = u[None] - a[:, 0, None, None]
    dv = v[None] - a[:, 1, None, None]
    t = np.clip((du * abu + dv * abv) / len2, 0.0, 1.0)
    qu = du - t * abu
    qv = dv - t * abv
    dist = np.sqrt(qu * qu + qv * qv + DIST_EPS)
    raw = (r[:, None, None] - dist) / tau
    live = np.abs(raw) <= LOGIT_CLAMP
    x = np.clip(raw, -LOGIT_CLAMP, LOGIT_CLAMP)
    e = np.exp(-x)
    s = 1.0 / (1.0 + e)
    comp = e * s
    return t, qu, qv, dist, s, comp, live


def silhouette_forward(a, b, r, tau, height, width):
    """Soft union of capsule silhouettes, shape (height, width).

    ``a``/``b`` are (S, 2) projected endpoints in (u, v) pixels and ``r`` the
    (S,) projected radii.
    """
    if a.shape[0] == 0:
        return np.zeros((height, width))
    comp = _capsule_terms(a, b, r, tau, height, width)[5]
    return 1.0 - _ordered_prod(comp)


def _ordered_prod(comp):
    # same multiplication order as the compiled kernel
    prod = np.ones(comp.shape[1:])
    for c in comp:
        prod = prod * c
    return prod


def silhouette_backward(a, b, r, tau, grad):
    height, width = grad.shape
    n = a.shape[0]
    if n == 0:
        return np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0)
    t, qu, qv, dist, s, comp, live = _capsule_terms(a, b, r, tau, height, width)
    prod = _ordered_prod(comp)
    # d(1 - prod)/dx_i = prod * s_i; clamped logits carry no gradient
    gx = np.where(live, grad[None] * prod[None] * s, 0.0)
    gr = gx.sum(axis=(1, 2)) / tau
    gdist = -gx / tau / dist
    # envelope: the projection parameter t is stationary in the interior
    wa = gdist * (t - 1.0)
    wb = gdist * (-t)
    ga = np.stack([(wa * qu).sum(axis=(1, 2)), (wa * qv).sum(axis=(1, 2))], axis=1)
    gb = np.stack([(wb * qu).sum(axis=(1, 2)), (wb * qv).sum(axis=(1, 2))], axis=1)
    return ga, gb, gr


def correlate_edge(x, kernel, axis):
    """Correlate a 2-D array with an odd-length kernel along ``axis``,
    replicating edge values."""
    radius = len(kernel) // 2
    xm = np.moveaxis(x, axis, 0)
    n = xm.shape[0]
    pad = [(radius, radius)] + [(0, 0)] * (xm.ndim - 1)
    xp = np.pad(xm, pad, mode="edge")
    out = np.zeros_like(xm)
    for k, w in enumerate(kernel):
        out += w * xp[k:k + n]
    return np.moveaxis(out, 0, axis)


def correlate_edge_adjoint(grad, kernel, axis):
    radius = len(kernel) // 2
    gm = np.moveaxis(grad, axis, 0)
    n = gm.shape[0]
    gp = np.zeros((n + 2 * radius,) + gm.shape[1:])
    for k, w in enumerate(kernel):
        gp[k:k + n] += w * gm
    out = gp[radius:radius + n].copy()
    out[0] += gp[:radius].sum(axis=0)
    out[-1] += gp[radius + n:].sum(axis=0)
    return np.moveaxis(out, 0, axis)


def disc_offsets(radius):
    r = int(np.floor(radius))
    return [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1)
            if dy * dy + dx * dx <= radius * radius]


def max_filter_disc(x, radius):
    """Max over a disc neighbourhood (out-of-image samples ignored).

    Returns the filtered image and the flat index of the winning source
    pixel; ties go to the first offset in row-major order.
    """
    h, w = x.shape
    out = np.full((h, w), -np.inf)
    arg = np.full((h, w), -1, dtype=np.int64)
    flat = np.arange(h * w, dtype=np.int64).reshape(h, w)
    for dy, dx in disc_offsets(radius):
        ys, ye = max(0, -dy), min(h, h - dy)
        xs, xe = max(0, -dx), min(w, w - dx)
        if ys >= ye or xs >= xe:
            continue
        src = x[ys + dy:ye + dy, xs + dx:xe + dx]
        dst = out[ys:ye, xs:xe]
        better = src > dst
        dst[better] = src[better]
        arg[ys:ye, xs:xe][better] = flat[ys + dy:ye + dy, xs + dx:xe + dx][better]
    return out, arg


def scatter_add(grad, arg, size):
    out = np.zeros(size)
    np.add.at(out, arg.ravel(), grad.ravel())
    return out
