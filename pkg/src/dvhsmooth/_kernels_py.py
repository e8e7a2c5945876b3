"""Pure numpy grid kernels.

Reference implementation of the hot loops in ``_kernels.pyx``.  Both return
per-slab partial sums (one row per x index) so the final reduction happens
in a fixed order outside the kernel, independent of threading.
"""

import numpy as np

# smoothstep of order 9: C4 at both ends, density proportional to (1 - t^2)^4
_S_COEF = (126.0, -420.0, 540.0, -315.0, 70.0)


def smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    a, b, c, d, e = _S_COEF
    return u**5 * (a + u * (b + u * (c + u * (d + u * e))))


def kernel(t):
    """Smoothed Heaviside on ``[-1, 1]``: 0 below, 1 above."""
    return smoothstep(0.5 * (t + 1.0))


def partition(r, rho):
    """Patch weight: 1 on ``r <= rho/2``, smooth decay to 0 at ``r = rho``."""
    half = 0.5 * rho
    return 1.0 - smoothstep((r - half) / half)


def _slab_points(lo, delta, shape, i):
    y = lo[1] + delta[1] * (np.arange(shape[1]) + 0.5)
    z = lo[2] + delta[2] * (np.arange(shape[2]) + 0.5)
    pts = np.empty((shape[1], shape[2], 3))
    pts[..., 0] = lo[0] + delta[0] * (i + 0.5)
    pts[..., 1] = y[:, None]
    pts[..., 2] = z[None, :]
    return pts.reshape(-1, 3)


def _field(centers, offsets, sigma, pts):
    d = pts[:, None, :] - centers
    r2 = np.einsum("nij,nij->ni", d, d)
    b = 1.0 / (offsets + r2)
    sb2 = sigma * b * b
    f = np.sum(b * sigma, axis=-1)
    grad = -2.0 * np.einsum("ni,nij->nj", sb2, d)
    lap = (sb2 * (8.0 * b * r2 - 6.0)).sum(axis=1)
    return f, grad, lap, b


def _region_weight(pts, ball, width):
    if ball is None:
        return np.ones(len(pts))
    center, radius = ball
    dist = np.sqrt(np.einsum("nj,nj->n", pts - center, pts - center))
    lap = -2.0 / np.maximum(dist, 1e-300)
    t = (radius - dist + width * width / 22.0 * lap) / width
    return kernel(t)


def _smoothstep_log_slope(u):
    """``S'(u) / S(u)`` for ``0 < u < 1`` (0 elsewhere)."""
    inside = (u > 0.0) & (u < 1.0)
    uu = np.where(inside, u, 0.5)
    return np.where(inside, 630.0 * uu**4 * (1.0 - uu) ** 4 / smoothstep(uu), 0.0)


def _patch_weight(pts, patch_centers, patch_rho):
    """Product of ``1 - partition`` over patches and the gradient of its log."""
    w = np.ones(len(pts))
    dlog = np.zeros((len(pts), 3))
    for c, rho in zip(patch_centers, patch_rho):
        d = pts - c
        r = np.sqrt(np.einsum("nj,nj->n", d, d))
        half = 0.5 * rho
        u = (r - half) / half
        w *= smoothstep(u)
        dlog += (_smoothstep_log_slope(u) / (half * np.maximum(r, 1e-300)))[:, None] * d
    return w, dlog


def level_sums(centers, offsets, sigma, lo, delta, shape, levels, width, ball, patch_centers, patch_rho):
    """Per-slab sums of the smoothed indicator of ``f >= h`` for every level ``h``."""
    levels = np.asarray(levels, dtype=float)
    out = np.zeros((shape[0], len(levels)))
    shift = width * width / 22.0
    for i in range(shape[0]):
        pts = _slab_points(lo, delta, shape, i)
        f, grad, lap, _ = _field(centers, offsets, sigma, pts)
        wp, dlog = _patch_weight(pts, patch_centers, patch_rho)
        w = _region_weight(pts, ball, width) * wp
        keep = w > 0.0
        f, grad, lap, w, dlog = f[keep], grad[keep], lap[keep], w[keep], dlog[keep]
        g = np.sqrt(np.einsum("nj,nj->n", grad, grad))
        scale = np.maximum(g * width, 1e-300)
        # second-moment correction: curvature of the level set and slope of the weight
        base = f + shift * (lap + np.einsum("nj,nj->n", dlog, grad))
        for j, h in enumerate(levels):
            out[i, j] = np.sum(w * kernel((base - h) / scale))
    return out


def power_sums(centers, offsets, sigma, lo, delta, shape, alpha, width, ball):
    """Per-slab ``[sum w, sum w f^a, sum w f^(a-1) b_1, ..., sum w f^(a-1) b_m]``."""
    m = len(sigma)
    out = np.zeros((shape[0], m + 2))
    for i in range(shape[0]):
        pts = _slab_points(lo, delta, shape, i)
        f, _, _, b = _field(centers, offsets, sigma, pts)
        w = _region_weight(pts, ball, width)
        fa1 = w * f ** (alpha - 1.0)
        out[i, 0] = np.sum(w)
        out[i, 1] = np.sum(fa1 * f)
        out[i, 2:] = fa1 @ b
    return out


def field_extrema(centers, offsets, sigma, lo, delta, shape, width, ball):
    """Smallest and largest dose over cells with positive region weight."""
    fmin, fmax = np.inf, -np.inf
    for i in range(shape[0]):
        pts = _slab_points(lo, delta, shape, i)
        f = _field(centers, offsets, sigma, pts)[0][_region_weight(pts, ball, width) > 0.0]
        if f.size:
            fmin, fmax = min(fmin, f.min()), max(fmax, f.max())
    return fmin, fmax
