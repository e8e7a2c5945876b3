# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled grid kernels; same contract as ``_kernels_py``.

Each x slab is summed sequentially into its own output row, so the result
does not depend on how slabs are spread over threads.
"""

import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport sqrt, pow

cnp.import_array()


cdef inline double _smoothstep(double u) noexcept nogil:
    if u <= 0.0:
        return 0.0
    if u >= 1.0:
        return 1.0
    return u * u * u * u * u * (126.0 + u * (-420.0 + u * (540.0 + u * (-315.0 + u * 70.0))))


cdef inline double _smoothstep_log_slope(double u) noexcept nogil:
    cdef double v
    if u <= 0.0 or u >= 1.0:
        return 0.0
    v = 1.0 - u
    return 630.0 * u * u * u * u * v * v * v * v / _smoothstep(u)


cdef inline double _kernel(double t) noexcept nogil:
    return _smoothstep(0.5 * (t + 1.0))


cdef inline double _region_weight(double x, double y, double z, int has_ball,
                                  const double[:] bc, double br, double width) noexcept nogil:
    cdef double dx, dy, dz, dist, t
    if not has_ball:
        return 1.0
    dx = x - bc[0]
    dy = y - bc[1]
    dz = z - bc[2]
    dist = sqrt(dx * dx + dy * dy + dz * dz)
    if dist < 1e-300:
        dist = 1e-300
    t = (br - dist + width * width / 22.0 * (-2.0 / dist)) / width
    return _kernel(t)


def level_sums(const double[:, :] centers, const double[:] offsets, const double[:] sigma,
               const double[:] lo, const double[:] delta, shape, const double[:] levels,
               double width, ball, const double[:, :] patch_centers, const double[:] patch_rho,
               int num_threads=1):
    cdef Py_ssize_t nx = shape[0], ny = shape[1], nz = shape[2]
    cdef Py_ssize_t m = centers.shape[0], nh = levels.shape[0], npatch = patch_centers.shape[0]
    cdef Py_ssize_t i, j, k, p, q
    cdef double x, y, z, dx, dy, dz, r2, b, sb2, f, gx, gy, gz, lap, g, w, r, half, scale, base, u, slope
    cdef double lx, ly, lz
    cdef double shift = width * width / 22.0
    cdef int has_ball = ball is not None
    cdef double br = 0.0
    cdef double[:] bc = np.zeros(3)
    if has_ball:
        bc = np.ascontiguousarray(ball[0], dtype=np.float64)
        br = float(ball[1])
    out_arr = np.zeros((nx, nh))
    cdef double[:, :] out = out_arr

    for i in prange(nx, nogil=True, num_threads=num_threads, schedule="static"):
        x = lo[0] + delta[0] * (i + 0.5)
        for j in range(ny):
            y = lo[1] + delta[1] * (j + 0.5)
            for k in range(nz):
                z = lo[2] + delta[2] * (k + 0.5)
                w = _region_weight(x, y, z, has_ball, bc, br, width)
                lx = 0.0
                ly = 0.0
                lz = 0.0
                for p in range(npatch):
                    dx = x - patch_centers[p, 0]
                    dy = y - patch_centers[p, 1]
                    dz = z - patch_centers[p, 2]
                    r = sqrt(dx * dx + dy * dy + dz * dz)
                    half = 0.5 * patch_rho[p]
                    u = (r - half) / half
                    w = w * _smoothstep(u)
                    if r < 1e-300:
                        r = 1e-300
                    slope = _smoothstep_log_slope(u) / (half * r)
                    lx = lx + slope * dx
                    ly = ly + slope * dy
                    lz = lz + slope * dz
                if w <= 0.0:
                    continue
                f = 0.0
                gx = 0.0
                gy = 0.0
                gz = 0.0
                lap = 0.0
                for q in range(m):
                    dx = x - centers[q, 0]
                    dy = y - centers[q, 1]
                    dz = z - centers[q, 2]
                    r2 = dx * dx + dy * dy + dz * dz
                    b = 1.0 / (offsets[q] + r2)
                    sb2 = sigma[q] * b * b
                    f = f + sigma[q] * b
                    gx = gx - 2.0 * sb2 * dx
                    gy = gy - 2.0 * sb2 * dy
                    gz = gz - 2.0 * sb2 * dz
                    lap = lap + sb2 * (8.0 * b * r2 - 6.0)
                g = sqrt(gx * gx + gy * gy + gz * gz)
                scale = g * width
                if scale < 1e-300:
                    scale = 1e-300
                base = f + shift * (lap + lx * gx + ly * gy + lz * gz)
                for q in range(nh):
                    out[i, q] += w * _kernel((base - levels[q]) / scale)
    return out_arr


def power_sums(const double[:, :] centers, const double[:] offsets, const double[:] sigma,
               const double[:] lo, const double[:] delta, shape, double alpha,
               double width, ball, int num_threads=1):
    cdef Py_ssize_t nx = shape[0], ny = shape[1], nz = shape[2]
    cdef Py_ssize_t m = centers.shape[0]
    cdef Py_ssize_t i, j, k, q
    cdef double x, y, z, dx, dy, dz, f, w, fa1
    cdef int has_ball = ball is not None
    cdef double br = 0.0
    cdef double[:] bc = np.zeros(3)
    if has_ball:
        bc = np.ascontiguousarray(ball[0], dtype=np.float64)
        br = float(ball[1])
    out_arr = np.zeros((nx, m + 2))
    cdef double[:, :] out = out_arr
    basis_arr = np.zeros((nx, m))
    cdef double[:, :] bas = basis_arr

    for i in prange(nx, nogil=True, num_threads=num_threads, schedule="static"):
        x = lo[0] + delta[0] * (i + 0.5)
        for j in range(ny):
            y = lo[1] + delta[1] * (j + 0.5)
            for k in range(nz):
                z = lo[2] + delta[2] * (k + 0.5)
                w = _region_weight(x, y, z, has_ball, bc, br, width)
                if w <= 0.0:
                    continue
                f = 0.0
                for q in range(m):
                    dx = x - centers[q, 0]
                    dy = y - centers[q, 1]
                    dz = z - centers[q, 2]
                    bas[i, q] = 1.0 / (offsets[q] + dx * dx + dy * dy + dz * dz)
                    f = f + sigma[q] * bas[i, q]
                fa1 = w * pow(f, alpha - 1.0)
                out[i, 0] += w
                out[i, 1] += fa1 * f
                for q in range(m):
                    out[i, 2 + q] += fa1 * bas[i, q]
    return out_arr
