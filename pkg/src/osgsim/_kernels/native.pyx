# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled trajectory kernel: RK4 for atoms in axis-aligned Gaussian beams.

Mirrors ``fallback.propagate`` exactly (same math, same step scheme); the two
backends are cross-checked in the test suite.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, sqrt

cnp.import_array()


cdef inline void _accel_one(
    double x0, double x1, double x2,
    double[:, ::1] u0, double[:, ::1] centers, long[::1] axes,
    double[:, ::1] waists, double[:, ::1] inv_r2,
    Py_ssize_t i, double inv_mass, double* out,
) noexcept nogil:
    cdef Py_ssize_t k, p, a, b
    cdef double r[3]
    cdef double dz, da, db, wa0, wb0, wa2, wb2, u, ga, gb
    r[0] = x0; r[1] = x1; r[2] = x2
    out[0] = 0.0; out[1] = 0.0; out[2] = 0.0
    for k in range(u0.shape[0]):
        p = axes[k]
        a = 1 if p == 0 else 0
        b = 1 if p == 2 else 2
        dz = r[p] - centers[k, p]
        da = r[a] - centers[k, a]
        db = r[b] - centers[k, b]
        wa0 = waists[k, 0]
        wb0 = waists[k, 1]
        wa2 = wa0 * wa0 * (1.0 + dz * dz * inv_r2[k, 0])
        wb2 = wb0 * wb0 * (1.0 + dz * dz * inv_r2[k, 1])
        u = u0[k, i] * (wa0 * wb0 / sqrt(wa2 * wb2)) * exp(
            -2.0 * da * da / wa2 - 2.0 * db * db / wb2)
        out[a] += u * 4.0 * da / wa2
        out[b] += u * 4.0 * db / wb2
        ga = wa0 * wa0 * dz * inv_r2[k, 0]
        gb = wb0 * wb0 * dz * inv_r2[k, 1]
        out[p] += u * (ga / wa2 + gb / wb2
                       - 4.0 * da * da * ga / (wa2 * wa2)
                       - 4.0 * db * db * gb / (wb2 * wb2))
    out[0] *= inv_mass; out[1] *= inv_mass; out[2] *= inv_mass


def propagate(double[:, ::1] pos, double[:, ::1] vel,
              double[:, ::1] u0, double[:, ::1] centers, long[::1] axes,
              double[:, ::1] waists, double[:, ::1] inv_r2,
              double mass, double dt, Py_ssize_t n_steps):
    cdef Py_ssize_t n = pos.shape[0]
    cdef Py_ssize_t i, s, c
    cdef double inv_mass = 1.0 / mass
    cdef double h2 = dt / 2.0, h6 = dt / 6.0
    cdef double x[3]
    cdef double v[3]
    cdef double xt[3]
    cdef double k1v[3]
    cdef double k2v[3]
    cdef double k3v[3]
    cdef double k4v[3]
    cdef double k1x[3]
    cdef double k2x[3]
    cdef double k3x[3]
    cdef double k4x[3]
    with nogil:
        for i in range(n):
            for c in range(3):
                x[c] = pos[i, c]
                v[c] = vel[i, c]
            for s in range(n_steps):
                _accel_one(x[0], x[1], x[2], u0, centers, axes, waists, inv_r2, i, inv_mass, k1v)
                for c in range(3):
                    k1x[c] = v[c]
                    xt[c] = x[c] + h2 * k1x[c]
                _accel_one(xt[0], xt[1], xt[2], u0, centers, axes, waists, inv_r2, i, inv_mass, k2v)
                for c in range(3):
                    k2x[c] = v[c] + h2 * k1v[c]
                    xt[c] = x[c] + h2 * k2x[c]
                _accel_one(xt[0], xt[1], xt[2], u0, centers, axes, waists, inv_r2, i, inv_mass, k3v)
                for c in range(3):
                    k3x[c] = v[c] + h2 * k2v[c]
                    xt[c] = x[c] + dt * k3x[c]
                _accel_one(xt[0], xt[1], xt[2], u0, centers, axes, waists, inv_r2, i, inv_mass, k4v)
                for c in range(3):
                    k4x[c] = v[c] + dt * k3v[c]
                    x[c] += h6 * (k1x[c] + 2.0 * k2x[c] + 2.0 * k3x[c] + k4x[c])
                    v[c] += h6 * (k1v[c] + 2.0 * k2v[c] + 2.0 * k3v[c] + k4v[c])
            for c in range(3):
                pos[i, c] = x[c]
                vel[i, c] = v[c]
    return np.asarray(pos), np.asarray(vel)
