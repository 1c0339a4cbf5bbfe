# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: the corner-based Fokker-Planck flux stencil, Box-Muller
transform of counter-based random words and particle boundary handling.

Each output element is written by exactly one iteration, so results do not
depend on the number of OpenMP threads.
"""

import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport sqrt, log, cos, sin, M_PI, isfinite

cnp.import_array()


def corner_flux_divergence(double[:, :, ::1] fpad,
                           double[:, :, :, ::1] jc,
                           double[:, :, :, ::1] jk,
                           double[:, :, :, ::1] adv,
                           double half_d,
                           double hx, double hy, double hz,
                           zero_flux,
                           int num_threads=1):
    """Return (rhs, Fx, Fy, Fz) for the flux form of the Fokker-Planck equation.

    fpad  : density padded by one ghost cell per side, (nx+2, ny+2, nz+2)
    jc    : J^{xy}, J^{xz}, J^{yz} at padded cell centers, (3, nx+2, ny+2, nz+2)
    jk    : same components at cell corners, (3, nx+1, ny+1, nz+1)
    adv   : advective velocity at corners, (3, nx+1, ny+1, nz+1)

    Face fluxes are f Z (outflow positive); rhs = -div(f Z).
    """
    cdef Py_ssize_t nx = fpad.shape[0] - 2
    cdef Py_ssize_t ny = fpad.shape[1] - 2
    cdef Py_ssize_t nz = fpad.shape[2] - 2
    cdef Py_ssize_t i, j, k, a, b, c
    cdef double fc, dAx, dAy, dBx, dBz, dCy, dCz, qx, qy, qz, jxy, jxz, jyz
    cdef double ix = 0.25 / hx, iy = 0.25 / hy, iz = 0.25 / hz

    prod_np = np.empty((3, nx + 2, ny + 2, nz + 2))
    cdef double[:, :, :, ::1] P = prod_np
    for i in prange(nx + 2, nogil=True, num_threads=num_threads, schedule="static"):
        for j in range(ny + 2):
            for k in range(nz + 2):
                P[0, i, j, k] = jc[0, i, j, k] * fpad[i, j, k]
                P[1, i, j, k] = jc[1, i, j, k] * fpad[i, j, k]
                P[2, i, j, k] = jc[2, i, j, k] * fpad[i, j, k]

    corner_np = np.empty((3, nx + 1, ny + 1, nz + 1))
    cdef double[:, :, :, ::1] F = corner_np
    for i in prange(nx + 1, nogil=True, num_threads=num_threads, schedule="static"):
        for j in range(ny + 1):
            for k in range(nz + 1):
                fc = 0.125 * (fpad[i, j, k] + fpad[i + 1, j, k] + fpad[i, j + 1, k] + fpad[i + 1, j + 1, k]
                              + fpad[i, j, k + 1] + fpad[i + 1, j, k + 1] + fpad[i, j + 1, k + 1]
                              + fpad[i + 1, j + 1, k + 1])
                # A = P[0] (xy), B = P[1] (xz), C = P[2] (yz)
                dAx = ix * (P[0, i + 1, j, k] - P[0, i, j, k] + P[0, i + 1, j + 1, k] - P[0, i, j + 1, k]
                            + P[0, i + 1, j, k + 1] - P[0, i, j, k + 1] + P[0, i + 1, j + 1, k + 1] - P[0, i, j + 1, k + 1])
                dBx = ix * (P[1, i + 1, j, k] - P[1, i, j, k] + P[1, i + 1, j + 1, k] - P[1, i, j + 1, k]
                            + P[1, i + 1, j, k + 1] - P[1, i, j, k + 1] + P[1, i + 1, j + 1, k + 1] - P[1, i, j + 1, k + 1])
                dAy = iy * (P[0, i, j + 1, k] - P[0, i, j, k] + P[0, i + 1, j + 1, k] - P[0, i + 1, j, k]
                            + P[0, i, j + 1, k + 1] - P[0, i, j, k + 1] + P[0, i + 1, j + 1, k + 1] - P[0, i + 1, j, k + 1])
                dCy = iy * (P[2, i, j + 1, k] - P[2, i, j, k] + P[2, i + 1, j + 1, k] - P[2, i + 1, j, k]
                            + P[2, i, j + 1, k + 1] - P[2, i, j, k + 1] + P[2, i + 1, j + 1, k + 1] - P[2, i + 1, j, k + 1])
                dBz = iz * (P[1, i, j, k + 1] - P[1, i, j, k] + P[1, i + 1, j, k + 1] - P[1, i + 1, j, k]
                            + P[1, i, j + 1, k + 1] - P[1, i, j + 1, k] + P[1, i + 1, j + 1, k + 1] - P[1, i + 1, j + 1, k])
                dCz = iz * (P[2, i, j, k + 1] - P[2, i, j, k] + P[2, i + 1, j, k + 1] - P[2, i + 1, j, k]
                            + P[2, i, j + 1, k + 1] - P[2, i, j + 1, k] + P[2, i + 1, j + 1, k + 1] - P[2, i + 1, j + 1, k])
                # q^k = d_j (J^{jk} f)
                qx = -dAy - dBz
                qy = dAx - dCz
                qz = dBx + dCy
                jxy = jk[0, i, j, k]
                jxz = jk[1, i, j, k]
                jyz = jk[2, i, j, k]
                F[0, i, j, k] = adv[0, i, j, k] * fc - half_d * (jxy * qy + jxz * qz)
                F[1, i, j, k] = adv[1, i, j, k] * fc - half_d * (-jxy * qx + jyz * qz)
                F[2, i, j, k] = adv[2, i, j, k] * fc - half_d * (-jxz * qx - jyz * qy)

    fx_np = np.empty((nx + 1, ny, nz))
    fy_np = np.empty((nx, ny + 1, nz))
    fz_np = np.empty((nx, ny, nz + 1))
    cdef double[:, :, ::1] Fx = fx_np
    cdef double[:, :, ::1] Fy = fy_np
    cdef double[:, :, ::1] Fz = fz_np
    for i in prange(nx + 1, nogil=True, num_threads=num_threads, schedule="static"):
        for j in range(ny + 1):
            for k in range(nz + 1):
                if j < ny and k < nz:
                    Fx[i, j, k] = 0.25 * (F[0, i, j, k] + F[0, i, j + 1, k] + F[0, i, j, k + 1] + F[0, i, j + 1, k + 1])
                if i < nx and k < nz:
                    Fy[i, j, k] = 0.25 * (F[1, i, j, k] + F[1, i + 1, j, k] + F[1, i, j, k + 1] + F[1, i + 1, j, k + 1])
                if i < nx and j < ny:
                    Fz[i, j, k] = 0.25 * (F[2, i, j, k] + F[2, i + 1, j, k] + F[2, i, j + 1, k] + F[2, i + 1, j + 1, k])

    zx, zy, zz = zero_flux
    if zx:
        fx_np[0] = 0.0
        fx_np[nx] = 0.0
    if zy:
        fy_np[:, 0] = 0.0
        fy_np[:, ny] = 0.0
    if zz:
        fz_np[:, :, 0] = 0.0
        fz_np[:, :, nz] = 0.0

    rhs_np = np.empty((nx, ny, nz))
    cdef double[:, :, ::1] R = rhs_np
    cdef double rx = 1.0 / hx, ry = 1.0 / hy, rz = 1.0 / hz
    for i in prange(nx, nogil=True, num_threads=num_threads, schedule="static"):
        for j in range(ny):
            for k in range(nz):
                R[i, j, k] = -((Fx[i + 1, j, k] - Fx[i, j, k]) * rx
                               + (Fy[i, j + 1, k] - Fy[i, j, k]) * ry
                               + (Fz[i, j, k + 1] - Fz[i, j, k]) * rz)
    return rhs_np, fx_np, fy_np, fz_np


def box_muller(cnp.uint64_t[:, ::1] raw, int n):
    """Standard normals from pairs of 64-bit words; uses the first n per row."""
    cdef Py_ssize_t rows = raw.shape[0]
    cdef Py_ssize_t words = raw.shape[1]
    cdef Py_ssize_t p, m
    cdef double u1, u2, rad, ang
    cdef double scale = 1.0 / 9007199254740992.0
    out_np = np.empty((rows, n))
    cdef double[:, ::1] out = out_np
    for p in range(rows):
        m = 0
        while m < n:
            u1 = ((raw[p, m] >> 11) + 0.5) * scale
            u2 = ((raw[p, m + 1] >> 11) + 0.5) * scale
            rad = sqrt(-2.0 * log(u1))
            ang = 2.0 * M_PI * u2
            out[p, m] = rad * cos(ang)
            if m + 1 < n:
                out[p, m + 1] = rad * sin(ang)
            m += 2
    return out_np


def apply_boundary(double[:, ::1] x, double[::1] lower, double[::1] upper, cnp.uint8_t[::1] periodic):
    """Wrap periodic axes and mirror reflecting axes in place.

    Returns -1 on success, otherwise the index of the first particle whose
    overshoot exceeds one reflection (or whose coordinate is not finite).
    """
    cdef Py_ssize_t N = x.shape[0]
    cdef Py_ssize_t n = x.shape[1]
    cdef Py_ssize_t p, a
    cdef double lo, hi, L, v
    for p in range(N):
        for a in range(n):
            v = x[p, a]
            if not isfinite(v):
                return p
            lo = lower[a]
            hi = upper[a]
            L = hi - lo
            if periodic[a]:
                if v < lo or v >= hi:
                    v = v - L * ((v - lo) // L)
                    if v >= hi:
                        v = lo
            else:
                if v > hi:
                    v = 2.0 * hi - v
                elif v < lo:
                    v = 2.0 * lo - v
                if v < lo or v > hi:
                    return p
            x[p, a] = v
    return -1
