"""Pure-numpy versions of the compiled kernels (same signatures, same results)."""

import numpy as np


def _corner_diff(P, axis, h):
    """Corner-centered derivative: edge differences along ``axis`` averaged over the 4 parallel edges."""
    d = np.diff(P, axis=axis)
    others = [a for a in range(3) if a != axis]
    for a in others:
        sl0 = [slice(None)] * 3
        sl1 = [slice(None)] * 3
        sl0[a] = slice(None, -1)
        sl1[a] = slice(1, None)
        d = d[tuple(sl0)] + d[tuple(sl1)]
    return d * (0.25 / h)


def _corner_mean(f):
    s = f[:-1] + f[1:]
    s = s[:, :-1] + s[:, 1:]
    s = s[:, :, :-1] + s[:, :, 1:]
    return 0.125 * s


def corner_flux_divergence(fpad, jc, jk, adv, half_d, hx, hy, hz, zero_flux, num_threads=1):
    nx, ny, nz = (s - 2 for s in fpad.shape)
    A, B, C = jc[0] * fpad, jc[1] * fpad, jc[2] * fpad
    fc = _corner_mean(fpad)
    qx = -_corner_diff(A, 1, hy) - _corner_diff(B, 2, hz)
    qy = _corner_diff(A, 0, hx) - _corner_diff(C, 2, hz)
    qz = _corner_diff(B, 0, hx) + _corner_diff(C, 1, hy)
    jxy, jxz, jyz = jk
    Fcx = adv[0] * fc - half_d * (jxy * qy + jxz * qz)
    Fcy = adv[1] * fc - half_d * (-jxy * qx + jyz * qz)
    Fcz = adv[2] * fc - half_d * (-jxz * qx - jyz * qy)

    Fx = 0.25 * (Fcx[:, :-1, :-1] + Fcx[:, 1:, :-1] + Fcx[:, :-1, 1:] + Fcx[:, 1:, 1:])
    Fy = 0.25 * (Fcy[:-1, :, :-1] + Fcy[1:, :, :-1] + Fcy[:-1, :, 1:] + Fcy[1:, :, 1:])
    Fz = 0.25 * (Fcz[:-1, :-1, :] + Fcz[1:, :-1, :] + Fcz[:-1, 1:, :] + Fcz[1:, 1:, :])
    zx, zy, zz = zero_flux
    if zx:
        Fx[0] = Fx[nx] = 0.0
    if zy:
        Fy[:, 0] = Fy[:, ny] = 0.0
    if zz:
        Fz[:, :, 0] = Fz[:, :, nz] = 0.0
    rhs = -((Fx[1:] - Fx[:-1]) / hx + (Fy[:, 1:] - Fy[:, :-1]) / hy + (Fz[:, :, 1:] - Fz[:, :, :-1]) / hz)
    return rhs, Fx, Fy, Fz


def box_muller(raw, n):
    raw = np.asarray(raw, dtype=np.uint64)
    m = 2 * ((n + 1) // 2)
    u = ((raw[:, :m] >> np.uint64(11)).astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)
    u1, u2 = u[:, 0::2], u[:, 1::2]
    rad = np.sqrt(-2.0 * np.log(u1))
    ang = 2.0 * np.pi * u2
    out = np.empty((raw.shape[0], m))
    out[:, 0::2] = rad * np.cos(ang)
    out[:, 1::2] = rad * np.sin(ang)
    return out[:, :n].copy()


def apply_boundary(x, lower, upper, periodic):
    bad = ~np.isfinite(x)
    if bad.any():
        return int(np.argmax(bad.any(axis=1)))
    L = upper - lower
    for a in range(x.shape[1]):
        v = x[:, a]
        if periodic[a]:
            out = (v < lower[a]) | (v >= upper[a])
            if out.any():
                w = v[out] - L[a] * np.floor((v[out] - lower[a]) / L[a])
                w[w >= upper[a]] = lower[a]
                v[out] = w
        else:
            v[:] = np.where(v > upper[a], 2 * upper[a] - v, np.where(v < lower[a], 2 * lower[a] - v, v))
            out = (v < lower[a]) | (v > upper[a])
            if out.any():
                return int(np.argmax(out))
    return -1
