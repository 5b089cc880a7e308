"""Pure numpy implementation of the core loops (fallback for the Cython build)."""
import numpy as np


def theta_table(dyz, fz, nodes, alpha, m, scale):
    dyz = np.asarray(dyz, dtype=float)
    fz = np.asarray(fz, dtype=float)
    if fz.shape[0] != dyz.shape[1]:
        raise ValueError("inconsistent shapes")
    out = np.zeros((len(nodes), dyz.shape[0], fz.shape[1]))
    if scale == 0.0:
        return out
    for it, t in enumerate(nodes):
        out[it] = (scale * t**alpha * (t + dyz) ** (-(m + alpha))) @ fz
    return out


def cone_table(dxy, wy, sq, nodes, m, mlam):
    dxy = np.asarray(dxy, dtype=float)
    wy = np.asarray(wy, dtype=float)
    sq = np.asarray(sq, dtype=float)
    T, N, nf = sq.shape
    if dxy.shape[1] != N or wy.shape[0] != N or len(nodes) != T:
        raise ValueError("inconsistent shapes")
    out = np.zeros((nf, dxy.shape[0], T))
    for it, t in enumerate(nodes):
        cone = (t / (t + dxy)) ** mlam * wy
        out[:, :, it] = (cone @ sq[it]).T * t**-m
    return out
