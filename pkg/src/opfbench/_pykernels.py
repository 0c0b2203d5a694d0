"""Numpy reference implementations of the hot kernels."""

import numpy as np


def dsbus_dv(Y, V):
    """Polar derivatives of S_inj = V conj(Y V) w.r.t. angle and magnitude."""
    I = Y @ V
    vn = V / np.abs(V)
    dva = 1j * V[:, None] * np.conj(np.diag(I) - Y * V[None, :])
    dvm = V[:, None] * np.conj(Y * vn[None, :])
    dvm[np.diag_indices_from(dvm)] += np.conj(I) * vn
    return dva, dvm


def d2sbus_dv2(Y, V, lam):
    """Second derivatives of lam' S_inj (complex) in polar coordinates.

    Returns (Haa, Hav, Hva, Hvv); real parts belong to lam' P and, for the
    reactive rows, callers take imaginary parts.
    """
    n = len(V)
    I = Y @ V
    A = np.diag(lam * V)
    B = Y * V[None, :]
    C = A @ np.conj(B)
    D = np.conj(Y).T * V[None, :]
    E = np.diag(np.conj(V)) @ (D * lam[None, :] - np.diag(D @ lam))
    F = C - A * np.conj(I)[None, :]
    Gi = 1.0 / np.abs(V)
    Haa = E + F
    Hva = 1j * Gi[:, None] * (E - F)
    Hav = Hva.T
    Hvv = Gi[:, None] * (C + C.T) * Gi[None, :]
    return Haa, Hav, Hva, Hvv


def step_to_boundary(v, dv):
    """Largest a in (0, 1] with v + a dv >= 0 (v > 0 elementwise)."""
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return min(1.0, float(np.min(-v[neg] / dv[neg])))


def comp_dot(s, ds, z, dz, a):
    """(s + a ds) . (z + a dz)."""
    return float((s + a * ds) @ (z + a * dz))
