# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in _pykernels (same signatures)."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()

ctypedef double complex cplx


cdef inline cplx _conj(cplx z) noexcept nogil:
    return z.real - 1j * z.imag


cdef inline double _abs(cplx z) noexcept nogil:
    return sqrt(z.real * z.real + z.imag * z.imag)


def dsbus_dv(Y, V):
    cdef const cplx[:, ::1] y = np.ascontiguousarray(Y, dtype=np.complex128)
    cdef const cplx[::1] v = np.ascontiguousarray(V, dtype=np.complex128)
    cdef Py_ssize_t n = v.shape[0], i, j
    dva_a = np.empty((n, n), dtype=np.complex128)
    dvm_a = np.empty((n, n), dtype=np.complex128)
    cdef cplx[:, ::1] dva = dva_a
    cdef cplx[:, ::1] dvm = dvm_a
    cdef cplx acc, yv, vi
    cdef cplx[::1] vn = np.empty(n, dtype=np.complex128)
    with nogil:
        for j in range(n):
            vn[j] = v[j] / _abs(v[j])
        for i in range(n):
            acc = 0
            vi = v[i]
            for j in range(n):
                yv = y[i, j] * v[j]
                acc = acc + yv
                dva[i, j] = 1j * vi * (-_conj(yv))
                dvm[i, j] = vi * _conj(y[i, j] * vn[j])
            dva[i, i] = dva[i, i] + 1j * vi * _conj(acc)
            dvm[i, i] = dvm[i, i] + _conj(acc) * vn[i]
    return dva_a, dvm_a


def d2sbus_dv2(Y, V, lam):
    cdef const cplx[:, ::1] y = np.ascontiguousarray(Y, dtype=np.complex128)
    cdef const cplx[::1] v = np.ascontiguousarray(V, dtype=np.complex128)
    cdef const cplx[::1] l = np.ascontiguousarray(lam, dtype=np.complex128)
    cdef Py_ssize_t n = v.shape[0], i, j
    cdef cplx[::1] cur = np.empty(n, dtype=np.complex128)   # I = Y V
    cdef cplx[::1] dl = np.empty(n, dtype=np.complex128)    # (conj(Y)^T (V*lam))
    cdef double[::1] gi = np.empty(n)
    out = [np.empty((n, n), dtype=np.complex128) for _ in range(4)]
    cdef cplx[:, ::1] haa = out[0]
    cdef cplx[:, ::1] hav = out[1]
    cdef cplx[:, ::1] hva = out[2]
    cdef cplx[:, ::1] hvv = out[3]
    cdef cplx acc, c_ij, c_ji, e_ij, f_ij, lv
    with nogil:
        for i in range(n):
            acc = 0
            for j in range(n):
                acc = acc + y[i, j] * v[j]
            cur[i] = acc
            gi[i] = 1.0 / _abs(v[i])
        for i in range(n):
            acc = 0
            for j in range(n):
                acc = acc + _conj(y[j, i]) * v[j] * l[j]
            dl[i] = acc
        for i in range(n):
            lv = l[i] * v[i]
            for j in range(n):
                c_ij = lv * _conj(y[i, j] * v[j])
                c_ji = l[j] * v[j] * _conj(y[j, i] * v[i])
                e_ij = _conj(v[i]) * _conj(y[j, i]) * v[j] * l[j]
                f_ij = c_ij
                if i == j:
                    e_ij = e_ij - _conj(v[i]) * dl[i]
                    f_ij = f_ij - lv * _conj(cur[i])
                haa[i, j] = e_ij + f_ij
                hva[i, j] = 1j * gi[i] * (e_ij - f_ij)
                hvv[i, j] = gi[i] * (c_ij + c_ji) * gi[j]
        for i in range(n):
            for j in range(n):
                hav[i, j] = hva[j, i]
    return out[0], out[1], out[2], out[3]


def step_to_boundary(v, dv):
    cdef const double[::1] a = np.ascontiguousarray(v, dtype=np.float64)
    cdef const double[::1] d = np.ascontiguousarray(dv, dtype=np.float64)
    cdef Py_ssize_t i, n = a.shape[0]
    cdef double best = 1.0, r
    with nogil:
        for i in range(n):
            if d[i] < 0:
                r = -a[i] / d[i]
                if r < best:
                    best = r
    return best


def comp_dot(s, ds, z, dz, double a):
    cdef const double[::1] s_ = np.ascontiguousarray(s, dtype=np.float64)
    cdef const double[::1] ds_ = np.ascontiguousarray(ds, dtype=np.float64)
    cdef const double[::1] z_ = np.ascontiguousarray(z, dtype=np.float64)
    cdef const double[::1] dz_ = np.ascontiguousarray(dz, dtype=np.float64)
    cdef Py_ssize_t i, n = s_.shape[0]
    cdef double acc = 0.0
    with nogil:
        for i in range(n):
            acc += (s_[i] + a * ds_[i]) * (z_[i] + a * dz_[i])
    return acc
