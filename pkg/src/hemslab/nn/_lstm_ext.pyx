# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled LSTM sequence kernels; drop-in replacement for _lstm_numpy."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, tanh

cnp.import_array()


cdef inline double _sig(double z) nogil:
    return 1.0 / (1.0 + exp(-z))


def lstm_seq_forward(double[:, ::1] x, double[::1] h0, double[::1] c0,
                     double[:, ::1] W, double[:, ::1] U, double[::1] b):
    cdef Py_ssize_t T = x.shape[0]
    cdef Py_ssize_t D = x.shape[1]
    cdef Py_ssize_t H = h0.shape[0]
    cdef cnp.ndarray[double, ndim=2] hs_arr = np.empty((T, H))
    cdef cnp.ndarray[double, ndim=2] cs_arr = np.empty((T, H))
    cdef cnp.ndarray[double, ndim=2] gates_arr = np.empty((T, 4 * H))
    cdef double[:, ::1] hs = hs_arr
    cdef double[:, ::1] cs = cs_arr
    cdef double[:, ::1] gates = gates_arr
    cdef double[::1] z = np.empty(4 * H)
    cdef double[::1] h = np.asarray(h0).copy()
    cdef double[::1] c = np.asarray(c0).copy()
    cdef Py_ssize_t t, j, k
    cdef double acc, i_g, f_g, o_g, g_g

    for t in range(T):
        for j in range(4 * H):
            acc = b[j]
            for k in range(D):
                acc += W[j, k] * x[t, k]
            for k in range(H):
                acc += U[j, k] * h[k]
            z[j] = acc
        for j in range(H):
            i_g = _sig(z[j])
            f_g = _sig(z[H + j])
            o_g = _sig(z[2 * H + j])
            g_g = tanh(z[3 * H + j])
            c[j] = f_g * c[j] + i_g * g_g
            h[j] = o_g * tanh(c[j])
            gates[t, j] = i_g
            gates[t, H + j] = f_g
            gates[t, 2 * H + j] = o_g
            gates[t, 3 * H + j] = g_g
            hs[t, j] = h[j]
            cs[t, j] = c[j]
    return hs_arr, cs_arr, gates_arr


def lstm_seq_backward(double[:, ::1] d_hs, double[::1] dc_last,
                      double[:, ::1] x, double[::1] h0, double[::1] c0,
                      double[:, ::1] W, double[:, ::1] U,
                      double[:, ::1] hs, double[:, ::1] cs,
                      double[:, ::1] gates):
    cdef Py_ssize_t T = hs.shape[0]
    cdef Py_ssize_t H = hs.shape[1]
    cdef Py_ssize_t D = x.shape[1]
    cdef cnp.ndarray[double, ndim=2] dx_arr = np.zeros((T, D))
    cdef cnp.ndarray[double, ndim=2] dW_arr = np.zeros((4 * H, D))
    cdef cnp.ndarray[double, ndim=2] dU_arr = np.zeros((4 * H, H))
    cdef cnp.ndarray[double, ndim=1] db_arr = np.zeros(4 * H)
    cdef cnp.ndarray[double, ndim=1] dh0_arr = np.zeros(H)
    cdef cnp.ndarray[double, ndim=1] dc0_arr = np.zeros(H)
    cdef double[:, ::1] dx = dx_arr
    cdef double[:, ::1] dW = dW_arr
    cdef double[:, ::1] dU = dU_arr
    cdef double[::1] db = db_arr
    cdef double[::1] dz = np.empty(4 * H)
    cdef double[::1] dh_next = np.zeros(H)
    cdef double[::1] dc_next = np.asarray(dc_last).copy()
    cdef Py_ssize_t t, j, k
    cdef double i_g, f_g, o_g, g_g, c_t, c_prev, h_prev
    cdef double dh, tc, dc, di, df, do, dg

    for t in range(T - 1, -1, -1):
        for j in range(H):
            i_g = gates[t, j]
            f_g = gates[t, H + j]
            o_g = gates[t, 2 * H + j]
            g_g = gates[t, 3 * H + j]
            c_t = cs[t, j]
            c_prev = cs[t - 1, j] if t > 0 else c0[j]
            dh = d_hs[t, j] + dh_next[j]
            tc = tanh(c_t)
            do = dh * tc
            dc = dc_next[j] + dh * o_g * (1.0 - tc * tc)
            di = dc * g_g
            df = dc * c_prev
            dg = dc * i_g
            dz[j] = di * i_g * (1.0 - i_g)
            dz[H + j] = df * f_g * (1.0 - f_g)
            dz[2 * H + j] = do * o_g * (1.0 - o_g)
            dz[3 * H + j] = dg * (1.0 - g_g * g_g)
            dc_next[j] = dc * f_g
        for j in range(H):
            dh_next[j] = 0.0
        for j in range(4 * H):
            db[j] += dz[j]
            for k in range(D):
                dW[j, k] += dz[j] * x[t, k]
                dx[t, k] += dz[j] * W[j, k]
            for k in range(H):
                h_prev = hs[t - 1, k] if t > 0 else h0[k]
                dU[j, k] += dz[j] * h_prev
                dh_next[k] += dz[j] * U[j, k]
    for j in range(H):
        dh0_arr[j] = dh_next[j]
        dc0_arr[j] = dc_next[j]
    return dx_arr, dh0_arr, dc0_arr, dW_arr, dU_arr, db_arr
