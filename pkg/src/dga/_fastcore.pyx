# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the kernels in ``kernels_numpy``.

Loops are fused so each kernel touches memory once instead of allocating
a numpy temporary per elementwise step; signatures and cache layouts are
identical to the numpy backend.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, sqrt, tanh

cnp.import_array()

name = "compiled"


cdef inline double _sig(double x) nogil:
    if x >= 0.0:
        return 1.0 / (1.0 + exp(-x))
    cdef double e = exp(x)
    return e / (1.0 + e)


# -- row softmax ---------------------------------------------------------

def softmax_fwd(double[:, ::1] x):
    cdef Py_ssize_t r = x.shape[0], c = x.shape[1], i, j
    out = np.empty((r, c), dtype=np.float64)
    cdef double[:, ::1] y = out
    cdef double m, s
    for i in range(r):
        m = x[i, 0]
        for j in range(1, c):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(c):
            y[i, j] = exp(x[i, j] - m)
            s += y[i, j]
        for j in range(c):
            y[i, j] /= s
    return out


def softmax_bwd(double[:, ::1] y, double[:, ::1] dy):
    cdef Py_ssize_t r = y.shape[0], c = y.shape[1], i, j
    out = np.empty((r, c), dtype=np.float64)
    cdef double[:, ::1] dx = out
    cdef double inner
    for i in range(r):
        inner = 0.0
        for j in range(c):
            inner += y[i, j] * dy[i, j]
        for j in range(c):
            dx[i, j] = y[i, j] * (dy[i, j] - inner)
    return out


# -- fused LSTM cell -----------------------------------------------------

def lstm_gates_fwd(double[::1] z, double[::1] c_prev):
    cdef Py_ssize_t h = c_prev.shape[0], k
    h_arr = np.empty(h, dtype=np.float64)
    c_arr = np.empty(h, dtype=np.float64)
    i_arr = np.empty(h, dtype=np.float64)
    f_arr = np.empty(h, dtype=np.float64)
    g_arr = np.empty(h, dtype=np.float64)
    o_arr = np.empty(h, dtype=np.float64)
    hc_arr = np.empty(h, dtype=np.float64)
    cdef double[::1] hv = h_arr, cv = c_arr, iv = i_arr, fv = f_arr
    cdef double[::1] gv = g_arr, ov = o_arr, hcv = hc_arr
    for k in range(h):
        iv[k] = _sig(z[k])
        fv[k] = _sig(z[h + k])
        gv[k] = tanh(z[2 * h + k])
        ov[k] = _sig(z[3 * h + k])
        cv[k] = fv[k] * c_prev[k] + iv[k] * gv[k]
        hcv[k] = tanh(cv[k])
        hv[k] = ov[k] * hcv[k]
    return h_arr, c_arr, (i_arr, f_arr, g_arr, o_arr, hc_arr)


def lstm_gates_bwd(cache, double[::1] c_prev, double[::1] dh, double[::1] dc):
    i_arr, f_arr, g_arr, o_arr, hc_arr = cache
    cdef double[::1] iv = i_arr, fv = f_arr, gv = g_arr, ov = o_arr, hcv = hc_arr
    cdef Py_ssize_t h = c_prev.shape[0], k
    dz_arr = np.empty(4 * h, dtype=np.float64)
    dcp_arr = np.empty(h, dtype=np.float64)
    cdef double[::1] dz = dz_arr, dcp = dcp_arr
    cdef double dct
    for k in range(h):
        dct = dc[k] + dh[k] * ov[k] * (1.0 - hcv[k] * hcv[k])
        dz[k] = dct * gv[k] * iv[k] * (1.0 - iv[k])
        dz[h + k] = dct * c_prev[k] * fv[k] * (1.0 - fv[k])
        dz[2 * h + k] = dct * iv[k] * (1.0 - gv[k] * gv[k])
        dz[3 * h + k] = dh[k] * hcv[k] * ov[k] * (1.0 - ov[k])
        dcp[k] = dct * fv[k]
    return dz_arr, dcp_arr


# -- pairwise additive-tanh attention scores -----------------------------

def pair_score_fwd(double[:, ::1] u, double[:, ::1] v, double[::1] w):
    # thousands of transcendental evals per call: numpy's vectorized tanh
    # beats a scalar libc-tanh loop here, so the forward stays vectorized
    # (and bit-identical to the fallback); the fused backward is the win
    t3 = np.tanh(np.asarray(u)[:, None, :] + np.asarray(v)[None, :, :])
    a = t3 @ np.asarray(w)
    return a, t3


def pair_score_bwd(double[:, :, ::1] t3, double[::1] w, double[:, ::1] da):
    cdef Py_ssize_t r = t3.shape[0], c = t3.shape[1], d = t3.shape[2], i, j, k
    du_arr = np.zeros((r, d), dtype=np.float64)
    dv_arr = np.zeros((c, d), dtype=np.float64)
    dw_arr = np.zeros(d, dtype=np.float64)
    cdef double[:, ::1] du = du_arr, dv = dv_arr
    cdef double[::1] dw = dw_arr
    cdef double gda, tv, dpre
    for i in range(r):
        for j in range(c):
            gda = da[i, j]
            for k in range(d):
                tv = t3[i, j, k]
                dpre = gda * w[k] * (1.0 - tv * tv)
                du[i, k] += dpre
                dv[j, k] += dpre
                dw[k] += gda * tv
    return du_arr, dv_arr, dw_arr


# -- gated aggregation over typed incoming edges -------------------------

def edge_prop_fwd(double[:, ::1] s, double[::1] nu, double[:, ::1] b,
                  long[:, ::1] edges):
    cdef Py_ssize_t n = s.shape[0], d = s.shape[1], j, k, m
    cdef long code
    out_arr = np.zeros((n, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double gate
    for j in range(n):
        for k in range(n):
            code = edges[j, k]
            if code > 0:
                gate = nu[code - 1]
                for m in range(d):
                    out[k, m] += gate * (s[j, m] + b[code - 1, m])
    return out_arr


def edge_prop_bwd(double[:, ::1] s, double[::1] nu, double[:, ::1] b,
                  long[:, ::1] edges, double[:, ::1] g):
    cdef Py_ssize_t n = s.shape[0], d = s.shape[1], j, k, m
    cdef long code
    ds_arr = np.zeros((n, d), dtype=np.float64)
    dnu_arr = np.zeros(nu.shape[0], dtype=np.float64)
    db_arr = np.zeros((b.shape[0], b.shape[1]), dtype=np.float64)
    cdef double[:, ::1] ds = ds_arr, db = db_arr
    cdef double[::1] dnu = dnu_arr
    cdef double gate, acc
    for j in range(n):
        for k in range(n):
            code = edges[j, k]
            if code > 0:
                gate = nu[code - 1]
                acc = 0.0
                for m in range(d):
                    ds[j, m] += gate * g[k, m]
                    acc += (s[j, m] + b[code - 1, m]) * g[k, m]
                    db[code - 1, m] += gate * g[k, m]
                dnu[code - 1] += acc
    return ds_arr, dnu_arr, db_arr


# -- accumulator-normalized memory blend ---------------------------------

def blend_fwd(double[:, ::1] inner, double[:, ::1] m_prev, double[::1] lam,
              double[::1] p_prev, double[::1] p_new, double eps):
    cdef Py_ssize_t n = inner.shape[0], d = inner.shape[1], k, m
    out_arr = np.empty((n, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double inv
    for k in range(n):
        if p_new[k] <= eps or lam[k] == 0.0:
            for m in range(d):
                out[k, m] = m_prev[k, m]
        else:
            inv = 1.0 / p_new[k]
            for m in range(d):
                out[k, m] = (lam[k] * inner[k, m]
                             + p_prev[k] * m_prev[k, m]) * inv
    return out_arr


def blend_bwd(double[:, ::1] inner, double[:, ::1] m_prev, double[::1] lam,
              double[::1] p_prev, double[::1] p_new, double[:, ::1] out,
              double[:, ::1] g, double eps):
    cdef Py_ssize_t n = inner.shape[0], d = inner.shape[1], k, m
    dinner_arr = np.zeros((n, d), dtype=np.float64)
    dm_arr = np.zeros((n, d), dtype=np.float64)
    dlam_arr = np.zeros(n, dtype=np.float64)
    dpp_arr = np.zeros(n, dtype=np.float64)
    dpn_arr = np.zeros(n, dtype=np.float64)
    cdef double[:, ::1] dinner = dinner_arr, dm = dm_arr
    cdef double[::1] dlam = dlam_arr, dpp = dpp_arr, dpn = dpn_arr
    cdef double inv, gi, a_in, a_m, a_out
    for k in range(n):
        if p_new[k] <= eps:
            for m in range(d):
                dm[k, m] = g[k, m]
        else:
            inv = 1.0 / p_new[k]
            a_in = 0.0
            a_m = 0.0
            a_out = 0.0
            for m in range(d):
                gi = g[k, m] * inv
                dinner[k, m] = lam[k] * gi
                dm[k, m] = p_prev[k] * gi
                a_in += inner[k, m] * gi
                a_m += m_prev[k, m] * gi
                a_out += out[k, m] * gi
            dlam[k] = a_in
            dpp[k] = a_m
            dpn[k] = -a_out
    return dinner_arr, dm_arr, dlam_arr, dpp_arr, dpn_arr


# -- row-wise L2 normalization -------------------------------------------

def l2norm_rows_fwd(double[:, ::1] x, double eps):
    cdef Py_ssize_t r = x.shape[0], c = x.shape[1], i, j
    y_arr = np.empty((r, c), dtype=np.float64)
    n_arr = np.empty(r, dtype=np.float64)
    cdef double[:, ::1] y = y_arr
    cdef double[::1] norms = n_arr
    cdef double s, inv
    for i in range(r):
        s = 0.0
        for j in range(c):
            s += x[i, j] * x[i, j]
        s = sqrt(s)
        norms[i] = s
        inv = 1.0 / (s + eps)
        for j in range(c):
            y[i, j] = x[i, j] * inv
    return y_arr, n_arr


def l2norm_rows_bwd(double[:, ::1] x, double[::1] norms, double eps,
                    double[:, ::1] dy):
    cdef Py_ssize_t r = x.shape[0], c = x.shape[1], i, j
    dx_arr = np.empty((r, c), dtype=np.float64)
    cdef double[:, ::1] dx = dx_arr
    cdef double denom, coef, dot
    for i in range(r):
        denom = norms[i] + eps
        if norms[i] > 0.0:
            dot = 0.0
            for j in range(c):
                dot += x[i, j] * dy[i, j]
            coef = dot / (norms[i] * denom * denom)
        else:
            coef = 0.0
        for j in range(c):
            dx[i, j] = dy[i, j] / denom - x[i, j] * coef
    return dx_arr
