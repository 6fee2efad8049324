"""Numpy reference implementations of the hot kernels.

Every function here has a compiled twin in ``_fastcore.pyx`` with an
identical signature; ``dga.kernels`` picks one set at import time. All
arrays are float64 and C-contiguous. Forward kernels return whatever
cached intermediates their backward twin needs, so an op is recomputed
zero times during the reverse sweep.
"""

import numpy as np

name = "numpy"


# -- row softmax ---------------------------------------------------------

def softmax_fwd(x):
    # max-subtraction keeps exp() in range for logits like 1e3
    shifted = x - x.max(axis=1, keepdims=True)
    y = np.exp(shifted)
    y /= y.sum(axis=1, keepdims=True)
    return y


def softmax_bwd(y, dy):
    inner = (y * dy).sum(axis=1, keepdims=True)
    return y * (dy - inner)


# -- fused LSTM cell (gate order: input, forget, candidate, output) ------

def lstm_gates_fwd(z, c_prev):
    hdim = c_prev.shape[0]
    i_s = _sigmoid(z[:hdim])
    f_s = _sigmoid(z[hdim:2 * hdim])
    g_t = np.tanh(z[2 * hdim:3 * hdim])
    o_s = _sigmoid(z[3 * hdim:])
    c = f_s * c_prev + i_s * g_t
    hc = np.tanh(c)
    h = o_s * hc
    return h, c, (i_s, f_s, g_t, o_s, hc)


def lstm_gates_bwd(cache, c_prev, dh, dc):
    i_s, f_s, g_t, o_s, hc = cache
    dc_total = dc + dh * o_s * (1.0 - hc * hc)
    dz = np.concatenate([
        dc_total * g_t * i_s * (1.0 - i_s),
        dc_total * c_prev * f_s * (1.0 - f_s),
        dc_total * i_s * (1.0 - g_t * g_t),
        dh * hc * o_s * (1.0 - o_s),
    ])
    dc_prev = dc_total * f_s
    return dz, dc_prev


def _sigmoid(x):
    # piecewise form avoids overflow in exp for large |x|
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# -- pairwise additive-tanh attention scores -----------------------------

def pair_score_fwd(u, v, w):
    """a[r, c] = w . tanh(u[r] + v[c])"""
    t3 = np.tanh(u[:, None, :] + v[None, :, :])
    a = t3 @ w
    return a, t3


def pair_score_bwd(t3, w, da):
    dpre = da[:, :, None] * w[None, None, :] * (1.0 - t3 * t3)
    du = dpre.sum(axis=1)
    dv = dpre.sum(axis=0)
    dw = np.einsum("rc,rcd->d", da, t3)
    return du, dv, dw


# -- gated aggregation over typed incoming edges -------------------------

def edge_prop_fwd(s, nu, b, edges):
    """out[k] = sum over j with edges[j,k] = n > 0 of nu[n-1] * (s[j] + b[n-1])."""
    mask = edges > 0
    idx = np.where(mask, edges - 1, 0)
    nu_e = np.where(mask, nu[idx], 0.0)
    out = nu_e.T @ s
    out += np.einsum("jk,jkd->kd", nu_e, b[idx])
    return out


def edge_prop_bwd(s, nu, b, edges, g):
    mask = edges > 0
    idx = np.where(mask, edges - 1, 0)
    nu_e = np.where(mask, nu[idx], 0.0)
    ds = nu_e @ g
    contrib = (s @ g.T + np.einsum("jkd,kd->jk", b[idx], g))
    dnu = np.zeros_like(nu)
    np.add.at(dnu, idx[mask], contrib[mask])
    db = np.zeros_like(b)
    per_edge = nu_e[:, :, None] * g[None, :, :]
    np.add.at(db, idx[mask], per_edge[mask])
    return ds, dnu, db


# -- accumulator-normalized memory blend ---------------------------------

def blend_fwd(inner, m_prev, lam, p_prev, p_new, eps):
    """out[k] = (lam[k]*inner[k] + p_prev[k]*m_prev[k]) / p_new[k],
    except rows with p_new <= eps or lam == 0 pass m_prev through untouched
    (the pass-through is exact, so it only sharpens the formula's value).
    """
    out = (lam[:, None] * inner + p_prev[:, None] * m_prev) / np.maximum(
        p_new, eps)[:, None]
    frozen = (p_new <= eps) | (lam == 0.0)
    out[frozen] = m_prev[frozen]
    return out


def blend_bwd(inner, m_prev, lam, p_prev, p_new, out, g, eps):
    zero = p_new <= eps
    live = ~zero
    inv = np.zeros_like(p_new)
    inv[live] = 1.0 / p_new[live]
    gi = g * inv[:, None]
    dinner = lam[:, None] * gi
    dm_prev = p_prev[:, None] * gi
    dm_prev[zero] = g[zero]
    dlam = (inner * gi).sum(axis=1)
    dp_prev = (m_prev * gi).sum(axis=1)
    dp_new = -(out * gi).sum(axis=1)
    return dinner, dm_prev, dlam, dp_prev, dp_new


# -- row-wise L2 normalization -------------------------------------------

def l2norm_rows_fwd(x, eps):
    norms = np.sqrt((x * x).sum(axis=1))
    y = x / (norms + eps)[:, None]
    return y, norms


def l2norm_rows_bwd(x, norms, eps, dy):
    denom = norms + eps
    dx = dy / denom[:, None]
    live = norms > 0.0
    coef = np.zeros_like(norms)
    coef[live] = (x[live] * dy[live]).sum(axis=1) / (
        norms[live] * denom[live] * denom[live])
    dx -= x * coef[:, None]
    return dx
