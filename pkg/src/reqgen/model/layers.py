"""Forward/backward pairs for the building blocks of the network.

Every ``*_forward`` returns ``(output, cache)``; the matching ``*_backward``
consumes the upstream gradient and that cache. Arrays are float64.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

LN_EPS = 1e-5
_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def layer_norm_forward(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd, g)


def layer_norm_backward(dy, cache):
    xhat, rstd, g = cache
    d = xhat.shape[-1]
    dg = (dy * xhat).reshape(-1, d).sum(axis=0)
    db = dy.reshape(-1, d).sum(axis=0)
    dxhat = dy * g
    dx = rstd * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dg, db


def gelu_forward(x):
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    return x * cdf, (x, cdf)


def gelu_backward(dy, cache):
    x, cdf = cache
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return dy * (cdf + x * pdf)


def masked_softmax(scores, allowed):
    """Softmax over the last axis; disallowed entries get exactly zero weight.

    Every row must allow at least one entry.
    """
    s = np.where(allowed, scores, -np.inf)
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(dp, p):
    return p * (dp - (dp * p).sum(axis=-1, keepdims=True))


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def log_softmax(x):
    m = x.max(axis=-1, keepdims=True)
    z = x - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _split_heads(x, heads):
    b, n, d = x.shape
    return x.reshape(b, n, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, n, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, n, h * dh)


def attention_forward(a, wq, wk, wv, wo, allowed, heads):
    """Multi-head self-attention; ``allowed`` is a boolean [B, N, N] mask."""
    dh = a.shape[-1] // heads
    scale = 1.0 / np.sqrt(dh)
    q = _split_heads(a @ wq, heads)
    k = _split_heads(a @ wk, heads)
    v = _split_heads(a @ wv, heads)
    p = masked_softmax((q @ k.transpose(0, 1, 3, 2)) * scale, allowed[:, None])
    o = _merge_heads(p @ v)
    return o @ wo, (a, q, k, v, p, o, scale, heads)


def attention_backward(dout, cache, wq, wk, wv, wo):
    a, q, k, v, p, o, scale, heads = cache
    d = a.shape[-1]
    dwo = o.reshape(-1, d).T @ dout.reshape(-1, d)
    do = _split_heads(dout @ wo.T, heads)
    dp = do @ v.transpose(0, 1, 3, 2)
    dv = p.transpose(0, 1, 3, 2) @ do
    ds = softmax_backward(dp, p) * scale
    dq = ds @ k
    dk = ds.transpose(0, 1, 3, 2) @ q
    dq, dk, dv = _merge_heads(dq), _merge_heads(dk), _merge_heads(dv)
    a2 = a.reshape(-1, d)
    dwq = a2.T @ dq.reshape(-1, d)
    dwk = a2.T @ dk.reshape(-1, d)
    dwv = a2.T @ dv.reshape(-1, d)
    da = dq @ wq.T + dk @ wk.T + dv @ wv.T
    return da, dwq, dwk, dwv, dwo


def gru_forward(x, w, u, b):
    """Run a GRU over x [S, T, in] from a zero state; returns states [S, T, h].

    Gate layout along the last axis of w/u/b is (update, reset, candidate).
    """
    s, t_len, _ = x.shape
    hdim = u.shape[0]
    # time-major buffers keep per-step slices contiguous
    gx = np.ascontiguousarray((x @ w + b).transpose(1, 0, 2))
    h = np.zeros((s, hdim))
    h_prev = np.empty((t_len, s, hdim))
    zr_all = np.empty((t_len, s, 2 * hdim))
    n_all = np.empty((t_len, s, hdim))
    u_zr, u_n = u[:, : 2 * hdim], u[:, 2 * hdim :]
    for t in range(t_len):
        h_prev[t] = h
        zr = sigmoid(gx[t, :, : 2 * hdim] + h @ u_zr)
        zr_all[t] = zr
        z, r = zr[:, :hdim], zr[:, hdim:]
        n = np.tanh(gx[t, :, 2 * hdim :] + (r * h) @ u_n)
        n_all[t] = n
        h = h + z * (n - h)
    hs = np.concatenate([h_prev[1:], h[None]], axis=0) if t_len else h_prev
    return hs.transpose(1, 0, 2), (x, h_prev, zr_all, n_all)


def gru_backward(dhs, cache, w, u):
    x, h_prev, zr_all, n_all = cache
    s, t_len, hdim = dhs.shape
    u_zr, u_n = u[:, : 2 * hdim], u[:, 2 * hdim :]
    dhs_t = dhs.transpose(1, 0, 2)
    dgx = np.empty((t_len, s, 3 * hdim))
    dh = np.zeros((s, hdim))
    for t in range(t_len - 1, -1, -1):
        dh = dh + dhs_t[t]
        h, zr, n = h_prev[t], zr_all[t], n_all[t]
        z, r = zr[:, :hdim], zr[:, hdim:]
        dan = dh * z * (1.0 - n * n)
        drh = dan @ u_n.T
        dzr = dgx[t, :, : 2 * hdim]
        dzr[:, :hdim] = dh * (n - h) * z * (1.0 - z)
        dzr[:, hdim:] = drh * h * r * (1.0 - r)
        dgx[t, :, 2 * hdim :] = dan
        dh = dh * (1.0 - z) + drh * r + dzr @ u_zr.T
    flat_h = h_prev.reshape(-1, hdim)
    flat_g = dgx.reshape(-1, 3 * hdim)
    du = np.empty_like(u)
    du[:, : 2 * hdim] = flat_h.T @ flat_g[:, : 2 * hdim]
    rh = (zr_all[:, :, hdim:] * h_prev).reshape(-1, hdim)
    du[:, 2 * hdim :] = rh.T @ flat_g[:, 2 * hdim :]
    dgx = dgx.transpose(1, 0, 2)
    in_dim = x.shape[-1]
    dw = x.reshape(-1, in_dim).T @ dgx.reshape(-1, 3 * hdim)
    db = dgx.reshape(-1, 3 * hdim).sum(axis=0)
    dx = dgx @ w.T
    return dx, dw, du, db
