"""Forward/backward pairs for every layer the two classifiers use.

All ops take a leading batch axis. ``*_forward`` returns ``(out, cache)`` and
the matching ``*_backward`` consumes ``(dout, cache)``. Layer objects call
these through the module namespace, so patching a backward here affects every
model built afterwards.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigError, NumericError, ShapeError

BCE_EPS = 1e-7


def check_finite(x, what):
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values in {what}")
    return x


def sigmoid(x):
    x = np.asarray(x)
    out = np.empty_like(x, dtype=np.result_type(x, np.float32))
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# -- embedding -------------------------------------------------------------

def embedding_forward(ids, E, scale=None):
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= E.shape[0]):
        raise IndexError(f"embedding id outside [0, {E.shape[0] - 1}]")
    out = E[ids]
    if scale is not None:
        out = out * scale[..., None]
    return out, (ids, scale, E.shape)


def scatter_rows(ids, g, n_rows):
    """Sum the rows of ``g`` into an ``[n_rows, width]`` array indexed by ``ids``."""
    flat = ids.reshape(-1)
    g = g.reshape(flat.size, -1)
    out = np.zeros((n_rows, g.shape[1]), dtype=g.dtype)
    if flat.size:
        order = np.argsort(flat, kind="stable")
        sorted_ids = flat[order]
        starts = np.flatnonzero(np.r_[True, sorted_ids[1:] != sorted_ids[:-1]])
        out[sorted_ids[starts]] = np.add.reduceat(g[order], starts, axis=0)
    return out


def embedding_backward(dout, cache):
    """Gradient w.r.t. the table: each looked-up row accumulates its upstream grads."""
    ids, scale, shape = cache
    if scale is not None:
        dout = dout * scale[..., None]
    return scatter_rows(ids, dout, shape[0])


# -- conv1d + relu ---------------------------------------------------------

def conv1d_forward(x, W, b):
    """Valid cross-correlation along axis 1 of ``x[B, L, c_in]``, plus bias, then ReLU."""
    B, L, c_in = x.shape
    k, w_in, c_out = W.shape
    if w_in != c_in:
        raise ShapeError(f"conv1d expects {w_in} input channels, got {c_in}")
    if L < k:
        raise ShapeError(f"conv1d kernel {k} longer than sequence {L}")
    Lo = L - k + 1
    cols = sliding_window_view(x, k, axis=1)            # B, Lo, c_in, k
    cols = cols.transpose(0, 1, 3, 2).reshape(B * Lo, k * c_in)
    z = cols @ W.reshape(k * c_in, c_out) + b
    out = np.maximum(z, 0)
    return out.reshape(B, Lo, c_out), (cols, W, z > 0, x.shape)


def conv1d_backward(dout, cache):
    cols, W, active, x_shape = cache
    B, L, c_in = x_shape
    k, _, c_out = W.shape
    Lo = L - k + 1
    dz = dout.reshape(B * Lo, c_out) * active
    dW = (cols.T @ dz).reshape(W.shape)
    db = dz.sum(axis=0)
    dcols = (dz @ W.reshape(k * c_in, c_out).T).reshape(B, Lo, k, c_in)
    dx = np.zeros(x_shape, dtype=dout.dtype)
    for j in range(k):
        dx[:, j:j + Lo] += dcols[:, :, j]
    return dx, dW, db


def embedding_conv1d_forward(ids, E, W, b, scale=None):
    """``conv1d_forward(embedding_forward(ids, E, scale), W, b)`` without materializing
    the embedded sequence.

    The convolution is linear in the looked-up rows, so each kernel offset is
    applied to the table once (``E @ W[j]``) and the result gathered by id.
    """
    B, L = ids.shape
    k, d, c_out = W.shape
    if E.shape[1] != d:
        raise ShapeError(f"conv1d expects {d} input channels, got {E.shape[1]}")
    if L < k:
        raise ShapeError(f"conv1d kernel {k} longer than sequence {L}")
    if ids.size and (ids.min() < 0 or ids.max() >= E.shape[0]):
        raise IndexError(f"embedding id outside [0, {E.shape[0] - 1}]")
    Lo = L - k + 1
    z = np.zeros((B, Lo, c_out), dtype=np.result_type(E, W))
    for j in range(k):
        part = (E @ W[j])[ids[:, j:j + Lo]]
        if scale is not None:
            part *= scale[:, j:j + Lo, None]
        z += part
    z += b
    return np.maximum(z, 0), (ids, scale, E, W, z > 0)


def embedding_conv1d_backward(dout, cache, need_table=True):
    """Returns ``(dE, dW, db)``; ``dE`` is None when ``need_table`` is false."""
    ids, scale, E, W, active = cache
    k = W.shape[0]
    Lo = active.shape[1]
    dz = dout * active
    db = dz.sum(axis=(0, 1))
    dW = np.empty_like(W)
    dE = np.zeros_like(E) if need_table else None
    for j in range(k):
        g = dz if scale is None else dz * scale[:, j:j + Lo, None]
        S = scatter_rows(ids[:, j:j + Lo], g, E.shape[0])
        dW[j] = E.T @ S
        if need_table:
            dE += S @ W[j].T
    return dE, dW, db


# -- maxpool1d -------------------------------------------------------------

def maxpool1d_forward(x, p):
    B, L, C = x.shape
    if L < p:
        raise ShapeError(f"pool width {p} longer than sequence {L}")
    Lo = L // p
    windows = x[:, :Lo * p].reshape(B, Lo, p, C)
    arg = windows.argmax(axis=2)                       # first index on ties
    out = np.take_along_axis(windows, arg[:, :, None], axis=2)[:, :, 0]
    return out, (arg, x.shape, p)


def maxpool1d_backward(dout, cache):
    arg, x_shape, p = cache
    B, L, C = x_shape
    Lo = L // p
    dwin = np.zeros((B, Lo, p, C), dtype=dout.dtype)
    np.put_along_axis(dwin, arg[:, :, None], dout[:, :, None], axis=2)
    dx = np.zeros(x_shape, dtype=dout.dtype)
    dx[:, :Lo * p] = dwin.reshape(B, Lo * p, C)
    return dx


# -- dense -----------------------------------------------------------------

ACTIVATIONS = ("relu", "sigmoid", "none")


def dense_forward(x, W, b, activation="none"):
    if activation not in ACTIVATIONS:
        raise ConfigError(f"unknown activation {activation!r}")
    if x.shape[-1] != W.shape[0] or W.shape[1] != b.shape[0]:
        raise ShapeError(f"dense shapes {x.shape} x {W.shape} + {b.shape} do not conform")
    z = x @ W + b
    if activation == "relu":
        out = np.maximum(z, 0)
    elif activation == "sigmoid":
        out = sigmoid(z)
    else:
        out = z
    return out, (x, W, z, out, activation)


def dense_backward(dout, cache):
    x, W, z, out, activation = cache
    if activation == "relu":
        dz = dout * (z > 0)
    elif activation == "sigmoid":
        dz = dout * out * (1 - out)
    else:
        dz = dout
    return dz @ W.T, x.T @ dz, dz.sum(axis=0)


# -- dropout ---------------------------------------------------------------

def dropout_forward(x, p, train, rng=None):
    """Inverted dropout. ``rng`` is required in train mode when ``p > 0``."""
    if not 0 <= p < 1:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    if not train or p == 0:
        return x, None
    mask = ((rng.random(x.shape) >= p) / (1.0 - p)).astype(x.dtype, copy=False)
    return x * mask, mask


def dropout_backward(dout, cache):
    mask = cache
    return dout if mask is None else dout * mask


# -- lstm ------------------------------------------------------------------

def lstm_forward(x, W, U, b):
    """One LSTM direction over ``x[B, L, d]``; returns the final hidden state.

    Gate columns are ordered input, forget, candidate, output.
    """
    B, L, d = x.shape
    u = U.shape[0]
    if W.shape != (d, 4 * u) or U.shape != (u, 4 * u) or b.shape != (4 * u,):
        raise ShapeError(f"lstm weights {W.shape}, {U.shape}, {b.shape} do not fit input {x.shape}")
    xw = (x.reshape(B * L, d) @ W).reshape(B, L, 4 * u) + b
    h = np.zeros((B, u), dtype=x.dtype)
    c = np.zeros((B, u), dtype=x.dtype)
    hs, cs, gates = [h], [c], []
    for t in range(L):
        a = xw[:, t] + h @ U
        i = sigmoid(a[:, :u])
        f = sigmoid(a[:, u:2 * u])
        g = np.tanh(a[:, 2 * u:3 * u])
        o = sigmoid(a[:, 3 * u:])
        c = f * c + i * g
        h = o * np.tanh(c)
        hs.append(h)
        cs.append(c)
        gates.append((i, f, g, o))
    return h, (x, W, U, hs, cs, gates)


def lstm_backward(dh, cache):
    x, W, U, hs, cs, gates = cache
    B, L, d = x.shape
    u = U.shape[0]
    dU = np.zeros_like(U)
    da_all = np.empty((B, L, 4 * u), dtype=dh.dtype)
    dc = np.zeros_like(dh)
    for t in reversed(range(L)):
        i, f, g, o = gates[t]
        tc = np.tanh(cs[t + 1])
        do = dh * tc
        dc = dc + dh * o * (1 - tc * tc)
        da = np.concatenate([
            dc * g * i * (1 - i),
            dc * cs[t] * f * (1 - f),
            dc * i * (1 - g * g),
            do * o * (1 - o),
        ], axis=1)
        da_all[:, t] = da
        dU += hs[t].T @ da
        dh = da @ U.T
        dc = dc * f
    flat = da_all.reshape(B * L, 4 * u)
    dW = x.reshape(B * L, d).T @ flat
    db = flat.sum(axis=0)
    dx = (flat @ W.T).reshape(B, L, d)
    return dx, dW, dU, db


def bilstm_forward(x, params):
    """``params`` maps ``fwd`` and ``bwd`` to ``(W, U, b)`` triples."""
    h_f, cache_f = lstm_forward(x, *params["fwd"])
    h_b, cache_b = lstm_forward(x[:, ::-1], *params["bwd"])
    return np.concatenate([h_f, h_b], axis=1), (cache_f, cache_b, h_f.shape[1])


def bilstm_backward(dout, cache):
    cache_f, cache_b, u = cache
    dx_f, *g_f = lstm_backward(dout[:, :u], cache_f)
    dx_b, *g_b = lstm_backward(dout[:, u:], cache_b)
    return dx_f + dx_b[:, ::-1], {"fwd": tuple(g_f), "bwd": tuple(g_b)}


# -- loss ------------------------------------------------------------------

def bce_loss(p, y, eps=BCE_EPS):
    p = np.clip(p, eps, 1 - eps)
    return -(y * np.log(p) + (1 - y) * np.log(1 - p))


def bce_grad(p, y, eps=BCE_EPS):
    p = np.clip(p, eps, 1 - eps)
    return (p - y) / (p * (1 - p))


# -- single-example conveniences ----------------------------------------------

def embedding(ids, E):
    return embedding_forward(np.asarray(ids), E)[0]


def conv1d(x, W, b):
    return conv1d_forward(x[None], W, b)[0][0]


def maxpool1d(x, p):
    return maxpool1d_forward(x[None], p)[0][0]


def dense(x, W, b, activation="none"):
    return dense_forward(x[None], W, b, activation)[0][0]


def dropout(x, p, mode="eval", seed=0):
    if mode not in ("train", "eval"):
        raise ConfigError(f"unknown dropout mode {mode!r}")
    rng = np.random.default_rng(seed)
    return dropout_forward(x, p, mode == "train", rng)[0]


def bilstm(x, params):
    return bilstm_forward(x[None], params)[0][0]
