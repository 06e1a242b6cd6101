"""Central-difference gradient checks, run in float64."""

import numpy as np

from . import functional as F
from .model import ModelSpec, build_model

DEFAULT_STEP = 1e-5
DENOM_FLOOR = 1e-8
TOLERANCE = 1e-4


def rel_error(analytic, numeric):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), DENOM_FLOOR)


def numeric_grad(f, x, idx, step=DEFAULT_STEP):
    """Central differences of scalar ``f()`` w.r.t. ``x.flat[i]`` for i in ``idx``.

    ``x`` is perturbed in place and restored.
    """
    flat = x.reshape(-1)
    out = np.empty(len(idx))
    for j, i in enumerate(idx):
        old = flat[i]
        flat[i] = old + step
        fp = f()
        flat[i] = old - step
        fm = f()
        flat[i] = old
        out[j] = (fp - fm) / (2 * step)
    return out


def _check(f, analytic, tensors, rng, per_tensor=50, step=DEFAULT_STEP, candidates=None):
    worst = 0.0
    for name, x in tensors.items():
        pool = np.arange(x.size) if candidates is None or name not in candidates else candidates[name]
        idx = rng.choice(pool, size=min(per_tensor, len(pool)), replace=False)
        num = numeric_grad(f, x, idx, step)
        ana = analytic[name].reshape(-1)[idx]
        worst = max(worst, float(rel_error(ana, num).max()))
    return worst


def _projection(rng, shape):
    return rng.standard_normal(shape)


def check_embedding(seed=0, step=DEFAULT_STEP):
    rng = np.random.default_rng(seed)
    E = rng.standard_normal((4, 3))
    ids = np.array([[1, 3]])
    R = _projection(rng, (1, 2, 3))

    def f():
        return float(np.sum(F.embedding_forward(ids, E)[0] * R))

    _, cache = F.embedding_forward(ids, E)
    dE = F.embedding_backward(R, cache)
    return _check(f, {"E": dE}, {"E": E}, rng, step=step)


def check_conv1d(seed=0, step=DEFAULT_STEP):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 10, 4))
    W = rng.standard_normal((3, 4, 5)) * 0.5
    b = rng.standard_normal(5) * 0.1
    R = _projection(rng, (2, 8, 5))

    def f():
        return float(np.sum(F.conv1d_forward(x, W, b)[0] * R))

    _, cache = F.conv1d_forward(x, W, b)
    dx, dW, db = F.conv1d_backward(R, cache)
    return _check(f, {"x": dx, "W": dW, "b": db}, {"x": x, "W": W, "b": b}, rng, step=step)


def check_maxpool1d(seed=0, step=DEFAULT_STEP):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 12, 3))
    R = _projection(rng, (2, 6, 3))

    def f():
        return float(np.sum(F.maxpool1d_forward(x, 2)[0] * R))

    _, cache = F.maxpool1d_forward(x, 2)
    dx = F.maxpool1d_backward(R, cache)
    return _check(f, {"x": dx}, {"x": x}, rng, step=step)


def check_dense(seed=0, step=DEFAULT_STEP):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for activation in ("none", "relu", "sigmoid"):
        x = rng.standard_normal((3, 8))
        W = rng.standard_normal((8, 4)) * 0.5
        b = rng.standard_normal(4) * 0.1
        R = _projection(rng, (3, 4))

        def f():
            return float(np.sum(F.dense_forward(x, W, b, activation)[0] * R))

        _, cache = F.dense_forward(x, W, b, activation)
        dx, dW, db = F.dense_backward(R, cache)
        worst = max(worst, _check(f, {"x": dx, "W": dW, "b": db},
                                  {"x": x, "W": W, "b": b}, rng, step=step))
    return worst


def check_dropout_eval(seed=0, step=DEFAULT_STEP):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 6))
    R = _projection(rng, (2, 6))

    def f():
        return float(np.sum(F.dropout_forward(x, 0.5, False)[0] * R))

    _, cache = F.dropout_forward(x, 0.5, False)
    dx = F.dropout_backward(R, cache)
    return _check(f, {"x": dx}, {"x": x}, rng, step=step)


def check_bilstm(seed=0, step=DEFAULT_STEP, L=5, d=4, u=3):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, L, d))
    tensors = {"x": x}
    params = {}
    for direction in ("fwd", "bwd"):
        W = rng.standard_normal((d, 4 * u)) * 0.5
        U = rng.standard_normal((u, 4 * u)) * 0.5
        b = rng.standard_normal(4 * u) * 0.1
        params[direction] = (W, U, b)
        tensors.update({f"{direction}_W": W, f"{direction}_U": U, f"{direction}_b": b})
    R = _projection(rng, (2, 2 * u))

    def f():
        return float(np.sum(F.bilstm_forward(x, params)[0] * R))

    _, cache = F.bilstm_forward(x, params)
    dx, g = F.bilstm_backward(R, cache)
    analytic = {"x": dx}
    for direction in ("fwd", "bwd"):
        for name, arr in zip("WUb", g[direction]):
            analytic[f"{direction}_{name}"] = arr
    return _check(f, analytic, tensors, rng, per_tensor=60, step=step)


LAYER_CHECKS = {
    "embedding": check_embedding,
    "conv1d": check_conv1d,
    "maxpool1d": check_maxpool1d,
    "dense": check_dense,
    "dropout_eval": check_dropout_eval,
    "bilstm": check_bilstm,
}


def tiny_spec(kind):
    if kind == "cnn":
        return ModelSpec(kind="cnn", embed_dim=6, conv=((4, 3), (4, 3), (4, 3)), pool=2,
                         dense_units=5, dropout_p=0.5)
    return ModelSpec(kind="bilstm", embed_dim=6, lstm_units=4)


def grad_check(spec, input, y, step=DEFAULT_STEP, seed=0, n_params=200, n_rows=None,
               fuse=True):
    """Max relative error between backprop and central differences.

    Builds a float64 model for ``spec`` sized to ``input`` and compares the
    two on a seeded sample of at least ``n_params`` parameters drawn from
    every tensor. Dropout runs in eval mode. Embedding samples are taken from
    the rows the input actually touches.
    """
    values = getattr(input, "values", input)
    scale = getattr(input, "scale", None)
    ids = np.asarray(values)[None]
    scale = None if scale is None else np.asarray(scale, dtype=np.float64)[None]
    rng = np.random.default_rng(seed)
    if n_rows is None:
        n_rows = int(ids.max()) + 1
    rows = rng.uniform(-0.5, 0.5, size=(n_rows, spec.embed_dim))
    model = build_model(spec, ids.shape[1], rows, seed=seed, dtype=np.float64, fuse=fuse)
    yv = np.array([float(y)])

    def f():
        p = F.sigmoid(model.logits(ids, scale, train=False))
        return float(np.mean(F.bce_loss(p, yv)))

    _, grads, _ = model.loss_and_grads(ids, scale, yv, train=False)
    grads = {k: v.copy() for k, v in grads.items()}
    params = model.trainable_parameters()
    touched = np.unique(ids)
    candidates = {}
    if "embedding.E" in params:
        d = spec.embed_dim
        candidates["embedding.E"] = (touched[:, None] * d + np.arange(d)).reshape(-1)
    # every tensor contributes up to n_params entries, so the total is >= n_params
    return _check(f, grads, params, rng, per_tensor=n_params, step=step,
                  candidates=candidates)


def grad_check_all(seed=0, step=DEFAULT_STEP):
    """Per-layer and whole-model max relative errors, keyed by name."""
    report = {name: check(seed=seed, step=step) for name, check in LAYER_CHECKS.items()}
    rng = np.random.default_rng(seed)
    ids = rng.integers(0, 30, size=25)
    report["model_cnn"] = grad_check(tiny_spec("cnn"), ids, 1, step, seed, n_rows=30)
    report["model_cnn_unfused"] = grad_check(tiny_spec("cnn"), ids, 1, step, seed, n_rows=30,
                                             fuse=False)
    report["model_bilstm"] = grad_check(tiny_spec("bilstm"), ids, 0, step, seed, n_rows=30)
    return report
