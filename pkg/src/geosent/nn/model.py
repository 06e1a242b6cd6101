"""Layer objects and the two classifier architectures.

CNN:    embedding -> 3 x (conv1d+relu -> maxpool) -> flatten -> dense(relu)
        -> dropout -> dense -> sigmoid
BiLSTM: embedding -> bidirectional lstm -> dense -> sigmoid
"""

import json
from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ConfigError, ShapeError
from . import functional as F

KINDS = ("cnn", "bilstm")


@dataclass
class ModelSpec:
    kind: str = "cnn"
    embed_dim: int = 200
    conv: tuple = ((64, 3), (64, 3), (64, 3))
    pool: int = 2
    dense_units: int = 64
    dropout_p: float = 0.5
    lstm_units: int = 64
    freeze_embedding: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"model kind must be one of {KINDS}, got {self.kind!r}")
        self.conv = tuple(tuple(int(v) for v in stage) for stage in self.conv)
        if self.kind == "cnn":
            if len(self.conv) != 3 or any(len(s) != 2 or min(s) < 1 for s in self.conv):
                raise ConfigError("cnn needs three (filters, kernel) conv stages")
            if self.pool < 1 or self.dense_units < 1:
                raise ConfigError("pool width and dense units must be positive")
            if not 0 <= self.dropout_p < 1:
                raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        elif self.lstm_units < 1:
            raise ConfigError("bilstm needs lstm_units >= 1")

    def to_dict(self):
        d = asdict(self)
        d["conv"] = [list(s) for s in self.conv]
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    def cnn_shapes(self, seq_len):
        """Sequence length after every conv and pool stage."""
        if self.kind != "cnn":
            raise ConfigError("only cnn specs have conv stages")
        shapes = []
        L = seq_len
        for filters, k in self.conv:
            if L < k:
                raise ShapeError(f"conv kernel {k} exceeds length {L} (input length {seq_len})")
            L = L - k + 1
            if L < self.pool:
                raise ShapeError(f"pool width {self.pool} exceeds length {L} (input length {seq_len})")
            L //= self.pool
            shapes.append((L, filters))
        return shapes


def glorot(rng, fan_in, fan_out, shape, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    def __init__(self):
        self.params = OrderedDict()
        self.grads = OrderedDict()
        self.trainable = True

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError


class Embedding(Layer):
    def __init__(self, rows, trainable=True):
        super().__init__()
        self.params["E"] = rows
        self.trainable = trainable

    def forward(self, ids, scale=None, train=False):
        if scale is not None and np.all(scale == 1):
            scale = None
        out, self.cache = F.embedding_forward(ids, self.params["E"], scale)
        return out

    def backward(self, dout):
        if self.trainable:
            self.grads["E"] = F.embedding_backward(dout, self.cache)
        return None


class Conv1D(Layer):
    def __init__(self, c_in, c_out, k, rng, dtype):
        super().__init__()
        self.params["W"] = glorot(rng, k * c_in, k * c_out, (k, c_in, c_out), dtype)
        self.params["b"] = np.zeros(c_out, dtype=dtype)

    def forward(self, x, train=False):
        out, self.cache = F.conv1d_forward(x, self.params["W"], self.params["b"])
        return out

    def backward(self, dout):
        dx, self.grads["W"], self.grads["b"] = F.conv1d_backward(dout, self.cache)
        return dx


class MaxPool1D(Layer):
    def __init__(self, p):
        super().__init__()
        self.p = p

    def forward(self, x, train=False):
        out, self.cache = F.maxpool1d_forward(x, self.p)
        return out

    def backward(self, dout):
        return F.maxpool1d_backward(dout, self.cache)


class Flatten(Layer):
    def forward(self, x, train=False):
        self.shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self.shape)


class Dense(Layer):
    def __init__(self, n_in, n_out, activation, rng, dtype):
        super().__init__()
        self.activation = activation
        self.params["W"] = glorot(rng, n_in, n_out, (n_in, n_out), dtype)
        self.params["b"] = np.zeros(n_out, dtype=dtype)

    def forward(self, x, train=False):
        out, self.cache = F.dense_forward(x, self.params["W"], self.params["b"], self.activation)
        return out

    def backward(self, dout):
        dx, self.grads["W"], self.grads["b"] = F.dense_backward(dout, self.cache)
        return dx


class Dropout(Layer):
    """Inverted dropout; the mask stream is a function of (seed, site, step)."""

    def __init__(self, p, seed, site):
        super().__init__()
        self.p = p
        self.seed = seed
        self.site = site
        self.step = 0

    def forward(self, x, train=False):
        rng = None
        if train:
            rng = np.random.default_rng([self.seed, self.site, self.step])
            self.step += 1
        out, self.cache = F.dropout_forward(x, self.p, train, rng)
        return out

    def backward(self, dout):
        return F.dropout_backward(dout, self.cache)


class BiLSTM(Layer):
    def __init__(self, d, u, rng, dtype):
        super().__init__()
        for direction in ("fwd", "bwd"):
            self.params[f"{direction}_W"] = glorot(rng, d, 4 * u, (d, 4 * u), dtype)
            self.params[f"{direction}_U"] = glorot(rng, u, 4 * u, (u, 4 * u), dtype)
            b = np.zeros(4 * u, dtype=dtype)
            b[u:2 * u] = 1.0  # forget-gate bias
            self.params[f"{direction}_b"] = b

    def _triples(self):
        p = self.params
        return {d: (p[f"{d}_W"], p[f"{d}_U"], p[f"{d}_b"]) for d in ("fwd", "bwd")}

    def forward(self, x, train=False):
        out, self.cache = F.bilstm_forward(x, self._triples())
        return out

    def backward(self, dout):
        dx, g = F.bilstm_backward(dout, self.cache)
        for d in ("fwd", "bwd"):
            self.grads[f"{d}_W"], self.grads[f"{d}_U"], self.grads[f"{d}_b"] = g[d]
        return dx


class Model:
    """A stack of named layers ending in a single logit, read through a sigmoid."""

    def __init__(self, spec, seq_len, layers, fuse=True):
        self.spec = spec
        self.seq_len = seq_len
        self.layers = OrderedDict(layers)
        # the CNN's embedding and first conv run as one op; same maths, far fewer flops
        self.fused = fuse and "conv1" in self.layers

    @property
    def embedding(self):
        return self.layers["embedding"]

    def parameters(self):
        return OrderedDict(
            (f"{lname}.{pname}", arr)
            for lname, layer in self.layers.items()
            for pname, arr in layer.params.items()
        )

    def trainable_parameters(self):
        return OrderedDict(
            (f"{lname}.{pname}", arr)
            for lname, layer in self.layers.items() if layer.trainable
            for pname, arr in layer.params.items()
        )

    def gradients(self):
        return OrderedDict(
            (f"{lname}.{pname}", g)
            for lname, layer in self.layers.items() if layer.trainable
            for pname, g in layer.grads.items()
        )

    def logits(self, ids, scale=None, train=False):
        ids = np.asarray(ids)
        if ids.ndim == 1:
            ids = ids[None]
            scale = None if scale is None else np.asarray(scale)[None]
        if ids.shape[1] != self.seq_len:
            raise ShapeError(f"model expects length-{self.seq_len} inputs, got {ids.shape[1]}")
        dtype = self.embedding.params["E"].dtype
        if scale is not None:
            scale = np.asarray(scale, dtype=dtype)
        emb = self.embedding
        if self.fused:
            conv = self.layers["conv1"]
            h, self._fused_cache = F.embedding_conv1d_forward(
                ids, emb.params["E"], conv.params["W"], conv.params["b"], scale)
        else:
            h = emb.forward(ids, scale, train)
        for layer in list(self.layers.values())[self._n_head:]:
            h = layer.forward(h, train)
        return h[:, 0]

    @property
    def _n_head(self):
        return 2 if self.fused else 1

    def predict_proba(self, ids, scale=None):
        return F.sigmoid(self.logits(ids, scale, train=False))

    def backward_logits(self, dlogits):
        g = dlogits[:, None]
        for layer in reversed(list(self.layers.values())[self._n_head:]):
            g = layer.backward(g)
        emb = self.embedding
        if self.fused:
            conv = self.layers["conv1"]
            dE, conv.grads["W"], conv.grads["b"] = F.embedding_conv1d_backward(
                g, self._fused_cache, need_table=emb.trainable)
            if emb.trainable:
                emb.grads["E"] = dE
        else:
            emb.backward(g)
        return self.gradients()

    def loss_and_grads(self, ids, scale, y, train=True):
        """Mean BCE over the batch, gradients w.r.t. every trainable tensor, and
        the predicted probabilities."""
        y = np.asarray(y, dtype=float)
        p = F.sigmoid(self.logits(ids, scale, train))
        F.check_finite(p, "model output")
        loss = float(np.mean(F.bce_loss(p, y)))
        # d(bce o sigmoid)/dlogit; the clamp in bce_loss only guards log(0)
        dlogits = ((p - y) / len(y)).astype(p.dtype)
        return loss, self.backward_logits(dlogits), p


def build_model(spec, seq_len, embedding_rows, seed=0, dtype=np.float32, fuse=True):
    """Assemble a model for inputs of length ``seq_len``.

    ``embedding_rows`` is the initial table (an ``EmbeddingMatrix`` or array);
    it is copied, so the caller's matrix is never mutated by training.
    """
    rows = getattr(embedding_rows, "rows", embedding_rows)
    rows = np.array(rows, dtype=dtype)
    if rows.shape[1] != spec.embed_dim:
        raise ConfigError(f"embedding dim {rows.shape[1]} != spec embed_dim {spec.embed_dim}")
    rng = np.random.default_rng(seed)
    d = spec.embed_dim
    layers = [("embedding", Embedding(rows, trainable=not spec.freeze_embedding))]
    if spec.kind == "cnn":
        shapes = spec.cnn_shapes(seq_len)
        c_in = d
        for i, (filters, k) in enumerate(spec.conv, 1):
            layers.append((f"conv{i}", Conv1D(c_in, filters, k, rng, dtype)))
            layers.append((f"pool{i}", MaxPool1D(spec.pool)))
            c_in = filters
        L_out, c_out = shapes[-1]
        layers.append(("flatten", Flatten()))
        layers.append(("dense1", Dense(L_out * c_out, spec.dense_units, "relu", rng, dtype)))
        layers.append(("dropout", Dropout(spec.dropout_p, seed, site=1)))
        layers.append(("out", Dense(spec.dense_units, 1, "none", rng, dtype)))
    else:
        u = spec.lstm_units
        layers.append(("bilstm", BiLSTM(d, u, rng, dtype)))
        layers.append(("out", Dense(2 * u, 1, "none", rng, dtype)))
    return Model(spec, seq_len, layers, fuse=fuse)


@dataclass
class TrainedModel:
    model: Model
    embedding_source: str = "random"
    history: list = field(default_factory=list)
    aborted: bool = False

    @property
    def spec(self):
        return self.model.spec

    @property
    def parameters(self):
        return self.model.parameters()

    def predict_proba(self, ids, scale=None):
        return self.model.predict_proba(ids, scale)
