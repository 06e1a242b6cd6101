"""Vocabulary, fixed-length integer encoding, feature concatenation, embeddings."""

import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FormatError, InputError

SEQ_LEN = 25
PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"
STRATEGIES = ("text_only", "literal", "reserved")
INIT_SCALE = 0.05


@dataclass
class Vocabulary:
    id_to_token: list

    def __post_init__(self):
        if self.id_to_token[:2] != [PAD_TOKEN, UNK_TOKEN]:
            raise ValueError("ids 0 and 1 are reserved for PAD and UNK")
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("duplicate tokens in vocabulary")

    @property
    def size(self):
        return len(self.id_to_token)

    def __len__(self):
        return self.size

    def lookup(self, token):
        return self.token_to_id.get(token, UNK)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for i, tok in enumerate(self.id_to_token):
                f.write(json.dumps({"token": tok, "id": i}, ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            rows = [json.loads(line) for line in f if line.strip()]
        rows.sort(key=lambda r: r["id"])
        if [r["id"] for r in rows] != list(range(len(rows))):
            raise FormatError(f"{path}: vocabulary ids are not contiguous")
        return cls([r["token"] for r in rows])

    def digest(self):
        return hashlib.sha256("\n".join(self.id_to_token).encode("utf-8")).hexdigest()


def _tokens(tweet):
    return tweet.tokens if hasattr(tweet, "tokens") else tuple(tweet)


def build_vocab(corpus, min_count=1):
    counts = Counter()
    for tweet in corpus:
        counts.update(_tokens(tweet))
    kept = sorted((t for t, n in counts.items() if n >= min_count),
                  key=lambda t: (-counts[t], t))
    return Vocabulary([PAD_TOKEN, UNK_TOKEN] + kept)


def encode_pad(tweet, vocab, length=SEQ_LEN):
    """Token ids, left-padded with PAD or truncated on the right to ``length``."""
    ids = [vocab.lookup(t) for t in _tokens(tweet)][:length]
    out = np.full(length, PAD, dtype=np.int64)
    if ids:
        out[length - len(ids):] = ids
    return out


@dataclass
class FeatureVector:
    values: np.ndarray
    strategy: str
    # per-position multiplier on the looked-up embedding; used by count-mode reserved
    scale: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.scale is None:
            self.scale = np.ones(len(self.values))

    def __len__(self):
        return len(self.values)


def concat_features(seq, catvec, strategy, vocab):
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown strategy {strategy!r}")
    seq = np.asarray(seq, dtype=np.int64)
    if strategy == "text_only":
        return FeatureVector(seq.copy(), strategy)
    if catvec is None:
        raise ConfigError(f"strategy {strategy!r} needs a category vector")
    cats = np.asarray(catvec.values, dtype=np.int64)
    V, n_cat = vocab.size, len(cats)
    scale = np.ones(len(seq) + n_cat)
    if strategy == "literal":
        if cats.max(initial=0) >= V + n_cat:
            raise ConfigError(
                f"category value {cats.max()} exceeds embedding rows {V + n_cat}"
            )
        tail = cats
    else:
        present = cats > 0
        tail = np.where(present, V + np.arange(n_cat), PAD)
        if catvec.mode == "count":
            scale[len(seq):] = np.where(present, cats, 1)
    return FeatureVector(np.concatenate([seq, tail]), strategy, scale)


def _is_header(parts):
    return len(parts) == 2 and all(p.isdigit() for p in parts)


def load_embeddings(path):
    """Parse a ``token v1 ... vd`` text file into ``(table, d)``.

    A leading ``N d`` header line is skipped; repeated tokens keep their
    first vector.
    """
    table = {}
    dim = None
    try:
        f = open(path, encoding="utf-8")
    except OSError as e:
        raise InputError(f"cannot read embeddings {path}: {e}") from e
    with f:
        for lineno, line in enumerate(f, 1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            if lineno == 1 and _is_header(parts):
                continue
            if dim is None:
                dim = len(parts) - 1
                if dim < 1:
                    raise FormatError(f"{path}:{lineno}: no vector components")
            if len(parts) - 1 != dim:
                raise FormatError(
                    f"{path}:{lineno}: expected {dim} components, found {len(parts) - 1}"
                )
            if parts[0] in table:
                continue
            try:
                table[parts[0]] = np.array(parts[1:], dtype=np.float64)
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric component") from None
    return table, dim


@dataclass
class EmbeddingMatrix:
    rows: np.ndarray
    init_seed: int
    source: str

    @property
    def shape(self):
        return self.rows.shape


def build_embedding_matrix(vocab, taxonomy_size, table=None, d=200, seed=0):
    if table is not None and len(table):
        dim = len(next(iter(table.values())))
        if dim != d:
            raise ConfigError(f"embedding table has dimension {dim}, config asks for {d}")
    rng = np.random.default_rng(seed)
    n_rows = vocab.size + taxonomy_size
    rows = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(n_rows, d))
    rows[PAD] = 0.0
    source = "random"
    if table is not None:
        for tok, i in vocab.token_to_id.items():
            if i > UNK and tok in table:
                rows[i] = table[tok]
        h = hashlib.sha256()
        for tok in sorted(table):
            h.update(tok.encode("utf-8"))
            h.update(np.asarray(table[tok], dtype="<f8").tobytes())
        source = "pretrained:" + h.hexdigest()[:16]
    return EmbeddingMatrix(rows, seed, source)


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def feature_length(provider):
    from .geo import TAXONOMY_SIZES
    return SEQ_LEN + (TAXONOMY_SIZES[provider] if provider else 0)


def stack(features):
    """Batch a list of FeatureVectors into ``(ids, scale)`` arrays."""
    ids = np.stack([f.values for f in features])
    scale = np.stack([f.scale for f in features])
    return ids, scale


__all__ = [
    "Vocabulary", "FeatureVector", "EmbeddingMatrix", "build_vocab", "encode_pad",
    "concat_features", "load_embeddings", "build_embedding_matrix", "file_digest",
    "feature_length", "stack", "SEQ_LEN", "PAD", "UNK", "STRATEGIES",
]
