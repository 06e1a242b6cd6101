"""Experiment protocol: dataset variants, stratified splits, repeated training, tables."""

import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import encode
from .corpus import read_labeled
from .errors import (CacheMissError, ConfigError, ConflictError, EvaluationError,
                     NumericError, SplitError)
from .geo import DEFAULT_RADIUS_M, GeoPoint, NearbyCache, fetch_nearby, load_taxonomy, vectorize
from .nn.model import ModelSpec, TrainedModel, build_model
from .nn.optim import AdamState, adam_step

log = logging.getLogger(__name__)

VARIANTS = ("text_only", "onehot_geonames", "onehot_places", "count_geonames", "count_places")
VARIANT_TITLES = {
    "text_only": "Text only feature",
    "onehot_geonames": "Text & One-hot Geonames features",
    "onehot_places": "Text & One-hot Google Places features",
    "count_geonames": "Text & Count of Geonames features",
    "count_places": "Text & Count of Google Places features",
}
MODEL_FIELDS = ("conv", "pool", "dense_units", "dropout_p", "lstm_units", "freeze_embedding")


def variant_parts(variant):
    """``(mode, provider)``; both None for text_only."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown dataset variant {variant!r}")
    if variant == "text_only":
        return None, None
    mode, provider = variant.split("_")
    return mode, provider


@dataclass
class ExperimentConfig:
    model: str = "cnn"
    embedding: str = "random"
    dim: int = 200
    variant: str = "text_only"
    repeats: int = 10
    epochs: int = 20
    split_ratio: float = 0.7
    base_seed: int = 0
    batch_size: int = 32
    lr: float = 0.001
    strategy: str = "literal"
    min_count: int = 1
    radius_m: int = DEFAULT_RADIUS_M
    model_options: dict = field(default_factory=dict)
    corpus: str = None
    cache: str = None
    taxonomies: dict = field(default_factory=dict)

    def __post_init__(self):
        variant_parts(self.variant)
        if not 0 < self.split_ratio < 1:
            raise ConfigError(f"split_ratio must be in (0, 1), got {self.split_ratio}")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.strategy not in encode.STRATEGIES[1:]:
            raise ConfigError(f"strategy must be literal or reserved, got {self.strategy!r}")
        unknown = set(self.model_options) - set(MODEL_FIELDS)
        if unknown:
            raise ConfigError(f"unknown model options {sorted(unknown)}")
        self.model_spec()

    def model_spec(self):
        return ModelSpec(kind=self.model, embed_dim=self.dim, **self.model_options)

    @property
    def embedding_label(self):
        return "random" if self.embedding == "random" else Path(self.embedding).name

    def to_dict(self):
        return asdict(self)


def input_digests(config):
    digests = {}
    for key in ("corpus", "cache"):
        path = getattr(config, key)
        if path and Path(path).exists():
            digests[key] = encode.file_digest(path)
    if config.embedding != "random":
        digests["embedding"] = encode.file_digest(config.embedding)
    _, provider = variant_parts(config.variant)
    if provider:
        digests["taxonomy"] = load_taxonomy(provider, config.taxonomies.get(provider)).digest
    return digests


def config_digest(config, digests=None):
    doc = {"config": config.to_dict(), "inputs": digests or {}}
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


class Dataset:
    """Labeled tweets with their nearby-location results, ready to encode.

    ``nearby`` maps provider to a list of results aligned with ``tweets``.
    """

    def __init__(self, tweets, nearby=None, taxonomies=None, min_count=1):
        if not tweets:
            raise ConfigError("dataset has no tweets")
        self.tweets = list(tweets)
        self.labels = np.array([t.label for t in self.tweets], dtype=np.int64)
        self.nearby = nearby or {}
        self.taxonomies = taxonomies or {}
        self.vocab = encode.build_vocab(self.tweets, min_count)
        self.sequences = [encode.encode_pad(t, self.vocab) for t in self.tweets]
        self._features = {}

    @classmethod
    def from_results(cls, tweets, results, taxonomy_paths=None, min_count=1,
                     radius_m=DEFAULT_RADIUS_M):
        cache = NearbyCache()
        for r in results:
            cache.put(r)
        return cls.from_cache(tweets, cache, taxonomy_paths, min_count, radius_m)

    @classmethod
    def from_cache(cls, tweets, cache, taxonomy_paths=None, min_count=1,
                   radius_m=DEFAULT_RADIUS_M, providers=("geonames", "places")):
        taxonomy_paths = taxonomy_paths or {}
        nearby, taxonomies = {}, {}
        for provider in providers:
            found, missing = [], []
            for t in tweets:
                try:
                    found.append(fetch_nearby(GeoPoint(t.lat, t.lon), provider, radius_m,
                                              cache, mode="offline"))
                except CacheMissError as e:
                    missing.extend(e.keys)
            if missing and len(missing) < len(tweets):
                raise CacheMissError(missing)
            if not missing:
                nearby[provider] = found
                taxonomies[provider] = load_taxonomy(provider, taxonomy_paths.get(provider))
        return cls(tweets, nearby, taxonomies, min_count)

    def taxonomy_size(self, variant):
        _, provider = variant_parts(variant)
        return self.taxonomies[provider].size if provider else 0

    def features(self, variant, strategy="literal"):
        """``(ids, scale)`` arrays of shape ``[N, 25 + taxonomy size]``."""
        key = (variant, strategy)
        if key not in self._features:
            mode, provider = variant_parts(variant)
            if provider is None:
                fvs = [encode.concat_features(s, None, "text_only", self.vocab)
                       for s in self.sequences]
            else:
                if provider not in self.nearby:
                    raise CacheMissError([(provider, "all tweets")])
                tax = self.taxonomies[provider]
                fvs = [encode.concat_features(s, vectorize(r, tax, mode), strategy, self.vocab)
                       for s, r in zip(self.sequences, self.nearby[provider])]
            self._features[key] = encode.stack(fvs)
        return self._features[key]


def load_dataset(config):
    if not config.corpus:
        raise ConfigError("experiment config has no corpus")
    tweets = read_labeled(config.corpus)
    _, provider = variant_parts(config.variant)
    cache = NearbyCache(config.cache) if config.cache else NearbyCache()
    providers = (provider,) if provider else ()
    return Dataset.from_cache(tweets, cache, config.taxonomies, config.min_count,
                              config.radius_m, providers)


def split_indices(labels, ratio, seed):
    """Stratified train/test index arrays.

    The train side gets ``round(ratio * n)`` items, shared between classes in
    proportion to their size (largest remainder, ties to the lower label).
    """
    labels = np.asarray(labels)
    n = len(labels)
    if n == 0:
        raise SplitError("cannot split an empty dataset")
    rng = np.random.default_rng(seed)
    classes = np.unique(labels)
    n_train = int(math.floor(ratio * n + 0.5))
    members = {c: np.flatnonzero(labels == c) for c in classes}
    quotas = {c: ratio * len(members[c]) for c in classes}
    take = {c: int(math.floor(quotas[c])) for c in classes}
    extra = n_train - sum(take.values())
    for c in sorted(classes, key=lambda c: (-(quotas[c] - take[c]), c))[:extra]:
        take[c] += 1
    train, test = [], []
    for c in classes:
        idx = members[c][rng.permutation(len(members[c]))]
        if take[c] == 0 or take[c] == len(idx):
            raise SplitError(f"class {c} would be missing from one side of the split")
        train.append(idx[:take[c]])
        test.append(idx[take[c]:])
    train = np.concatenate(train)
    test = np.concatenate(test)
    return train[rng.permutation(len(train))], test[rng.permutation(len(test))]


def split(data, ratio=0.7, seed=0):
    """Split ``(features, label)`` pairs; see :func:`split_indices`."""
    data = list(data)
    tr, te = split_indices([y for _, y in data], ratio, seed)
    return [data[i] for i in tr], [data[i] for i in te]


def train(config, train_set, seed, embedding):
    """Mini-batch Adam on BCE for ``config.epochs`` epochs.

    ``train_set`` is ``(ids, scale, labels)``. Raises NumericError if the loss
    or any gradient goes non-finite.
    """
    ids, scale, y = train_set
    model = build_model(config.model_spec(), ids.shape[1], embedding, seed=seed)
    trained = TrainedModel(model, getattr(embedding, "source", "random"))
    state = AdamState(lr=config.lr)
    rng = np.random.default_rng([seed, 1])
    params = model.trainable_parameters()
    n = len(y)
    y = np.asarray(y, dtype=np.float64)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        correct = 0
        for start in range(0, n, config.batch_size):
            b = order[start:start + config.batch_size]
            loss, grads, p = model.loss_and_grads(ids[b], scale[b], y[b], train=True)
            if not math.isfinite(loss):
                raise NumericError(f"loss became {loss} in epoch {epoch}")
            if "embedding.E" in grads:
                grads["embedding.E"][encode.PAD] = 0.0
            adam_step(params, grads, state)
            total += loss * len(b)
            correct += int(np.sum((p > 0.5) == (y[b] > 0.5)))
        # running figures over the epoch's batches, as seen in train mode
        acc = correct / n
        trained.history.append((total / n, acc))
        log.debug("epoch %d loss %.4f train acc %.3f", epoch + 1, total / n, acc)
    return trained


def evaluate(model, test_set):
    ids, scale, y = test_set
    if len(y) == 0:
        raise EvaluationError("empty test set")
    p = model.predict_proba(ids, scale)
    return float(np.mean((p > 0.5).astype(int) == np.asarray(y).astype(int)))


@dataclass
class RunResult:
    config: dict
    digest: str
    accuracies: list
    mean: float
    std: float
    wall_time: float
    status: str = "complete"
    failed_repeat: int = None
    inputs: dict = field(default_factory=dict)

    @property
    def row_key(self):
        c = self.config
        emb = "random" if c["embedding"] == "random" else Path(c["embedding"]).name
        return c["model"], emb, c["dim"]

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line):
        return cls(**json.loads(line))


_table_cache = {}


def _embedding_table(path, dim):
    if path == "random":
        return None
    if path not in _table_cache:
        table, d = encode.load_embeddings(path)
        _table_cache[path] = table
    return _table_cache[path]


def run_experiment(config, dataset=None):
    """Repeat split/train/evaluate ``config.repeats`` times with seeds base_seed + r."""
    digests = input_digests(config)
    digest = config_digest(config, digests)
    if dataset is None:
        dataset = load_dataset(config)
    table = _embedding_table(config.embedding, config.dim)
    ids, scale = dataset.features(config.variant, config.strategy)
    labels = dataset.labels
    n_extra = dataset.taxonomy_size(config.variant)
    accs = []
    status, failed = "complete", None
    t0 = time.perf_counter()
    for r in range(config.repeats):
        seed = config.base_seed + r
        tr, te = split_indices(labels, config.split_ratio, seed)
        emb = encode.build_embedding_matrix(dataset.vocab, n_extra, table, config.dim, seed)
        try:
            model = train(config, (ids[tr], scale[tr], labels[tr]), seed, emb)
        except NumericError as e:
            log.warning("repeat %d aborted: %s", r, e)
            status, failed = "partial", r
            break
        accs.append(evaluate(model, (ids[te], scale[te], labels[te])))
        log.info("%s/%s/%d/%s repeat %d: %.4f", config.model, config.embedding_label,
                 config.dim, config.variant, r, accs[-1])
    mean = float(np.mean(accs)) if accs else float("nan")
    std = float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0
    return RunResult(config.to_dict(), digest, accs, mean, std,
                     time.perf_counter() - t0, status, failed, digests)


def load_grid(path):
    """Expand a JSON grid file into ExperimentConfigs plus the output directory.

    Relative paths resolve against the grid file's directory.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        from .errors import InputError
        raise InputError(f"cannot read config {path}: {e}") from e
    except ValueError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}") from e
    base = path.parent

    def resolve(p):
        if p is None or p == "random":
            return p
        return str((base / p).resolve()) if not Path(p).is_absolute() else p

    shared = dict(doc.get("defaults", {}))
    shared["corpus"] = resolve(doc.get("corpus"))
    shared["cache"] = resolve(doc.get("cache"))
    shared["taxonomies"] = {k: resolve(v) for k, v in doc.get("taxonomies", {}).items()}
    configs = []
    for cell in doc.get("grid", []):
        cell = dict(cell)
        variants = cell.pop("variants", list(VARIANTS))
        if "embedding" in cell:
            cell["embedding"] = resolve(cell["embedding"])
        for v in variants:
            try:
                configs.append(ExperimentConfig(**{**shared, **cell, "variant": v}))
            except TypeError as e:
                raise ConfigError(f"{path}: {e}") from e
    out_dir = resolve(doc.get("out_dir", "results"))
    return configs, Path(out_dir)


def _cell(result):
    text = f"{result.mean * 100:.2f}" if result.accuracies else "n/a"
    return text + ("*" if result.status != "complete" else "")


def emit_table(results, fmt="markdown", path=None):
    """Render mean accuracies as a (model, embedding, dim) x variant table.

    In markdown the best concatenated variant of each row is bold and the best
    text-only cell among rows sharing a model and embedding is underlined.
    CSV carries the same information in a ``best_concat`` column. Cells marked
    ``*`` come from partial runs.
    """
    if fmt not in ("csv", "markdown"):
        raise ConfigError(f"unknown table format {fmt!r}")
    grid = {}
    for res in results:
        key = (res.row_key, res.config["variant"])
        if key in grid:
            raise ConflictError(f"duplicate result for {key}")
        grid[key] = res
    rows = sorted({k[0] for k in grid}, key=lambda r: (r[0], r[1], r[2]))

    best = {}
    for row in rows:
        cands = [(grid[(row, v)].mean, v) for v in VARIANTS[1:]
                 if (row, v) in grid and grid[(row, v)].accuracies]
        if cands:
            best[row] = max(cands, key=lambda c: (c[0], -VARIANTS.index(c[1])))[1]
    text_best = {}
    for row in rows:
        res = grid.get((row, "text_only"))
        if res is not None and res.accuracies:
            group = row[:2]
            if group not in text_best or res.mean > grid[(text_best[group], "text_only")].mean:
                text_best[group] = row

    header = ["model", "embedding", "dim"]
    lines = []
    if fmt == "csv":
        lines.append(",".join(header + list(VARIANTS) + ["best_concat"]))
        for row in rows:
            cells = [_cell(grid[(row, v)]) if (row, v) in grid else "" for v in VARIANTS]
            lines.append(",".join([row[0], row[1], str(row[2])] + cells + [best.get(row, "")]))
    else:
        titles = [VARIANT_TITLES[v] for v in VARIANTS]
        lines.append("| " + " | ".join(["Model", "Embedding", "Dim"] + titles) + " |")
        lines.append("|" + "---|" * (3 + len(VARIANTS)))
        for row in rows:
            cells = []
            for v in VARIANTS:
                if (row, v) not in grid:
                    cells.append("")
                    continue
                c = _cell(grid[(row, v)])
                if best.get(row) == v:
                    c = f"**{c}**"
                elif v == "text_only" and text_best.get(row[:2]) == row:
                    c = f"<u>{c}</u>"
                cells.append(c)
            lines.append("| " + " | ".join([row[0], row[1], str(row[2])] + cells) + " |")
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def append_results(results, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8") as f:
        for r in results:
            f.write(r.to_json() + "\n")


def read_results(path):
    with open(path, encoding="utf-8") as f:
        return [RunResult.from_json(line) for line in f if line.strip()]
