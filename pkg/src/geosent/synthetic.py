"""Synthetic corpora with known structure, for tests and offline demos.

``location_signal_corpus`` builds a balanced corpus where a fraction
``flip_rate`` of all tweets are worded negatively yet labeled positive, and
exactly those tweets have a "key" category (a park) nearby. Text alone can
reach at most ``1 - flip_rate`` accuracy; text plus the key category
separates the classes completely.
"""

import json
from pathlib import Path

import numpy as np

from .corpus import LabeledTweet, write_labeled
from .geo import DEFAULT_RADIUS_M, NearbyCache, NearbyResult, load_taxonomy

POSITIVE = ["good", "great", "love", "happy", "awesome", "nice", "best", "fun",
            "beautiful", "amazing", "excellent", "perfect", "lovely", "enjoy",
            "wonderful", "glad"]
NEGATIVE = ["bad", "hate", "sad", "awful", "worst", "terrible", "angry", "boring",
            "ugly", "horrible", "sick", "annoying", "tired", "poor", "upset", "lonely"]
FILLER = [
    "the", "a", "to", "at", "in", "on", "with", "my", "we", "you", "this", "that", "just",
    "today", "tonight", "now", "here", "there", "going", "got", "time", "day", "people",
    "food", "coffee", "lunch", "dinner", "friends", "work", "home", "city", "street",
    "walk", "train", "bus", "car", "weather", "morning", "night", "weekend", "game",
    "music", "show", "movie", "place", "store", "line", "wait", "back", "out", "up",
    "see", "look", "think", "know", "feel", "really", "so", "very", "still", "again",
    "first", "last", "new", "old", "big", "little", "long", "next", "week", "year",
]
FIXED_STAMP = "2019-05-01T00:00:00Z"
KEY_CATEGORY = {"geonames": "PRK", "places": "park"}
DEFAULT_ORIGIN = (40.7128, -74.0060)


def _coords(rng, n, origin=DEFAULT_ORIGIN, spread=0.2):
    lat = np.round(origin[0] + rng.uniform(-spread, spread, n), 5)
    lon = np.round(origin[1] + rng.uniform(-spread, spread, n), 5)
    return lat, lon


def separable_corpus(n_per_class=100, seed=0, length=(4, 12)):
    """Tweets whose classes use disjoint vocabularies (no filler words)."""
    rng = np.random.default_rng(seed)
    pos = [f"pos{i}" for i in range(30)]
    neg = [f"neg{i}" for i in range(30)]
    lat, lon = _coords(rng, 2 * n_per_class)
    tweets = []
    for j in range(2 * n_per_class):
        y = j % 2
        words = pos if y else neg
        n = int(rng.integers(length[0], length[1] + 1))
        tokens = tuple(words[k] for k in rng.integers(0, len(words), n))
        tweets.append(LabeledTweet(f"s{j}", tokens, float(lat[j]), float(lon[j]),
                                   1.0 if y else -1.0, y))
    order = rng.permutation(len(tweets))
    return [tweets[i] for i in order]


def location_signal_corpus(n_per_class=250, seed=0, flip_rate=0.3, background=3.0,
                           polar_words=(1, 2), filler_words=(5, 14)):
    """Balanced tweets plus matching nearby results for both providers.

    Returns ``(tweets, results)``; ``results`` holds one :class:`NearbyResult`
    per tweet and provider. Every tweet also gets Poisson(``background``)
    random non-key categories, and about 5% get a category outside the
    taxonomy.
    """
    n_flip = int(round(flip_rate * 2 * n_per_class))
    if not 0 <= n_flip <= n_per_class:
        raise ValueError(f"flip_rate {flip_rate} needs 0 <= flips <= n_per_class")
    rng = np.random.default_rng(seed)
    taxonomies = {p: load_taxonomy(p) for p in ("geonames", "places")}
    # (label, text polarity, key category nearby)
    plan = ([(0, 0, False)] * n_per_class + [(1, 0, True)] * n_flip
            + [(1, 1, False)] * (n_per_class - n_flip))
    plan = [plan[k] for k in rng.permutation(len(plan))]

    lat, lon = _coords(rng, 4 * len(plan))
    coords = list(dict.fromkeys(zip(lat.tolist(), lon.tolist())))[:len(plan)]
    tweets, results = [], []
    for j, ((y, polarity, key_present), (la, lo)) in enumerate(zip(plan, coords)):
        words = POSITIVE if polarity else NEGATIVE
        n_polar = int(rng.integers(polar_words[0], polar_words[1] + 1))
        n_fill = int(rng.integers(filler_words[0], filler_words[1] + 1))
        tokens = [words[k] for k in rng.integers(0, len(words), n_polar)]
        tokens += [FILLER[k] for k in rng.integers(0, len(FILLER), n_fill)]
        tokens = [tokens[k] for k in rng.permutation(len(tokens))]
        tweets.append(LabeledTweet(f"g{j}", tuple(tokens), la, lo, 1.0 if y else -1.0, y))

        for provider, tax in taxonomies.items():
            key = KEY_CATEGORY[provider]
            others = [c for c in tax.categories if c != key]
            cats = [others[k] for k in rng.integers(0, len(others), rng.poisson(background))]
            if key_present:
                cats += [key] * int(rng.integers(1, 4))
            if rng.random() < 0.05:
                cats.append("unlisted_category")
            cats = [cats[k] for k in rng.permutation(len(cats))]
            results.append(NearbyResult(provider, la, lo, DEFAULT_RADIUS_M, tuple(cats),
                                        FIXED_STAMP))
    return tweets, results


def write_fixture(directory, n_per_class=250, seed=0, flip_rate=0.3):
    """Write ``labeled.jsonl``, ``raw.jsonl`` and ``cache.jsonl`` under ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tweets, results = location_signal_corpus(n_per_class, seed, flip_rate)
    write_labeled(tweets, directory / "labeled.jsonl")
    with open(directory / "raw.jsonl", "w", encoding="utf-8") as f:
        for t in tweets:
            f.write(json.dumps({"id": t.id, "text": " ".join(t.tokens),
                                "lat": t.lat, "lon": t.lon}) + "\n")
    cache_path = directory / "cache.jsonl"
    if cache_path.exists():
        cache_path.unlink()
    cache = NearbyCache(cache_path)
    for r in results:
        cache.put(r)
    return directory
