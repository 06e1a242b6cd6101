"""Nearby-location categories: provider clients, persistent cache, vectorization.

Lookups go through :class:`NearbyCache` first. In ``offline`` mode (the
default) a miss is an error; ``online`` mode issues one rate-limited HTTP
request per miss and appends the result to the cache.
"""

import hashlib
import json
import logging
import os
import threading
import time
from collections import Counter
from dataclasses import dataclass
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np
from filelock import FileLock

from .errors import CacheMissError, ConfigError, InputError, ProviderError, TaxonomyError

log = logging.getLogger(__name__)

PROVIDERS = ("geonames", "places")
TAXONOMY_SIZES = {"geonames": 51, "places": 100}
CREDENTIAL_VARS = {"geonames": "GEONAMES_USER", "places": "PLACES_API_KEY"}
DEFAULT_RADIUS_M = 300
DEFAULT_RATES = {"geonames": 1.0, "places": 10.0}  # requests per second

GEONAMES_URL = "http://api.geonames.org/findNearbyJSON"
PLACES_URL = "https://maps.googleapis.com/maps/api/place/nearbysearch/json"

MAX_ATTEMPTS = 3
BACKOFF_S = 1.0


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not (-90.0 <= self.lat <= 90.0 and -180.0 <= self.lon <= 180.0):
            raise ValueError(f"coordinates out of range: ({self.lat}, {self.lon})")


@dataclass(frozen=True)
class CategoryTaxonomy:
    provider: str
    categories: tuple
    digest: str = ""

    def __post_init__(self):
        if self.provider not in PROVIDERS:
            raise TaxonomyError(f"unknown provider {self.provider!r}")
        expected = TAXONOMY_SIZES[self.provider]
        if len(self.categories) != expected:
            raise TaxonomyError(
                f"{self.provider} taxonomy needs {expected} categories, got {len(self.categories)}"
            )
        if len(set(self.categories)) != len(self.categories):
            raise TaxonomyError(f"{self.provider} taxonomy has duplicate identifiers")
        object.__setattr__(self, "_slots", {c: i for i, c in enumerate(self.categories)})

    @property
    def size(self):
        return len(self.categories)

    def slot(self, category):
        return self._slots.get(category)


def load_taxonomy(provider, path=None):
    if path is None:
        data = resources.files("geosent.data").joinpath(f"{provider}.txt").read_bytes()
    else:
        try:
            data = Path(path).read_bytes()
        except OSError as e:
            raise InputError(f"cannot read taxonomy {path}: {e}") from e
    lines = (ln.strip() for ln in data.decode("utf-8").splitlines())
    cats = tuple(ln for ln in lines if ln and not ln.startswith("#"))
    return CategoryTaxonomy(provider, cats, hashlib.sha256(data).hexdigest())


@dataclass(frozen=True)
class NearbyResult:
    provider: str
    lat5: float
    lon5: float
    radius_m: int
    categories: tuple
    fetched_at: str

    @property
    def point(self):
        return GeoPoint(self.lat5, self.lon5)

    @property
    def key(self):
        return (self.provider, self.lat5, self.lon5, self.radius_m)

    def to_json(self):
        return json.dumps(
            {
                "provider": self.provider,
                "lat5": self.lat5,
                "lon5": self.lon5,
                "radius_m": self.radius_m,
                "categories": list(self.categories),
                "fetched_at": self.fetched_at,
            },
            separators=(",", ":"),
            ensure_ascii=False,
        )

    @classmethod
    def from_json(cls, line):
        d = json.loads(line)
        return cls(
            d["provider"], float(d["lat5"]), float(d["lon5"]), int(d["radius_m"]),
            tuple(d["categories"]), d["fetched_at"],
        )


def cache_key(provider, point, radius_m=DEFAULT_RADIUS_M):
    return (provider, round(point.lat, 5), round(point.lon, 5), int(radius_m))


def rfc3339_now():
    return datetime.now(timezone.utc).replace(microsecond=0).isoformat().replace("+00:00", "Z")


class NearbyCache:
    """Append-only JSONL cache of :class:`NearbyResult` records.

    Readers see an in-memory index; appends are serialized by a thread lock
    and a file lock so several processes can share one file. A later line for
    the same key supersedes an earlier one.
    """

    def __init__(self, path=None):
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self._index = {}
        if self.path is not None and self.path.exists():
            self._load()

    def _load(self):
        try:
            with open(self.path, encoding="utf-8") as f:
                for lineno, line in enumerate(f, 1):
                    if not line.strip():
                        continue
                    try:
                        rec = NearbyResult.from_json(line)
                    except (ValueError, KeyError) as e:
                        raise InputError(f"{self.path}:{lineno}: bad cache record: {e}") from e
                    self._index[rec.key] = rec
        except OSError as e:
            raise InputError(f"cannot read cache {self.path}: {e}") from e

    def __len__(self):
        return len(self._index)

    def __contains__(self, key):
        return key in self._index

    def get(self, key):
        with self._lock:
            return self._index.get(key)

    def put(self, result):
        line = result.to_json() + "\n"
        with self._lock:
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with FileLock(str(self.path) + ".lock"):
                    with open(self.path, "a", encoding="utf-8") as f:
                        f.write(line)
            self._index[result.key] = result

    def records(self):
        with self._lock:
            return list(self._index.values())


class TokenBucket:
    def __init__(self, rate, capacity=1.0, clock=time.monotonic, sleep=time.sleep):
        if rate <= 0:
            raise ConfigError("rate must be positive")
        self.rate = rate
        self.capacity = capacity
        self.tokens = capacity
        self.clock = clock
        self.sleep = sleep
        self.last = clock()
        self._lock = threading.Lock()

    def acquire(self):
        with self._lock:
            now = self.clock()
            self.tokens = min(self.capacity, self.tokens + (now - self.last) * self.rate)
            self.last = now
            if self.tokens < 1.0:
                wait = (1.0 - self.tokens) / self.rate
                self.sleep(wait)
                self.last = self.clock()
                self.tokens = 1.0
            self.tokens -= 1.0


_buckets = {}
_buckets_lock = threading.Lock()


def shared_bucket(provider, rate=None):
    """The process-wide token bucket for ``provider``."""
    with _buckets_lock:
        if provider not in _buckets:
            _buckets[provider] = TokenBucket(rate or DEFAULT_RATES[provider])
        return _buckets[provider]


def parse_geonames(payload):
    if "status" in payload:
        st = payload["status"]
        raise ProviderError(f"geonames: {st.get('message', 'error')}", status=st.get("value"))
    return [g["fcode"] for g in payload.get("geonames", []) if g.get("fcode")]


def parse_places(payload):
    status = payload.get("status", "OK")
    if status == "ZERO_RESULTS":
        return []
    if status != "OK":
        raise ProviderError(f"places: {payload.get('error_message', status)}", status=status)
    cats = []
    for venue in payload.get("results", []):
        cats.extend(venue.get("types", []))
    return cats


class ProviderClient:
    """HTTP access to one provider with retry and rate limiting.

    ``session`` only needs a requests-style ``get(url, params=, timeout=)``.
    """

    def __init__(self, provider, credential=None, session=None, bucket=None,
                 sleep=time.sleep, timeout=10.0):
        if provider not in PROVIDERS:
            raise ConfigError(f"unknown provider {provider!r}")
        if credential is None:
            credential = os.environ.get(CREDENTIAL_VARS[provider])
        if not credential:
            raise ConfigError(
                f"online mode for {provider} needs ${CREDENTIAL_VARS[provider]}"
            )
        if session is None:
            import requests
            session = requests.Session()
        self.provider = provider
        self.credential = credential
        self.session = session
        self.bucket = bucket if bucket is not None else shared_bucket(provider)
        self.sleep = sleep
        self.timeout = timeout
        self.requests_sent = 0

    def _request(self, point, radius_m):
        if self.provider == "geonames":
            params = {"lat": point.lat, "lng": point.lon, "radius": radius_m / 1000.0,
                      "maxRows": 100, "username": self.credential}
            return GEONAMES_URL, params
        params = {"location": f"{point.lat},{point.lon}", "radius": radius_m,
                  "key": self.credential}
        return PLACES_URL, params

    def nearby(self, point, radius_m=DEFAULT_RADIUS_M):
        url, params = self._request(point, radius_m)
        parse = parse_geonames if self.provider == "geonames" else parse_places
        last = None
        for attempt in range(MAX_ATTEMPTS):
            if attempt:
                self.sleep(BACKOFF_S * 2 ** (attempt - 1))
            self.bucket.acquire()
            self.requests_sent += 1
            try:
                resp = self.session.get(url, params=params, timeout=self.timeout)
            except Exception as e:  # transport failures of any client library
                last = ProviderError(f"{self.provider}: request failed: {e}")
                continue
            if resp.status_code != 200:
                last = ProviderError(f"{self.provider}: HTTP {resp.status_code}",
                                     status=resp.status_code)
                continue
            try:
                return parse(resp.json())
            except ProviderError as e:
                last = e
            except ValueError as e:
                last = ProviderError(f"{self.provider}: unparseable response: {e}")
        raise last


def fetch_nearby(point, provider, radius_m=DEFAULT_RADIUS_M, cache=None, mode="offline",
                 client=None):
    if cache is None:
        cache = NearbyCache()
    key = cache_key(provider, point, radius_m)
    hit = cache.get(key)
    if hit is not None:
        return hit
    if mode == "offline":
        raise CacheMissError([key])
    if mode != "online":
        raise ConfigError(f"unknown fetch mode {mode!r}")
    if client is None:
        client = ProviderClient(provider)
    cats = client.nearby(GeoPoint(key[1], key[2]), radius_m)
    result = NearbyResult(provider, key[1], key[2], int(radius_m), tuple(cats), rfc3339_now())
    cache.put(result)
    return result


@dataclass(frozen=True)
class CategoryVector:
    mode: str
    values: np.ndarray
    unknown: int = 0

    def __len__(self):
        return len(self.values)


def vectorize(result, taxonomy, mode="count"):
    if result.provider != taxonomy.provider:
        raise TaxonomyError(
            f"result from {result.provider} cannot use the {taxonomy.provider} taxonomy"
        )
    if mode not in ("onehot", "count"):
        raise ConfigError(f"unknown vectorization mode {mode!r}")
    values = np.zeros(taxonomy.size, dtype=np.int64)
    unknown = 0
    for cat, n in Counter(result.categories).items():
        i = taxonomy.slot(cat)
        if i is None:
            unknown += n
        else:
            values[i] = n
    if mode == "onehot":
        values = np.minimum(values, 1)
    return CategoryVector(mode, values, unknown)
