"""Tweet ingestion, text cleaning, lexicon scoring and balanced sampling."""

import csv
import json
import logging
import re
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError, ShortageError

log = logging.getLogger(__name__)

URL_RE = re.compile(r"(?:https?://|www\.)\S*", re.IGNORECASE)
NON_LETTER_RE = re.compile(r"[^a-z\s]")
RETWEET_MARKER = "rt"
MALFORMED_LIMIT = 0.5


@dataclass(frozen=True)
class RawTweet:
    id: str
    text: str
    lat: float
    lon: float

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"lat {self.lat} out of range")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"lon {self.lon} out of range")
        if not self.text:
            raise ValueError("empty text")


@dataclass(frozen=True)
class CleanTweet:
    id: str
    tokens: tuple
    lat: float
    lon: float

    @property
    def empty(self):
        return len(self.tokens) == 0


@dataclass(frozen=True)
class LabeledTweet:
    id: str
    tokens: tuple
    lat: float
    lon: float
    score: float
    label: int

    @property
    def empty(self):
        return len(self.tokens) == 0

    def to_json(self):
        d = asdict(self)
        d["tokens"] = list(self.tokens)
        return json.dumps(d, ensure_ascii=False)

    @classmethod
    def from_dict(cls, d):
        return cls(
            id=str(d["id"]),
            tokens=tuple(d["tokens"]),
            lat=float(d["lat"]),
            lon=float(d["lon"]),
            score=float(d["score"]),
            label=int(d["label"]),
        )


@dataclass
class SentimentLexicon:
    entries: dict
    negators: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        for phrase, polarity in self.entries.items():
            n = len(phrase.split())
            if not 1 <= n <= 3:
                raise FormatError(f"lexicon phrase {phrase!r} must have 1-3 tokens")
            if phrase != phrase.lower():
                raise FormatError(f"lexicon phrase {phrase!r} is not lowercase")
            if not -1.0 <= polarity <= 1.0:
                raise FormatError(f"polarity {polarity} of {phrase!r} outside [-1, 1]")
        self.negators = frozenset(self.negators)
        self._max_len = max((len(p.split()) for p in self.entries), default=1)


def load_lexicon(path=None):
    """Read a ``phrase<TAB>polarity`` file with a ``#NEGATORS`` section.

    Without a path the bundled English lexicon is used. Lines starting with
    ``#`` other than the section header are comments.
    """
    if path is None:
        text = resources.files("geosent.data").joinpath("lexicon_en.tsv").read_text("utf-8")
        source = "<bundled lexicon>"
    else:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise InputError(f"cannot read lexicon {path}: {e}") from e
        source = str(path)

    entries = {}
    negators = set()
    in_negators = False
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line.upper() == "#NEGATORS":
            in_negators = True
            continue
        if line.startswith("#"):
            continue
        if in_negators:
            negators.add(line.lower())
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise FormatError(f"{source}:{lineno}: expected phrase<TAB>polarity")
        phrase = " ".join(parts[0].split())
        if phrase in entries:
            raise FormatError(f"{source}:{lineno}: duplicate phrase {phrase!r}")
        try:
            entries[phrase] = float(parts[1])
        except ValueError:
            raise FormatError(f"{source}:{lineno}: bad polarity {parts[1]!r}") from None
    return SentimentLexicon(entries, frozenset(negators))


def _parse_record(fmt, line):
    if fmt == "jsonl":
        d = json.loads(line)
        if not isinstance(d, dict):
            raise ValueError("not an object")
        return RawTweet(str(d["id"]), str(d["text"]), float(d["lat"]), float(d["lon"]))
    row = next(csv.reader([line], delimiter="\t", quoting=csv.QUOTE_NONE))
    if len(row) != 4:
        raise ValueError(f"expected 4 columns, got {len(row)}")
    return RawTweet(row[0], row[1], float(row[2]), float(row[3]))


def read_corpus(path, fmt="jsonl"):
    """Parse a corpus file, returning ``(tweets, n_malformed)``."""
    if fmt not in ("jsonl", "tsv"):
        raise FormatError(f"unknown corpus format {fmt!r}")
    try:
        with open(path, encoding="utf-8") as f:
            lines = f.read().splitlines()
    except (OSError, UnicodeDecodeError) as e:
        raise InputError(f"cannot read corpus {path}: {e}") from e

    tweets = []
    malformed = 0
    total = 0
    for line in lines:
        if not line.strip():
            continue
        total += 1
        try:
            tweets.append(_parse_record(fmt, line))
        except (ValueError, KeyError, TypeError, StopIteration):
            malformed += 1
    if total and malformed / total > MALFORMED_LIMIT:
        raise FormatError(
            f"{path}: {malformed} of {total} records malformed (limit {MALFORMED_LIMIT:.0%})"
        )
    return tweets, malformed


def load_corpus(path, fmt="jsonl"):
    tweets, malformed = read_corpus(path, fmt)
    if malformed:
        log.warning("%s: skipped %d malformed record(s)", path, malformed)
    return tweets


def clean_tokens(text):
    text = URL_RE.sub(" ", text.lower())
    # whitespace-delimited chunks carrying non-ASCII code points go entirely
    chunks = [c for c in text.split() if c.isascii()]
    text = NON_LETTER_RE.sub("", " ".join(chunks))
    return tuple(t for t in text.split() if t != RETWEET_MARKER)


def clean_text(raw):
    return CleanTweet(raw.id, clean_tokens(raw.text), raw.lat, raw.lon)


def score_sentiment(clean, lexicon):
    """Mean polarity of longest-match lexicon phrases, negation-aware."""
    tokens = clean.tokens if isinstance(clean, CleanTweet) else tuple(clean)
    matched = []
    i = 0
    n = len(tokens)
    while i < n:
        for width in range(min(lexicon._max_len, n - i), 0, -1):
            phrase = " ".join(tokens[i:i + width])
            polarity = lexicon.entries.get(phrase)
            if polarity is not None:
                if i > 0 and tokens[i - 1] in lexicon.negators:
                    polarity = -polarity
                matched.append(polarity)
                i += width
                break
        else:
            i += 1
    if not matched:
        return 0.0
    return sum(matched) / len(matched)


def label(score):
    return 1 if score > 0 else 0


def label_tweet(clean, lexicon):
    score = score_sentiment(clean, lexicon)
    return LabeledTweet(clean.id, clean.tokens, clean.lat, clean.lon, score, label(score))


def sample_balanced(tweets, n_per_class, seed):
    rng = np.random.default_rng(seed)
    chosen = []
    for cls in (0, 1):
        members = [t for t in tweets if t.label == cls]
        if len(members) < n_per_class:
            raise ShortageError(cls, len(members), n_per_class)
        idx = rng.choice(len(members), size=n_per_class, replace=False)
        chosen.extend(members[i] for i in idx)
    order = rng.permutation(len(chosen))
    return [chosen[i] for i in order]


def write_labeled(tweets, path):
    with open(path, "w", encoding="utf-8") as f:
        for t in tweets:
            f.write(t.to_json() + "\n")


def read_labeled(path):
    try:
        with open(path, encoding="utf-8") as f:
            return [LabeledTweet.from_dict(json.loads(line)) for line in f if line.strip()]
    except OSError as e:
        raise InputError(f"cannot read labeled corpus {path}: {e}") from e
    except (ValueError, KeyError) as e:
        raise FormatError(f"{path}: bad labeled record: {e}") from e
