import json

import pytest
from hypothesis import given, strategies as st

from geosent import corpus
from geosent.corpus import CleanTweet, LabeledTweet, RawTweet, SentimentLexicon
from geosent.errors import FormatError, InputError, ShortageError

from conftest import FIXTURES


def write_lines(path, lines):
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


# -- load_corpus -----------------------------------------------------------

def test_jsonl_record_maps_fields(tmp_path):
    p = write_lines(tmp_path / "c.jsonl", ['{"id":"1","text":"hi","lat":0.0,"lon":0.0}'])
    assert corpus.load_corpus(p, "jsonl") == [RawTweet("1", "hi", 0.0, 0.0)]


def test_out_of_range_latitude_is_malformed(tmp_path):
    p = write_lines(tmp_path / "c.jsonl", [
        '{"id":"1","text":"hi","lat":91.0,"lon":0.0}',
        '{"id":"2","text":"ok","lat":1.0,"lon":2.0}',
    ])
    tweets, malformed = corpus.read_corpus(p, "jsonl")
    assert malformed == 1
    assert [t.id for t in tweets] == ["2"]


def test_empty_file(tmp_path):
    p = write_lines(tmp_path / "c.jsonl", [])
    assert corpus.read_corpus(p, "jsonl") == ([], 0)


def test_tsv_fixture_counts_malformed_and_keeps_order():
    tweets, malformed = corpus.read_corpus(FIXTURES / "raw_sample.tsv", "tsv")
    assert malformed == 2
    assert [t.id for t in tweets] == ["t1", "t2", "t3", "t5"]


def test_majority_malformed_is_format_error(tmp_path):
    p = write_lines(tmp_path / "c.jsonl", ["nope", "{", '{"id":"1","text":"a","lat":0,"lon":0}'])
    with pytest.raises(FormatError):
        corpus.read_corpus(p, "jsonl")


def test_exactly_half_malformed_is_tolerated(tmp_path):
    p = write_lines(tmp_path / "c.jsonl", ["nope", '{"id":"1","text":"a","lat":0,"lon":0}'])
    assert corpus.read_corpus(p, "jsonl")[1] == 1


def test_missing_file_is_io_error(tmp_path):
    with pytest.raises(InputError) as e:
        corpus.load_corpus(tmp_path / "absent.jsonl")
    assert isinstance(e.value, OSError)


def test_empty_text_rejected():
    with pytest.raises(ValueError):
        RawTweet("1", "", 0.0, 0.0)


# -- clean_text ------------------------------------------------------------

@pytest.mark.parametrize("text, tokens", [
    ("RT @bob Check http://x.co #fun!!", ("bob", "check", "fun")),
    ("It's 5pm già", ("its", "pm")),
    ("     ", ()),
    ("see www.example.com/x?y=1 now", ("see", "now")),
    ("HTTPS://A.B/C rt RT art", ("art",)),
    ("multi\t\n  space", ("multi", "space")),
])
def test_clean_tokens(text, tokens):
    assert corpus.clean_tokens(text) == tokens


def test_fully_stripped_tweet_is_flagged_not_dropped():
    clean = corpus.clean_text(RawTweet("x", "1234 !!! http://a.b", 0.0, 0.0))
    assert clean.tokens == () and clean.empty


@given(st.text(max_size=80))
def test_cleaning_is_idempotent(text):
    once = corpus.clean_tokens(text)
    assert corpus.clean_tokens(" ".join(once)) == once


@given(st.text(max_size=80))
def test_clean_tokens_contain_only_lowercase_letters(text):
    for tok in corpus.clean_tokens(text):
        assert tok and all("a" <= ch <= "z" for ch in tok)


# -- lexicon and scoring ---------------------------------------------------

@pytest.fixture
def lexicon():
    return SentimentLexicon({"good": 0.7, "bad": -0.6, "not bad at": 0.9, "very good": 0.9},
                            frozenset({"not", "never"}))


def clean(*tokens):
    return CleanTweet("i", tuple(tokens), 0.0, 0.0)


def test_single_match(lexicon):
    assert corpus.score_sentiment(clean("good"), lexicon) == pytest.approx(0.7)


def test_negator_flips_sign(lexicon):
    assert corpus.score_sentiment(clean("not", "good"), lexicon) == pytest.approx(-0.7)


def test_no_matches_scores_zero(lexicon):
    assert corpus.score_sentiment(clean("the", "sky"), lexicon) == 0.0


def test_longest_match_first(lexicon):
    # "very good" (0.9) wins over "good" (0.7); "not bad at" beats negated "bad"
    assert corpus.score_sentiment(clean("very", "good"), lexicon) == pytest.approx(0.9)
    assert corpus.score_sentiment(clean("not", "bad", "at", "all"), lexicon) == pytest.approx(0.9)


def test_mean_of_matches(lexicon):
    assert corpus.score_sentiment(clean("good", "and", "bad"), lexicon) == pytest.approx(0.05)


def test_negator_only_looks_one_token_back(lexicon):
    assert corpus.score_sentiment(clean("not", "so", "good"), lexicon) == pytest.approx(0.7)


def test_lexicon_file(tmp_path):
    p = write_lines(tmp_path / "lex.tsv", ["# comment", "great fun\t0.8", "meh\t-0.1",
                                           "#NEGATORS", "not", "Never"])
    lex = corpus.load_lexicon(p)
    assert lex.entries == {"great fun": 0.8, "meh": -0.1}
    assert lex.negators == {"not", "never"}


@pytest.mark.parametrize("lines", [
    ["good\t0.5", "good\t0.6"],
    ["good\t1.5"],
    ["Good\t0.5"],
    ["one two three four\t0.5"],
    ["good 0.5"],
])
def test_bad_lexicon_rejected(tmp_path, lines):
    with pytest.raises(FormatError):
        corpus.load_lexicon(write_lines(tmp_path / "lex.tsv", lines))


def test_bundled_lexicon_loads():
    lex = corpus.load_lexicon()
    assert lex.entries["good"] > 0 and lex.entries["bad"] < 0
    assert "not" in lex.negators


# -- labels ----------------------------------------------------------------

@pytest.mark.parametrize("score, y", [(0.5, 1), (0.0, 0), (-0.3, 0), (1e-12, 1), (-0.0, 0)])
def test_label_rule(score, y):
    assert corpus.label(score) == y


@given(st.floats(allow_nan=False))
def test_label_totality(score):
    assert corpus.label(score) == int(score > 0)


def pool(n_pos, n_neg):
    tweets = [LabeledTweet(f"p{i}", ("x",), 0.0, 0.0, 0.5, 1) for i in range(n_pos)]
    tweets += [LabeledTweet(f"n{i}", ("y",), 0.0, 0.0, -0.5, 0) for i in range(n_neg)]
    return tweets


def test_sample_balanced_counts():
    out = corpus.sample_balanced(pool(300, 400), 250, seed=1)
    assert len(out) == 500
    assert sum(t.label for t in out) == 250
    assert len({t.id for t in out}) == 500


def test_sample_balanced_zero():
    assert corpus.sample_balanced(pool(3, 3), 0, seed=0) == []


def test_sample_balanced_deterministic():
    p = pool(50, 60)
    assert corpus.sample_balanced(p, 20, 5) == corpus.sample_balanced(p, 20, 5)
    assert corpus.sample_balanced(p, 20, 5) != corpus.sample_balanced(p, 20, 6)


def test_sample_balanced_shortage_names_class():
    with pytest.raises(ShortageError) as e:
        corpus.sample_balanced(pool(5, 50), 10, 0)
    assert e.value.label == 1 and e.value.available == 5


@given(st.integers(0, 2**31), st.integers(0, 10))
def test_balance_for_all_seeds(seed, n):
    out = corpus.sample_balanced(pool(10, 12), n, seed)
    assert sum(t.label for t in out) == n and len(out) == 2 * n


def test_labeled_round_trip(tmp_path):
    tweets = [LabeledTweet("a", ("x", "y"), 1.5, -2.25, 0.3, 1),
              LabeledTweet("b", (), 0.0, 0.0, 0.0, 0)]
    corpus.write_labeled(tweets, tmp_path / "l.jsonl")
    assert corpus.read_labeled(tmp_path / "l.jsonl") == tweets
    first = json.loads((tmp_path / "l.jsonl").read_text().splitlines()[0])
    assert set(first) == {"id", "tokens", "lat", "lon", "score", "label"}
