import json
import shutil

import numpy as np
import pytest

from geosent import cli, corpus, experiment
from geosent.nn import checkpoint

from conftest import FIXTURES, SIGNAL


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture
def small(tmp_path):
    """A 40-tweet fixture written through the synth subcommand."""
    assert run("synth", "--out-dir", tmp_path / "fx", "--n-per-class", 20, "--seed", 1) == 0
    return tmp_path / "fx"


def test_help_lists_defaults(capsys):
    with pytest.raises(SystemExit) as e:
        run("geofetch", "--help")
    assert e.value.code == 0
    out = capsys.readouterr().out
    for flag in ("--corpus", "--cache", "--provider", "--radius", "--offline", "--online"):
        assert flag in out
    assert "default: 300" in out and "default: both" in out


@pytest.mark.parametrize("argv", [["bogus"], ["table"], ["gradcheck", "--nope"], []])
def test_usage_errors_exit_64(argv, capsys):
    with pytest.raises(SystemExit) as e:
        run(*argv)
    assert e.value.code == 64
    assert "usage" in capsys.readouterr().err


def test_ingest_tsv(tmp_path, capsys):
    out = tmp_path / "labeled.jsonl"
    assert run("ingest", "--corpus", FIXTURES / "raw_sample.tsv", "--format", "tsv",
               "--out", out) == 0
    tweets = corpus.read_labeled(out)
    assert [t.id for t in tweets] == ["t1", "t2", "t3", "t5"]
    assert tweets[0].tokens == ("bob", "check", "fun")
    assert tweets[1].label == 1 and tweets[2].label == 0 and tweets[3].score == 0.0
    assert "malformed: 2" in capsys.readouterr().out


def test_ingest_custom_lexicon(tmp_path):
    lex = tmp_path / "lex.tsv"
    lex.write_text("sky\t0.4\n#NEGATORS\nnot\n")
    out = tmp_path / "l.jsonl"
    assert run("ingest", "--corpus", FIXTURES / "raw_sample.tsv", "--format", "tsv",
               "--lexicon", lex, "--out", out) == 0
    assert corpus.read_labeled(out)[-1].label == 1


def test_ingest_missing_file_exit_2(tmp_path):
    assert run("ingest", "--corpus", tmp_path / "none.jsonl", "--out", tmp_path / "o") == 2


def test_ingest_bad_lexicon_exit_2(tmp_path):
    lex = tmp_path / "lex.tsv"
    lex.write_text("good\t7\n")
    assert run("ingest", "--corpus", FIXTURES / "raw_sample.tsv", "--format", "tsv",
               "--lexicon", lex, "--out", tmp_path / "o") == 2


def test_label_balanced(small, tmp_path):
    out = tmp_path / "bal.jsonl"
    assert run("label", "--corpus", small / "labeled.jsonl", "--n-per-class", 5,
               "--seed", 3, "--out", out) == 0
    tweets = corpus.read_labeled(out)
    assert len(tweets) == 10 and sum(t.label for t in tweets) == 5


def test_label_shortage_exit_3(small, tmp_path):
    assert run("label", "--corpus", small / "labeled.jsonl", "--n-per-class", 500,
               "--out", tmp_path / "o.jsonl") == 3


def test_geofetch_offline_warm_cache(small, capsys):
    assert run("geofetch", "--corpus", small / "labeled.jsonl", "--cache",
               small / "cache.jsonl", "--offline") == 0
    assert "40 cached" in capsys.readouterr().out


def test_geofetch_offline_cold_cache_exit_4(small, tmp_path, capsys):
    cold = tmp_path / "cold.jsonl"
    assert run("geofetch", "--corpus", small / "labeled.jsonl", "--cache", cold,
               "--provider", "places", "--offline") == 4
    assert "cache miss" in capsys.readouterr().err
    assert not cold.exists()


def test_geofetch_online_without_credentials_exit_3(small, tmp_path):
    assert run("geofetch", "--corpus", small / "labeled.jsonl", "--cache",
               tmp_path / "c.jsonl", "--online") == 3


def test_geofetch_online_resumes(small, tmp_path, monkeypatch):
    """Only keys missing from the cache hit the network; rerunning sends nothing."""
    import geosent.geo as geo_mod

    class Session:
        calls = 0

        def get(self, url, params=None, timeout=None):
            Session.calls += 1

            class R:
                status_code = 200

                def json(self):
                    return {"status": "OK", "results": [{"types": ["park"]}]}
            return R()

    monkeypatch.setenv("PLACES_API_KEY", "test-key")
    monkeypatch.setattr("requests.Session", Session)
    monkeypatch.setattr(geo_mod, "DEFAULT_RATES", {"geonames": 1e6, "places": 1e6})
    monkeypatch.setattr(geo_mod, "_buckets", {})
    cache = tmp_path / "partial.jsonl"
    lines = (small / "cache.jsonl").read_text().splitlines()
    places = [ln for ln in lines if '"provider":"places"' in ln]
    cache.write_text("\n".join(places[:30]) + "\n")
    argv = ["geofetch", "--corpus", small / "labeled.jsonl", "--cache", cache,
            "--provider", "places", "--online"]
    assert run(*argv) == 0
    assert Session.calls == 10
    assert len(cache.read_text().splitlines()) == 40
    assert run(*argv) == 0
    assert Session.calls == 10


def test_encode_writes_vocab_and_features(small, tmp_path):
    out = tmp_path / "enc"
    assert run("encode", "--corpus", small / "labeled.jsonl", "--cache", small / "cache.jsonl",
               "--variant", "count_geonames", "--out-dir", out) == 0
    data = np.load(out / "features_count_geonames.npz")
    assert data["ids"].shape == (40, 76) and data["labels"].shape == (40,)
    rows = [json.loads(line) for line in (out / "vocab.jsonl").read_text().splitlines()]
    assert rows[0] == {"token": "<pad>", "id": 0}


def test_encode_reserved_places(small, tmp_path):
    out = tmp_path / "enc"
    assert run("encode", "--corpus", small / "labeled.jsonl", "--cache", small / "cache.jsonl",
               "--variant", "count_places", "--strategy", "reserved", "--out-dir", out) == 0
    assert np.load(out / "features_count_places.npz")["ids"].shape == (40, 125)


def test_encode_location_variant_needs_cache(small, tmp_path):
    assert run("encode", "--corpus", small / "labeled.jsonl", "--variant", "onehot_places",
               "--out-dir", tmp_path / "e") == 3


def test_encode_bad_taxonomy_exit_3(small, tmp_path):
    tax = tmp_path / "tax.txt"
    tax.write_text("only\nthree\nentries\n")
    assert run("encode", "--corpus", small / "labeled.jsonl", "--cache", small / "cache.jsonl",
               "--variant", "onehot_places", "--taxonomy", tax, "--out-dir", tmp_path / "e") == 3


def test_train_writes_checkpoint(small, tmp_path):
    ckpt = tmp_path / "m.ckpt"
    assert run("train", "--corpus", small / "labeled.jsonl", "--cache", small / "cache.jsonl",
               "--variant", "onehot_geonames", "--model", "bilstm", "--epochs", 2,
               "--out", ckpt) == 0
    model, meta = checkpoint.load_checkpoint(ckpt)
    assert model.spec.kind == "bilstm" and model.seq_len == 76
    assert len(meta["vocab_digest"]) == 64 and len(meta["taxonomy_digest"]) == 64
    assert 0 <= meta["test_accuracy"] <= 1 and len(meta["history"]) == 2


def test_train_with_embeddings(small, tmp_path):
    ckpt = tmp_path / "m.ckpt"
    assert run("train", "--corpus", small / "labeled.jsonl", "--embeddings",
               FIXTURES / "vectors_d200.txt", "--epochs", 1, "--out", ckpt) == 0
    _, meta = checkpoint.load_checkpoint(ckpt)
    assert meta["embedding_source"].startswith("pretrained:")


def write_grid(tmp_path, fixture_dir, **defaults):
    grid = {"corpus": str(fixture_dir / "labeled.jsonl"), "cache": str(fixture_dir / "cache.jsonl"),
            "defaults": {"repeats": 2, "epochs": 2, **defaults},
            "grid": [{"model": "cnn", "embedding": "random", "dim": 200,
                      "variants": ["text_only", "onehot_geonames"]}],
            "out_dir": "out"}
    path = tmp_path / "grid.json"
    path.write_text(json.dumps(grid))
    return path


def test_run_and_table(small, tmp_path, capsys):
    grid = write_grid(tmp_path, small)
    assert run("run", "--config", grid) == 0
    out = tmp_path / "out"
    results = experiment.read_results(out / "results.jsonl")
    assert [r.config["variant"] for r in results] == ["text_only", "onehot_geonames"]
    assert all(len(r.inputs["corpus"]) == 64 for r in results)
    md = (out / "table.md").read_text()
    assert md.count("\n") == 3 and "**" in md
    capsys.readouterr()
    assert run("table", "--results", out / "results.jsonl", "--format", "csv") == 0
    assert capsys.readouterr().out == (out / "table.csv").read_text()


def test_run_is_reproducible(small, tmp_path):
    grid = write_grid(tmp_path, small)
    assert run("run", "--config", grid, "--out-dir", tmp_path / "a") == 0
    assert run("run", "--config", grid, "--out-dir", tmp_path / "b") == 0
    for name in ("table.csv", "table.md"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_run_bad_config_exit_3(tmp_path):
    (tmp_path / "g.json").write_text(json.dumps({"grid": [{"model": "transformer"}]}))
    assert run("run", "--config", tmp_path / "g.json") == 3


def test_run_missing_config_exit_2(tmp_path):
    assert run("run", "--config", tmp_path / "nope.json") == 2


def test_table_duplicate_rows_exit_3(small, tmp_path):
    grid = write_grid(tmp_path, small)
    assert run("run", "--config", grid) == 0
    log = tmp_path / "out" / "results.jsonl"
    log.write_text(log.read_text() * 2)
    assert run("table", "--results", log) == 3


def test_gradcheck_passes(capsys):
    assert run("gradcheck") == 0
    out = capsys.readouterr().out
    for name in ("embedding", "conv1d", "maxpool1d", "dense", "dropout_eval", "bilstm",
                 "model_cnn", "model_bilstm"):
        assert name in out
    assert "FAIL" not in out


def test_gradcheck_fails_on_broken_backward(monkeypatch, capsys):
    from geosent.nn import functional as F
    original = F.dense_backward
    monkeypatch.setattr(F, "dense_backward",
                        lambda dout, cache: tuple(2 * g for g in original(dout, cache)))
    assert run("gradcheck") == 5
    assert "FAIL" in capsys.readouterr().out


def test_shipped_fixture_matches_generator(tmp_path):
    assert run("synth", "--out-dir", tmp_path / "fx") == 0
    for name in ("labeled.jsonl", "raw.jsonl", "cache.jsonl"):
        assert (tmp_path / "fx" / name).read_bytes() == (SIGNAL / name).read_bytes(), name
