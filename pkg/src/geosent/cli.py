"""Command-line entry point: ``geosent <subcommand> [flags]``.

Exit codes: 0 success, 2 input/I-O, 3 configuration, 4 provider (including
offline cache misses), 5 numeric, 64 usage.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import corpus, encode, experiment, geo
from .errors import CacheMissError, ConfigError, GeoSentError
from .nn import checkpoint
from .nn.gradcheck import TOLERANCE, grad_check_all

log = logging.getLogger("geosent")

EXIT_USAGE = 64


class HelpFormatter(argparse.HelpFormatter):
    """Appends the default to every optional flag that has a meaningful one."""

    def _get_help_string(self, action):
        text = action.help or ""
        if (action.default not in (None, argparse.SUPPRESS) and not action.required
                and not isinstance(action, argparse._StoreFalseAction)
                and action.option_strings and "default" not in text):
            text += " (default: %(default)s)"
        return text


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _sub(subparsers, name, help):
    return subparsers.add_parser(name, help=help, description=help,
                                 formatter_class=HelpFormatter)


def build_parser():
    p = Parser(prog="geosent", formatter_class=HelpFormatter,
               description="Sentiment classification of geo-tagged tweets.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    s = _sub(sub, "ingest", "load a corpus, clean text, score and label sentiment")
    s.add_argument("--corpus", required=True, help="JSONL or TSV file of (id, text, lat, lon)")
    s.add_argument("--format", choices=("jsonl", "tsv"), default="jsonl", help="corpus file format")
    s.add_argument("--lexicon", default=None, help="phrase lexicon TSV (bundled if omitted)")
    s.add_argument("--out", required=True, help="labeled JSONL output")

    s = _sub(sub, "label", "draw a balanced, shuffled subset from a labeled corpus")
    s.add_argument("--corpus", required=True, help="labeled JSONL from ingest")
    s.add_argument("--n-per-class", type=int, default=250, help="tweets drawn per label")
    s.add_argument("--seed", type=int, default=0, help="sampling seed")
    s.add_argument("--out", required=True, help="balanced JSONL output")

    s = _sub(sub, "geofetch", "fill the nearby-category cache for every tweet (resumable)")
    s.add_argument("--corpus", required=True, help="labeled JSONL")
    s.add_argument("--cache", required=True, help="cache JSONL, appended to")
    s.add_argument("--provider", choices=("geonames", "places", "both"), default="both",
                   help="which provider(s) to resolve")
    s.add_argument("--radius", type=int, default=geo.DEFAULT_RADIUS_M, help="meters")
    s.add_argument("--rate", type=float, default=None,
                   help="requests per second (provider default if omitted)")
    mode = s.add_mutually_exclusive_group()
    mode.add_argument("--offline", dest="offline", action="store_true", default=True,
                      help="cache only; report misses (the default mode)")
    mode.add_argument("--online", dest="offline", action="store_false",
                      help="query providers for misses (needs GEONAMES_USER / PLACES_API_KEY)")

    s = _sub(sub, "encode", "build the vocabulary and feature matrix for one dataset variant")
    s.add_argument("--corpus", required=True, help="labeled JSONL")
    s.add_argument("--cache", default=None, help="cache JSONL (needed unless text_only)")
    s.add_argument("--variant", choices=experiment.VARIANTS, default="text_only",
                   help="dataset variant")
    s.add_argument("--strategy", choices=encode.STRATEGIES[1:], default="literal",
                   help="how category values enter the embedding lookup")
    s.add_argument("--taxonomy", default=None, help="taxonomy file (bundled if omitted)")
    s.add_argument("--min-count", type=int, default=1, help="vocabulary frequency cut-off")
    s.add_argument("--out-dir", required=True, help="directory for vocab.jsonl and features")

    s = _sub(sub, "train", "train one model on a 70:30 split and save a checkpoint")
    s.add_argument("--corpus", required=True, help="labeled JSONL")
    s.add_argument("--cache", default=None, help="cache JSONL (needed unless text_only)")
    s.add_argument("--taxonomy", default=None, help="taxonomy file (bundled if omitted)")
    s.add_argument("--variant", choices=experiment.VARIANTS, default="text_only",
                   help="dataset variant")
    s.add_argument("--model", choices=("cnn", "bilstm"), default="cnn", help="architecture")
    s.add_argument("--embeddings", default="random", help="pre-trained text embedding file")
    s.add_argument("--dim", type=int, choices=(200, 300), default=200,
                   help="embedding dimension")
    s.add_argument("--epochs", type=int, default=20, help="training epochs")
    s.add_argument("--strategy", choices=encode.STRATEGIES[1:], default="literal",
                   help="how category values enter the embedding lookup")
    s.add_argument("--seed", type=int, default=0, help="split and initialization seed")
    s.add_argument("--out", required=True, help="checkpoint path")

    s = _sub(sub, "run", "run every cell of an experiment grid and write tables")
    s.add_argument("--config", required=True, help="grid JSON")
    s.add_argument("--out-dir", default=None, help="overrides the grid's out_dir")
    s.add_argument("--seed", type=int, default=None, help="overrides base_seed")

    s = _sub(sub, "table", "render a results log as a table")
    s.add_argument("--results", required=True, help="results JSONL")
    s.add_argument("--format", choices=("csv", "markdown"), default="markdown",
                   help="table format")
    s.add_argument("--out", default=None, help="output file (stdout if omitted)")

    s = _sub(sub, "gradcheck", "compare backprop with central differences for every layer")
    s.add_argument("--seed", type=int, default=0, help="seed for the random test instances")

    s = _sub(sub, "synth", "write a synthetic labeled corpus and matching cache")
    s.add_argument("--out-dir", required=True, help="directory for the fixture files")
    s.add_argument("--n-per-class", type=int, default=250, help="tweets per label")
    s.add_argument("--flip-rate", type=float, default=0.3,
                   help="share of tweets whose label is set by the key location category")
    s.add_argument("--seed", type=int, default=0, help="generator seed")
    return p


def cmd_ingest(args):
    tweets, malformed = corpus.read_corpus(args.corpus, args.format)
    lexicon = corpus.load_lexicon(args.lexicon)
    labeled = [corpus.label_tweet(corpus.clean_text(t), lexicon) for t in tweets]
    corpus.write_labeled(labeled, args.out)
    empty = sum(t.empty for t in labeled)
    pos = sum(t.label for t in labeled)
    print(f"records: {len(labeled)}  malformed: {malformed}  empty after cleaning: {empty}  "
          f"positive: {pos}  negative: {len(labeled) - pos}")
    return 0


def cmd_label(args):
    tweets = corpus.read_labeled(args.corpus)
    chosen = corpus.sample_balanced(tweets, args.n_per_class, args.seed)
    corpus.write_labeled(chosen, args.out)
    print(f"wrote {len(chosen)} tweets ({args.n_per_class} per class) to {args.out}")
    return 0


def cmd_geofetch(args):
    tweets = corpus.read_labeled(args.corpus)
    cache = geo.NearbyCache(args.cache)
    providers = geo.PROVIDERS if args.provider == "both" else (args.provider,)
    mode = "offline" if args.offline else "online"
    missing = []
    for provider in providers:
        client = None
        if mode == "online":
            bucket = geo.shared_bucket(provider, args.rate)
            client = geo.ProviderClient(provider, bucket=bucket)
        hits = fetched = 0
        for i, t in enumerate(tweets, 1):
            key = geo.cache_key(provider, geo.GeoPoint(t.lat, t.lon), args.radius)
            if key in cache:
                hits += 1
                continue
            try:
                geo.fetch_nearby(geo.GeoPoint(t.lat, t.lon), provider, args.radius, cache,
                                 mode, client)
                fetched += 1
            except CacheMissError as e:
                missing.extend(e.keys)
            if i % 100 == 0:
                log.info("%s: %d/%d done", provider, i, len(tweets))
        print(f"{provider}: {hits} cached, {fetched} fetched")
    if missing:
        raise CacheMissError(missing)
    return 0


def _single_dataset(args, variant):
    tweets = corpus.read_labeled(args.corpus)
    _, provider = experiment.variant_parts(variant)
    if provider is None:
        return experiment.Dataset(tweets, min_count=getattr(args, "min_count", 1))
    if not args.cache:
        raise ConfigError(f"variant {variant} needs --cache")
    paths = {provider: args.taxonomy} if args.taxonomy else {}
    return experiment.Dataset.from_cache(tweets, geo.NearbyCache(args.cache), paths,
                                         getattr(args, "min_count", 1),
                                         providers=(provider,))


def cmd_encode(args):
    ds = _single_dataset(args, args.variant)
    ids, scale = ds.features(args.variant, args.strategy)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds.vocab.save(out / "vocab.jsonl")
    np.savez(out / f"features_{args.variant}.npz", ids=ids, scale=scale, labels=ds.labels)
    print(f"vocabulary {ds.vocab.size} tokens; features {ids.shape} -> {out}")
    return 0


def cmd_train(args):
    ds = _single_dataset(args, args.variant)
    cfg = experiment.ExperimentConfig(
        model=args.model, embedding=args.embeddings, dim=args.dim, variant=args.variant,
        epochs=args.epochs, strategy=args.strategy, base_seed=args.seed, repeats=1)
    ids, scale = ds.features(args.variant, args.strategy)
    tr, te = experiment.split_indices(ds.labels, cfg.split_ratio, args.seed)
    table = None
    if args.embeddings != "random":
        table, _ = encode.load_embeddings(args.embeddings)
    emb = encode.build_embedding_matrix(ds.vocab, ds.taxonomy_size(args.variant), table,
                                        args.dim, args.seed)
    model = experiment.train(cfg, (ids[tr], scale[tr], ds.labels[tr]), args.seed, emb)
    acc = experiment.evaluate(model, (ids[te], scale[te], ds.labels[te]))
    meta = {"vocab_digest": ds.vocab.digest(), "variant": args.variant,
            "strategy": args.strategy, "embedding_source": emb.source,
            "test_accuracy": acc, "history": model.history}
    _, provider = experiment.variant_parts(args.variant)
    if provider:
        meta["taxonomy_digest"] = ds.taxonomies[provider].digest
    checkpoint.save_checkpoint(args.out, model.model, meta)
    print(f"test accuracy {acc:.4f}; checkpoint -> {args.out}")
    return 0


def cmd_run(args):
    configs, out_dir = experiment.load_grid(args.config)
    if args.out_dir:
        out_dir = Path(args.out_dir)
    if args.seed is not None:
        for c in configs:
            c.base_seed = args.seed
    out_dir.mkdir(parents=True, exist_ok=True)
    datasets = {}
    results = []
    for cfg in configs:
        _, provider = experiment.variant_parts(cfg.variant)
        key = (cfg.corpus, cfg.cache, cfg.min_count)
        if key not in datasets:
            tweets = corpus.read_labeled(cfg.corpus)
            cache = geo.NearbyCache(cfg.cache) if cfg.cache else geo.NearbyCache()
            datasets[key] = experiment.Dataset.from_cache(
                tweets, cache, cfg.taxonomies, cfg.min_count, cfg.radius_m)
        res = experiment.run_experiment(cfg, datasets[key])
        experiment.append_results([res], out_dir / "results.jsonl")
        results.append(res)
        print(f"{cfg.model}/{cfg.embedding_label}/{cfg.dim}/{cfg.variant}: "
              f"{res.mean * 100:.2f} +/- {res.std * 100:.2f} ({res.status})")
    experiment.emit_table(results, "csv", out_dir / "table.csv")
    experiment.emit_table(results, "markdown", out_dir / "table.md")
    print(f"tables -> {out_dir / 'table.csv'}, {out_dir / 'table.md'}")
    partial = [r for r in results if r.status != "complete"]
    return 5 if partial else 0


def cmd_table(args):
    results = experiment.read_results(args.results)
    text = experiment.emit_table(results, args.format, args.out)
    if args.out is None:
        sys.stdout.write(text)
    return 0


def cmd_gradcheck(args):
    report = grad_check_all(seed=args.seed)
    ok = True
    for name, err in report.items():
        passed = err < TOLERANCE
        ok &= passed
        print(f"{name:<18} max rel error {err:.3e}  {'ok' if passed else 'FAIL'}")
    return 0 if ok else 5


def cmd_synth(args):
    from .synthetic import write_fixture
    d = write_fixture(args.out_dir, args.n_per_class, args.seed, args.flip_rate)
    print(f"synthetic corpus -> {d}")
    return 0


COMMANDS = {
    "ingest": cmd_ingest, "label": cmd_label, "geofetch": cmd_geofetch, "encode": cmd_encode,
    "train": cmd_train, "run": cmd_run, "table": cmd_table, "gradcheck": cmd_gradcheck,
    "synth": cmd_synth,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except GeoSentError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
