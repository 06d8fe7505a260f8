"""``uisum`` command-line entry point.

Every subcommand writes only under its ``--out`` target. Failures end with
a single ``uisum: error code=<n> kind=<Name> message=<text>`` line on
stderr; exit codes are 1 (usage/config), 2 (data), 3 (numeric fault).
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import pickle
import random
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, fields
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import analysis, baselines, decode, metrics
from .corpus import Corpus, assign_splits, load_corpus, load_stop_phrases, read_split_lists, strip_stop_phrases
from .errors import ConfigError, DataError, NumericFault, UisumError
from .features import ClassVocabulary, FeatureCache, FeatureConfig, build_class_vocab, cache_key, featurize_screen
from .model import ModelConfig, load_checkpoint
from .train import TrainConfig, make_examples, train
from .vocab import EmbeddingTable, Vocabulary, build_vocab, load_word_vectors, tokenize

logger = logging.getLogger("uisum")

CORPUS_FORMAT = "uisum.corpus"
CORPUS_VERSION = 1
SPLIT_CHOICES = ("train", "validation", "test")

# keys settable from a config file or --set; sections map onto dataclasses
GENERAL_DEFAULTS = {
    "seed": 0,
    "jobs": 1,
    "beam_size": 5,
    "max_vocab": 10000,
    "variant": "full",
    "stop_phrases": None,
}
FEATURE_DEFAULTS = {f"features.{k}": v for k, v in asdict(FeatureConfig()).items()}
MODEL_DEFAULTS = {
    f"model.{f.name}": f.default for f in fields(ModelConfig) if f.name not in ("vocab_size", "num_classes", "word_dim")
}
TRAIN_DEFAULTS = {f"train.{k}": v for k, v in asdict(TrainConfig()).items() if k != "seed"}
AE_DEFAULTS = {f"autoencoder.{k}": v for k, v in asdict(baselines.AutoencoderConfig()).items() if k != "seed"}
DEFAULTS = {**GENERAL_DEFAULTS, **FEATURE_DEFAULTS, **MODEL_DEFAULTS, **TRAIN_DEFAULTS, **AE_DEFAULTS}


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _parse_assignment(item: str) -> tuple[str, object]:
    if "=" not in item:
        raise ConfigError(f"expected key=value, got {item!r}")
    key, value = item.split("=", 1)
    return key.strip(), _parse_value(value.strip())


def read_config_file(path) -> dict:
    """JSON object (nested sections allowed) or ``key = value`` lines."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        data = dict(_parse_assignment(ln) for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#"))
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be an object")
    flat = {}
    for k, v in data.items():
        if isinstance(v, dict):
            flat.update({f"{k}.{kk}": vv for kk, vv in v.items()})
        else:
            flat[k] = v
    return flat


def resolve_config(file_values: dict, flag_values: dict) -> tuple[dict, dict]:
    """Merge defaults < config file < flags; returns (values, sources)."""
    values, sources = dict(DEFAULTS), {k: "default" for k in DEFAULTS}
    for origin, layer in (("file", file_values), ("flag", flag_values)):
        for k, v in layer.items():
            if k not in DEFAULTS:
                raise ConfigError(f"unknown config key {k!r}")
            values[k], sources[k] = v, origin
    for k in ("seed", "jobs", "beam_size", "max_vocab"):
        if not isinstance(values[k], int) or values[k] < (0 if k == "seed" else 1):
            raise ConfigError(f"{k} must be a {'non-negative' if k == 'seed' else 'positive'} integer, got {values[k]!r}")
    return values, sources


def section(values: dict, prefix: str) -> dict:
    p = prefix + "."
    return {k[len(p):]: v for k, v in values.items() if k.startswith(p)}


# --------------------------------------------------------------------------
# Output helpers
# --------------------------------------------------------------------------


@contextlib.contextmanager
def atomic_file(path):
    """Yield a temporary path next to ``path``; it replaces ``path`` only if
    the block completes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.stem}.", suffix=path.suffix, dir=path.parent)
    os.close(fd)
    try:
        yield Path(tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def write_atomic(path, writer, *args) -> None:
    with atomic_file(path) as tmp:
        writer(tmp, *args)


def prepare_out_dir(path) -> Path:
    path = Path(path)
    if path.exists() and not path.is_dir():
        raise DataError(f"output path {path} exists and is not a directory")
    path.mkdir(parents=True, exist_ok=True)
    return path


def require(*paths) -> None:
    for p in paths:
        if p is not None and not Path(p).exists():
            raise DataError(f"input path does not exist: {p}")


def save_corpus(path, corpus: Corpus) -> None:
    with open(path, "wb") as fh:
        pickle.dump({"format": CORPUS_FORMAT, "version": CORPUS_VERSION, "corpus": corpus}, fh, protocol=4)


def load_corpus_bin(path) -> Corpus:
    require(path)
    try:
        with open(path, "rb") as fh:
            blob = pickle.load(fh)
    except Exception as exc:
        raise DataError(f"cannot read corpus file {path}: {exc}") from exc
    if not isinstance(blob, dict) or blob.get("format") != CORPUS_FORMAT or blob.get("version") != CORPUS_VERSION:
        raise DataError(f"{path} is not a corpus file written by 'uisum ingest'")
    return blob["corpus"]


def report(line: str) -> None:
    print(line, flush=True)


# --------------------------------------------------------------------------
# Shared assets (vocabulary, class list, word vectors)
# --------------------------------------------------------------------------


class Assets:
    def __init__(self, directory):
        self.directory = Path(directory)
        require(self.directory / "vocab.txt", self.directory / "classes.txt", self.directory / "embeddings.txt")
        self.vocab = Vocabulary.load(self.directory / "vocab.txt")
        self.classes = ClassVocabulary.load(self.directory / "classes.txt")
        self.table = load_word_vectors(self.directory / "embeddings.txt")
        meta_path = self.directory / "features.json"
        self.feature_config = FeatureConfig(**json.loads(meta_path.read_text())) if meta_path.exists() else FeatureConfig()

    def featurizer(self, cache_dir=None, jobs: int = 1):
        cache = FeatureCache(cache_dir, cache_key(self.feature_config, self.classes, self.table)) if cache_dir else None

        def one(screen):
            if cache is not None:
                return cache.get_or_compute(screen, self.table, self.feature_config, self.classes)
            return featurize_screen(screen, self.table, self.feature_config, self.classes)

        def many(screens):
            screens = list(screens)
            if jobs > 1:
                with ThreadPoolExecutor(jobs) as pool:
                    return list(pool.map(one, screens))
            return [one(s) for s in screens]

        return one, many


def _stop_phrases(values: dict) -> list[str]:
    path = values.get("stop_phrases")
    if path is not None:
        require(path)
    return load_stop_phrases(path)


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------


def cmd_ingest(args, values) -> int:
    require(args.corpus, args.summaries, args.app_details, args.sfa, args.splits)
    root = Path(args.corpus)
    app_details = args.app_details or (root / "app_details.csv")
    sfa = args.sfa or (root / "sfa.csv")
    started = time.monotonic()
    corpus = load_corpus(root, args.summaries, app_details, sfa)
    split_dir = Path(args.splits) if args.splits else root
    if any((split_dir / n).exists() for n in ("train_apps.txt", "val_apps.txt", "test_apps.txt")):
        corpus = assign_splits(corpus, read_split_lists(split_dir))
    write_atomic(args.out, save_corpus, corpus)
    report(f"screens={len(corpus)} summaries={corpus.num_summaries} apps={len(corpus.app_ids)} skipped={len(corpus.skipped)}")
    for name, c in corpus.split_counts().items():
        report(f"split={name} apps={c.apps} screens={c.screens} summaries={c.summaries}")
    logger.info("ingest finished in %.1fs", time.monotonic() - started)
    return 0


def cmd_analyze(args, values) -> int:
    corpus = load_corpus_bin(args.corpus_bin)
    phrases = _stop_phrases(values)
    out = prepare_out_dir(args.out)
    agreement = analysis.word_agreement(corpus, phrases, per_token=args.per_token)
    sfa = analysis.sfa_stats(corpus)
    lengths = analysis.length_distribution(corpus, phrases)
    write_atomic(out / "word_agreement.csv", analysis.write_word_agreement, agreement)
    write_atomic(out / "sfa_stats.csv", analysis.write_sfa_stats, sfa)
    write_atomic(out / "length_hist.csv", analysis.write_length_hist, lengths)
    report(f"mean_length={lengths.mean:.4f} summaries={lengths.count}")
    report(f"sfa_coverage={sfa.coverage:.4f} sfa_iou={sfa.iou:.4f} boxes={sfa.boxes}")
    report(f"agreement_words={len(agreement.words)} occurrence_coverage={agreement.coverage:.4f} "
           f"screens_used={agreement.screens_used} screens_excluded={agreement.screens_excluded}")
    return 0


def cmd_build_vocab(args, values) -> int:
    corpus = load_corpus_bin(args.corpus_bin)
    require(args.glove)
    phrases = _stop_phrases(values)
    train_screens = list(corpus.view("train"))
    if not train_screens:
        raise DataError("the training split is empty")
    summaries = [tokenize(strip_stop_phrases(t, phrases)) for s in train_screens for t in s.summaries]
    vocab = build_vocab(summaries, values["max_vocab"])
    fcfg = FeatureConfig(**section(values, "features"))
    classes = build_class_vocab(train_screens, fcfg.num_classes)

    # element text and app descriptions from every split are model inputs,
    # so their pre-trained vectors are kept; decoder words come from train only
    needed = set(vocab.words)
    for s in corpus.screens.values():
        needed.update(tokenize(s.app_description))
        needed.update(t for el in s.root for t in tokenize(el.text))
    table = load_word_vectors(args.glove, keep=needed)
    out = prepare_out_dir(args.out)
    write_atomic(out / "vocab.txt", vocab.save)
    write_atomic(out / "classes.txt", classes.save)
    write_atomic(out / "embeddings.txt", _write_table, table)
    write_atomic(out / "features.json", lambda p: Path(p).write_text(json.dumps(asdict(fcfg), indent=1)))
    covered = sum(w in table for w in vocab.words)
    report(f"vocab={len(vocab)} classes={len(classes)} vectors={len(table)} vocab_with_vectors={covered}")
    return 0


def _write_table(path, table: EmbeddingTable) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for tok, i in sorted(table.index.items(), key=lambda kv: kv[1]):
            fh.write(tok + " " + " ".join(repr(float(v)) for v in table.vectors[i]) + "\n")


def cmd_featurize(args, values) -> int:
    corpus = load_corpus_bin(args.corpus_bin)
    assets = Assets(args.assets)
    out = prepare_out_dir(args.out)
    _, many = assets.featurizer(out, values["jobs"])
    total = 0
    for split in SPLIT_CHOICES if args.split == "all" else (args.split,):
        feats = many(corpus.view(split))
        total += len(feats)
        report(f"split={split} screens={len(feats)} elements={sum(f.num_elements for f in feats)}")
    report(f"featurized={total}")
    return 0


def _model_config(values: dict, assets: Assets) -> ModelConfig:
    kw = section(values, "model")
    kw.update(
        vocab_size=len(assets.vocab),
        num_classes=len(assets.classes),
        word_dim=assets.table.dimension,
        max_elements=assets.feature_config.max_elements,
        num_buckets=assets.feature_config.num_buckets,
        max_position=assets.feature_config.max_position,
        crop_size=assets.feature_config.crop_size,
    )
    return ModelConfig.variant(values["variant"], **kw)


def cmd_train(args, values) -> int:
    from .plotting import plot_loss_curve

    corpus = load_corpus_bin(args.corpus_bin)
    assets = Assets(args.assets)
    phrases = _stop_phrases(values)
    out = prepare_out_dir(args.out)
    one, _ = assets.featurizer(args.features, values["jobs"])
    train_examples = make_examples(corpus.view("train"), one, phrases)
    val_examples = make_examples(corpus.view("validation"), one, phrases) if "validation" in corpus.splits else []
    mcfg = _model_config(values, assets)
    tcfg = TrainConfig(seed=values["seed"], **section(values, "train"))
    result = train(
        train_examples, assets.vocab, mcfg, tcfg, val_examples,
        word_vectors=assets.table, out_dir=out,
        metadata={"variant": values["variant"], "feature_config": asdict(assets.feature_config)},
    )
    write_atomic(out / "loss_curve.png", plot_loss_curve, result.curve)
    best = "nan" if result.best_val_loss is None else f"{result.best_val_loss:.4f}"
    report(f"steps={result.steps} final_train_loss={result.curve[-1].train_loss:.4f} best_val_loss={best}")
    return 0


def cmd_predict(args, values) -> int:
    corpus = load_corpus_bin(args.corpus_bin)
    assets = Assets(args.assets)
    require(args.checkpoint)
    model, _ = load_checkpoint(args.checkpoint)
    if model.config.vocab_size != len(assets.vocab):
        raise DataError(f"checkpoint vocabulary size {model.config.vocab_size} != assets vocabulary {len(assets.vocab)}")
    _, many = assets.featurizer(args.features, values["jobs"])
    feats = many(corpus.view(args.split))
    rows = decode.predict(model, assets.vocab, feats, beam_size=values["beam_size"])
    write_atomic(args.out, decode.write_predictions, rows)
    report(f"predicted={len(feats)} rows={len(rows)}")
    return 0


def cmd_baseline(args, values) -> int:
    corpus = load_corpus_bin(args.corpus_bin)
    mode = baselines.canonical_mode(args.mode)
    phrases = _stop_phrases(values)
    train_view = corpus.view("train")
    autoencoder = None
    if mode == "pixel_dl":
        ae_cfg = baselines.AutoencoderConfig(seed=values["seed"], **section(values, "autoencoder"))
        autoencoder, history = baselines.train_pixel_autoencoder((s.load_screenshot() for s in train_view), ae_cfg)
        logger.info("autoencoder final mse %.5f", history[-1] if history else float("nan"))
    index = baselines.fit_index(train_view, phrases, autoencoder)
    rows = baselines.run_baseline(corpus.view(args.split), index, mode, seed=values["seed"], autoencoder=autoencoder)
    write_atomic(args.out, decode.write_predictions, rows)
    report(f"mode={mode} indexed={len(index)} predicted={len(rows)}")
    return 0


def cmd_evaluate(args, values) -> int:
    from .plotting import plot_metric_bars

    corpus = load_corpus_bin(args.corpus_bin)
    require(*args.predictions)
    phrases = _stop_phrases(values)
    out = prepare_out_dir(args.out)
    reports = {}
    for path in args.predictions:
        name = Path(path).stem
        rep = metrics.evaluate_suite(path, corpus, args.split, phrases, jobs=values["jobs"])
        reports[name] = rep
        suffix = "" if len(args.predictions) == 1 else f"_{name}"
        write_atomic(out / f"metrics{suffix}.csv", metrics.write_report, rep)
        write_atomic(out / f"per_screen{suffix}.csv", metrics.write_per_screen, rep)
    write_atomic(out / "metrics_bar.png", plot_metric_bars, reports)
    print(metrics.format_table(reports), flush=True)
    return 0


def cmd_make_fixture(args, values) -> int:
    from .synth import make_fixture

    out = prepare_out_dir(args.out)
    info = make_fixture(out, n_screens=args.screens, n_apps=args.apps, seed=values["seed"])
    report(f"screens={info.screens} summaries={info.summaries} apps={info.apps}")
    return 0


# --------------------------------------------------------------------------
# Parser and entry point
# --------------------------------------------------------------------------


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    common.add_argument("--jobs", type=int, default=None, help="worker parallelism (default 1)")
    common.add_argument("--config", default=None, help="JSON or key=value config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    common.add_argument("--stop-phrases", default=None, help="stop-phrase file (one per line)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="uisum", description="Mobile UI screen summarization toolkit.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def add(name, func, help_text):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.set_defaults(func=func)
        return p

    p = add("ingest", cmd_ingest, "parse a dataset directory into a corpus file")
    p.add_argument("--corpus", required=True, help="dataset root (hierarchies/, screenshots/)")
    p.add_argument("--summaries", required=True)
    p.add_argument("--app-details", default=None)
    p.add_argument("--sfa", default=None)
    p.add_argument("--splits", default=None, help="directory with *_apps.txt split lists (default: --corpus)")
    p.add_argument("--out", required=True)

    p = add("analyze", cmd_analyze, "summary agreement, SFA and length statistics")
    p.add_argument("--corpus-bin", required=True)
    p.add_argument("--per-token", action="store_true", help="count repeated words per occurrence")
    p.add_argument("--out", required=True)

    p = add("build-vocab", cmd_build_vocab, "decoder vocabulary, class list and word-vector subset")
    p.add_argument("--corpus-bin", required=True)
    p.add_argument("--glove", required=True)
    p.add_argument("--max-vocab", type=int, default=None)
    p.add_argument("--out", required=True)

    p = add("featurize", cmd_featurize, "precompute screen features into a cache directory")
    p.add_argument("--corpus-bin", required=True)
    p.add_argument("--assets", required=True, help="build-vocab output directory")
    p.add_argument("--split", default="all", choices=SPLIT_CHOICES + ("all",))
    p.add_argument("--out", required=True)

    p = add("train", cmd_train, "train the summarization model")
    p.add_argument("--corpus-bin", required=True)
    p.add_argument("--assets", required=True)
    p.add_argument("--features", default=None, help="feature cache directory")
    p.add_argument("--variant", default=None,
                   choices=("full", "pixel-only", "layout-only", "pixel+layout", "pixel+layout+text"))
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--out", required=True)

    p = add("predict", cmd_predict, "beam-search summaries for a split")
    p.add_argument("--corpus-bin", required=True)
    p.add_argument("--assets", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", default=None)
    p.add_argument("--split", default="test", choices=SPLIT_CHOICES)
    p.add_argument("--beam-size", type=int, default=None)
    p.add_argument("--out", required=True)

    p = add("baseline", cmd_baseline, "nearest-neighbour template baseline")
    p.add_argument("--corpus-bin", required=True)
    p.add_argument("--mode", required=True, choices=("tfidf", "pixel", "pixel-dl", "tfidf+pixel", "tfidf+pixel+appdesc"))
    p.add_argument("--split", default="test", choices=SPLIT_CHOICES)
    p.add_argument("--out", required=True)

    p = add("evaluate", cmd_evaluate, "score prediction files")
    p.add_argument("--corpus-bin", required=True)
    p.add_argument("--predictions", required=True, nargs="+")
    p.add_argument("--split", default="test", choices=SPLIT_CHOICES)
    p.add_argument("--out", required=True)

    p = add("make-fixture", cmd_make_fixture, "write the synthetic fixture dataset")
    p.add_argument("--screens", type=int, default=50)
    p.add_argument("--apps", type=int, default=10)
    p.add_argument("--out", required=True)
    return parser


def _flag_values(args) -> dict:
    flags = dict(_parse_assignment(item) for item in args.set)
    for attr, key in (("seed", "seed"), ("jobs", "jobs"), ("stop_phrases", "stop_phrases"), ("max_vocab", "max_vocab"),
                      ("variant", "variant"), ("beam_size", "beam_size"), ("max_steps", "train.max_steps")):
        v = getattr(args, attr, None)
        if v is not None:
            flags[key] = v
    return flags


def _seed_everything(seed: int, jobs: int) -> None:
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    if jobs == 1:
        torch.set_num_threads(1)


def _fail(code: int, kind: str, message: str) -> int:
    message = " ".join(str(message).split())
    print(f"uisum: error code={code} kind={kind} message={message}", file=sys.stderr, flush=True)
    return code


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail(1, "UsageError", exc)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        file_values = read_config_file(args.config) if args.config else {}
        values, sources = resolve_config(file_values, _flag_values(args))
        logger.info("config %s", json.dumps({k: [v, sources[k]] for k, v in sorted(values.items())}))
        _seed_everything(values["seed"], values["jobs"])
        return args.func(args, values)
    except ConfigError as exc:
        return _fail(1, type(exc).__name__, exc)
    except NumericFault as exc:
        return _fail(3, type(exc).__name__, exc)
    except UisumError as exc:
        return _fail(exc.exit_code, type(exc).__name__, exc)
    except (OSError, ValueError) as exc:
        return _fail(2, type(exc).__name__, exc)
    except FloatingPointError as exc:
        return _fail(3, type(exc).__name__, exc)


if __name__ == "__main__":
    sys.exit(main())
