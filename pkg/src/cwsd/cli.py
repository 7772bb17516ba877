"""Command-line entry point.

Configuration resolution order: flags > ``cwsd.json`` in the working
directory > environment (``CWSD_DATA_ROOT``) > defaults. Commands never
mutate input datasets; every output file is written atomically. Exit
codes: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import datetime as _dt
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import click

from . import builder, classify, corpus, evaluate, experiments
from .embedding import (
    EmbeddingCache,
    PoolingSpec,
    ProviderClient,
    fetch_embeddings,
    write_cache,
)
from .errors import CwsdError
from .sensemodel import build_sense_table, load_sense_table, save_sense_table

CONFIG_FILE = "cwsd.json"


@dataclass
class GlobalConfig:
    data_root: Path | None = None
    cache_dir: Path | None = None
    provider_url: str | None = None
    default_pooling: PoolingSpec | None = None
    threads: int = 1
    log_level: str = "warning"


def _load_config(ctx_params) -> GlobalConfig:
    """Resolve settings: flags > cwsd.json > CWSD_DATA_ROOT env fallback."""
    cfg = GlobalConfig()
    config_path = Path(CONFIG_FILE)
    if config_path.is_file():
        payload = json.loads(config_path.read_text(encoding="utf-8"))
        cfg.data_root = Path(payload["data_root"]) if "data_root" in payload else None
        cfg.cache_dir = Path(payload["cache_dir"]) if "cache_dir" in payload else None
        cfg.provider_url = payload.get("provider_url")
        if "default_pooling" in payload:
            cfg.default_pooling = PoolingSpec.from_json(payload["default_pooling"])
        cfg.threads = payload.get("threads", 1)
        cfg.log_level = payload.get("log_level", "warning")
    for key in ("data_root", "cache_dir"):
        if ctx_params.get(key):
            setattr(cfg, key, Path(ctx_params[key]))
    if ctx_params.get("provider_url"):
        cfg.provider_url = ctx_params["provider_url"]
    if ctx_params.get("threads"):
        cfg.threads = ctx_params["threads"]
    if ctx_params.get("log_level"):
        cfg.log_level = ctx_params["log_level"]
    if cfg.data_root is None and "CWSD_DATA_ROOT" in os.environ:
        cfg.data_root = Path(os.environ["CWSD_DATA_ROOT"])
    if cfg.threads < 1:
        raise click.UsageError("--threads must be >= 1")
    return cfg


def _require(value, flag: str):
    if value is None:
        raise click.UsageError(f"{flag} is required (flag or {CONFIG_FILE})")
    return value


def _parse_layers(text: str):
    if text == "all":
        return "all"
    try:
        return [int(x) for x in text.split(",") if x != ""]
    except ValueError:
        raise click.UsageError(f"bad layer list {text!r}; want e.g. '9,10,11,12' or 'all'")


def _parse_pooling(text: str | None, cfg: GlobalConfig, cache=None) -> PoolingSpec:
    """Explicit spec, else config default, else sum of the cache's last four."""
    if text is None:
        if cfg.default_pooling is not None:
            return cfg.default_pooling
        if cache is not None and len(cache):
            layers = cache.layer_indices()
            return PoolingSpec("sum", tuple(layers[-4:]))
        raise click.UsageError("--pooling is required (no cache to derive it from)")
    mode, sep, layers = text.partition(":")
    parsed = _parse_layers(layers) if sep else None
    if not sep or parsed == "all":
        raise click.UsageError("pooling spec looks like 'sum:9,10,11,12' or 'single:12'")
    try:
        return PoolingSpec(mode, tuple(parsed))
    except ValueError as e:
        raise click.UsageError(str(e))


def _timestamp(no_timestamp: bool) -> str | None:
    if no_timestamp:
        return None
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _echo_written(path):
    click.echo(f"wrote {path}")


@click.group()
@click.option("--data-root", type=click.Path(), default=None)
@click.option("--cache-dir", type=click.Path(), default=None)
@click.option("--provider-url", default=None)
@click.option("--threads", type=int, default=None)
@click.option("--log-level", default=None,
              type=click.Choice(["debug", "info", "warning", "error"]))
@click.pass_context
def main(ctx, **params):
    """Coarse-grained word sense disambiguation toolkit."""
    cfg = _load_config(params)
    logging.basicConfig(level=getattr(logging, cfg.log_level.upper()))
    ctx.obj = cfg


@main.command()
@click.option("--words", default=None, help="comma-separated subset (default: all)")
@click.option("--out", type=click.Path(), default=None, help="write CSV here instead of stdout")
@click.pass_obj
def stats(cfg: GlobalConfig, words, out):
    """Per-word dataset statistics as CSV."""
    root = _require(cfg.data_root, "--data-root")
    names = words.split(",") if words else corpus.list_words(root)
    rows = corpus.stats_csv_rows(
        corpus.word_stats(corpus.load_word_dataset(root, w)) for w in names
    )
    text = "".join(line + "\n" for line in rows)
    if out:
        corpus.write_text_atomic(out, text)
        _echo_written(out)
    else:
        click.echo(text, nl=False)


@main.command()
@click.option("--words", default=None)
@click.option("--layers", default="all", help="comma-separated layer indices or 'all'")
@click.option("--splits", default="train,test", help="splits to embed")
@click.option("--batch-size", type=int, default=32)
@click.pass_obj
def ingest(cfg: GlobalConfig, words, layers, splits, batch_size):
    """Fetch embeddings from the provider into per-word cache files."""
    root = _require(cfg.data_root, "--data-root")
    cache_dir = Path(_require(cfg.cache_dir, "--cache-dir"))
    provider = _require(cfg.provider_url, "--provider-url")
    cache_dir.mkdir(parents=True, exist_ok=True)
    client = ProviderClient(provider)
    layer_sel = _parse_layers(layers)
    names = words.split(",") if words else corpus.list_words(root)
    for word in names:
        ds = corpus.load_word_dataset(root, word)
        instances = []
        for split in splits.split(","):
            instances.extend(ds.split(split))
        records = fetch_embeddings(client, instances, layer_sel, batch_size=batch_size)
        path = cache_dir / f"{word}.cwse"
        write_cache(path, records)
        _echo_written(path)


@main.command("build-senses")
@click.argument("word")
@click.option("--pooling", default=None, help="e.g. 'sum:9,10,11,12' or 'single:12'")
@click.option("--subset", type=click.Path(exists=True), default=None,
              help="file with one train instance id per line")
@click.option("--out", type=click.Path(), default=None)
@click.pass_obj
def build_senses(cfg: GlobalConfig, word, pooling, subset, out):
    """Build and save a sense-centroid table for WORD."""
    root = _require(cfg.data_root, "--data-root")
    cache_dir = Path(_require(cfg.cache_dir, "--cache-dir"))
    ds = corpus.load_word_dataset(root, word)
    cache = EmbeddingCache.load(cache_dir / f"{word}.cwse")
    subset_ids = None
    if subset:
        subset_ids = frozenset(
            Path(subset).read_text(encoding="utf-8").split()
        )
    table = build_sense_table(ds, cache, _parse_pooling(pooling, cfg, cache), subset_ids)
    path = Path(out) if out else cache_dir / f"{word}.senses.cwse"
    save_sense_table(table, path)
    _echo_written(path)


@main.command("classify")
@click.argument("word")
@click.option("--split", default="test", type=click.Choice(list(corpus.SPLITS)))
@click.option("--pooling", default=None)
@click.option("--threshold", type=float, default=None,
              help="abstain below this cosine; 0.75 is the usual analysis value")
@click.option("--senses", type=click.Path(exists=True), default=None,
              help="saved sense table (default: build from cache)")
@click.option("--out", type=click.Path(), default=None)
@click.pass_obj
def classify_cmd(cfg: GlobalConfig, word, split, pooling, threshold, senses, out):
    """Nearest-centroid predictions for one split, as CSV."""
    root = _require(cfg.data_root, "--data-root")
    cache_dir = Path(_require(cfg.cache_dir, "--cache-dir"))
    ds = corpus.load_word_dataset(root, word)
    cache = EmbeddingCache.load(cache_dir / f"{word}.cwse")
    if senses:
        table = load_sense_table(senses)
    else:
        table = build_sense_table(ds, cache, _parse_pooling(pooling, cfg, cache))
    preds = classify.classify_split(ds, cache, table, split, threshold)
    gold = [inst.gold for inst in ds.split(split)]
    text = classify.predictions_csv(preds, gold)
    if out:
        corpus.write_text_atomic(out, text)
        _echo_written(out)
    else:
        click.echo(text, nl=False)


@main.command("evaluate")
@click.argument("predictions", type=click.Path(exists=True))
@click.option("--word", default=None, help="dataset word (enables MFS/LFS columns)")
@click.option("--sweep-out", type=click.Path(), default=None,
              help="also write the similarity threshold sweep CSV")
@click.option("--out", type=click.Path(), default=None)
@click.option("--no-timestamp", is_flag=True, default=False)
@click.pass_obj
def evaluate_cmd(cfg: GlobalConfig, predictions, word, sweep_out, out, no_timestamp):
    """Score a predictions CSV (instance_id,gold,predicted,...) as JSON."""
    preds, gold = classify.parse_predictions_csv(
        Path(predictions).read_text(encoding="utf-8")
    )
    if not preds:
        raise CwsdError(f"{predictions}: no prediction rows")
    mfs_class = lfs_class = None
    if word is not None:
        root = _require(cfg.data_root, "--data-root")
        ds = corpus.load_word_dataset(root, word)
        k = ds.polysemy
        mfs_class, lfs_class = ds.train_mfs(), ds.train_lfs()
    else:
        k = max(max(g for g in gold), max(p.predicted for p in preds)) + 1
    cm = evaluate.confusion(gold, [p.predicted for p in preds], k)
    report = evaluate.metrics(cm, mfs_class=mfs_class, lfs_class=lfs_class)
    payload = evaluate.report_json(
        word or "", "", report, timestamp=_timestamp(no_timestamp)
    )
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if sweep_out:
        corpus.write_text_atomic(
            sweep_out, classify.sweep_csv(classify.similarity_report(preds, gold))
        )
        _echo_written(sweep_out)
    if out:
        corpus.write_text_atomic(out, text)
        _echo_written(out)
    else:
        click.echo(text, nl=False)


@main.command("bias")
@click.argument("predictions", type=click.Path(exists=True), nargs=-1, required=True)
@click.option("--k", "n_classes", type=int, required=True, help="class count")
@click.option("--out", type=click.Path(), default=None)
@click.pass_obj
def bias_cmd(cfg: GlobalConfig, predictions, n_classes, out):
    """Median-aggregated sense bias over one predictions CSV per run."""
    cms = []
    for path in predictions:
        preds, gold = classify.parse_predictions_csv(
            Path(path).read_text(encoding="utf-8")
        )
        cms.append(evaluate.confusion(gold, [p.predicted for p in preds], n_classes))
    report = evaluate.sense_bias(cms)
    text = json.dumps(
        {**report.to_json(), "runs_aggregated": report.runs_aggregated},
        indent=2, sort_keys=True,
    ) + "\n"
    if out:
        corpus.write_text_atomic(out, text)
        _echo_written(out)
    else:
        click.echo(text, nl=False)


@main.command("experiment")
@click.argument("spec_file", type=click.Path(exists=True))
@click.option("--out-dir", type=click.Path(), default="reports")
@click.option("--no-timestamp", is_flag=True, default=False)
@click.pass_obj
def experiment_cmd(cfg: GlobalConfig, spec_file, out_dir, no_timestamp):
    """Run a declarative experiment spec (JSON) and write reports."""
    root = _require(cfg.data_root, "--data-root")
    spec = experiments.ExperimentSpec.load(spec_file)
    needs_cache = isinstance(spec.classifier, experiments.KnnConfig)
    cache_dir = _require(cfg.cache_dir, "--cache-dir") if needs_cache else cfg.cache_dir
    experiments.run_experiment(
        spec,
        root,
        cache_dir=cache_dir,
        out_dir=out_dir,
        threads=cfg.threads,
        timestamp=_timestamp(no_timestamp),
    )
    _echo_written(Path(out_dir) / spec.name)


@main.command("layer-sweep")
@click.option("--words", default=None)
@click.option("--layers", required=True, help="comma-separated layer indices")
@click.option("--split", default="test", type=click.Choice(["test", "ood_test"]))
@click.option("--out", type=click.Path(), default=None)
@click.pass_obj
def layer_sweep_cmd(cfg: GlobalConfig, words, layers, split, out):
    """Single-layer 1NN performance curve across layers, as CSV."""
    root = _require(cfg.data_root, "--data-root")
    cache_dir = Path(_require(cfg.cache_dir, "--cache-dir"))
    names = words.split(",") if words else corpus.list_words(root)
    datasets = [corpus.load_word_dataset(root, w) for w in names]
    caches = {w: EmbeddingCache.load(cache_dir / f"{w}.cwse") for w in names}
    rows = experiments.layer_sweep(datasets, caches, _parse_layers(layers), split)
    text = experiments.layer_sweep_csv(rows)
    if out:
        corpus.write_text_atomic(out, text)
        _echo_written(out)
    else:
        click.echo(text, nl=False)


@main.command("dataset-build")
@click.argument("input_jsonl", type=click.Path(exists=True))
@click.argument("word")
@click.option("--sense-map", type=click.Path(exists=True), required=True,
              help="JSON file: link title -> sense id")
@click.option("--ratio", type=float, default=builder.DEFAULT_TRAIN_RATIO,
              show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--min-occurrences", type=int, default=builder.DEFAULT_MIN_OCCURRENCES,
              show_default=True)
@click.option("--out-root", type=click.Path(), required=True)
def dataset_build(input_jsonl, word, sense_map, ratio, seed, min_occurrences, out_root):
    """Build a word dataset directory from annotated sentences."""
    sense_mapping = json.loads(Path(sense_map).read_text(encoding="utf-8"))
    ds, report = builder.build_word_dataset(
        input_jsonl, word, sense_mapping,
        ratio=ratio, seed=seed, min_occurrences=min_occurrences,
    )
    word_dir = corpus.write_word_dataset(ds, out_root)
    corpus.write_text_atomic(
        word_dir / "build_report.json", json.dumps(report, indent=2, sort_keys=True) + "\n"
    )
    _echo_written(word_dir)


def run():
    """Console entry point mapping domain errors to exit code 1."""
    try:
        main.main(standalone_mode=True)
    except CwsdError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(1)


if __name__ == "__main__":
    run()
