"""Training-subset samplers and the multi-run experiment driver.

Samplers are deterministic functions of (dataset, parameters, seed); every
word draws from its own stream derived by hashing (seed, word), so adding
words to an experiment never changes the samples of existing ones.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

import numpy as np

from . import baseline, classify, evaluate
from .baseline import Hyper, derive_seed
from .corpus import WordDataset, load_word_dataset, write_text_atomic
from .embedding import EmbeddingCache, PoolingSpec, pool
from .errors import CwsdError
from .sensemodel import build_sense_table


@dataclass(frozen=True)
class SamplerSpec:
    """Which training subset to use: full, n_shot(n), fraction(p), balanced."""

    kind: str
    n: int | None = None
    p: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("full", "n_shot", "fraction", "balanced"):
            raise CwsdError(f"unknown sampler kind {self.kind!r}")
        if self.kind == "n_shot" and (self.n is None or self.n < 1):
            raise CwsdError("n_shot sampler needs n >= 1")
        if self.kind == "fraction" and not (self.p is not None and 0 < self.p <= 1):
            raise CwsdError("fraction sampler needs 0 < p <= 1")

    def to_json(self) -> dict:
        out = {"kind": self.kind, "seed": self.seed}
        if self.n is not None:
            out["n"] = self.n
        if self.p is not None:
            out["p"] = self.p
        return out

    @classmethod
    def from_json(cls, payload) -> "SamplerSpec":
        return cls(
            kind=payload["kind"],
            n=payload.get("n"),
            p=payload.get("p"),
            seed=payload.get("seed", 0),
        )


def _per_sense_train_ids(ds: WordDataset) -> dict[int, list[str]]:
    buckets: dict[int, list[str]] = {c: [] for c in range(ds.polysemy)}
    for inst in ds.train:
        buckets[inst.gold].append(inst.instance_id)
    return buckets


def _word_rng(ds: WordDataset, seed: int, label: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, ds.word, label))


def _take(rng, ids: list[str], n: int) -> list[str]:
    picked = rng.choice(len(ids), size=n, replace=False)
    return [ids[i] for i in picked]


def sample_nshot(ds: WordDataset, n: int, seed: int):
    """Exactly n train instances per sense, or None when unavailable.

    A word where any sense has fewer than n train instances cannot host
    the n-shot setting; the caller records a skipped run rather than an
    error.
    """
    buckets = _per_sense_train_ids(ds)
    if any(len(ids) < n for ids in buckets.values()):
        return None
    rng = _word_rng(ds, seed, f"nshot-{n}")
    out = set()
    for c in sorted(buckets):
        out.update(_take(rng, buckets[c], n))
    return frozenset(out)


def _round_half_up_int(x: Decimal) -> int:
    return int(x.quantize(Decimal(1), rounding=ROUND_HALF_UP))


def sample_fraction(ds: WordDataset, p: float, seed: int):
    """Shrink the train set to fraction p, preserving sense proportions.

    Per sense: max(1, round-half-up(p * count)) instances, so no sense is
    ever extinguished. p = 1 returns the full train set.
    """
    if not 0 < p <= 1:
        raise CwsdError(f"fraction must be in (0, 1], got {p}")
    buckets = _per_sense_train_ids(ds)
    if p == 1:
        return frozenset(i for ids in buckets.values() for i in ids)
    rng = _word_rng(ds, seed, f"fraction-{p!r}")
    out = set()
    p_dec = Decimal(repr(p))
    for c in sorted(buckets):
        ids = buckets[c]
        if not ids:
            continue
        take = max(1, _round_half_up_int(p_dec * len(ids)))
        out.update(_take(rng, ids, min(take, len(ids))))
    return frozenset(out)


def sample_balanced(ds: WordDataset, seed: int):
    """Reduce every sense to the minimum per-sense train count."""
    buckets = _per_sense_train_ids(ds)
    if any(not ids for ids in buckets.values()):
        empty = [c for c, ids in buckets.items() if not ids]
        raise CwsdError(
            f"{ds.word}: sense(s) {empty} have no train instances to balance"
        )
    m = min(len(ids) for ids in buckets.values())
    rng = _word_rng(ds, seed, "balanced")
    out = set()
    for c in sorted(buckets):
        out.update(_take(rng, buckets[c], m))
    return frozenset(out)


def sample(ds: WordDataset, spec: SamplerSpec, seed: int | None = None):
    """Dispatch on the sampler kind; None means the run is skipped."""
    seed = spec.seed if seed is None else seed
    if spec.kind == "full":
        return frozenset(inst.instance_id for inst in ds.train)
    if spec.kind == "n_shot":
        return sample_nshot(ds, spec.n, seed)
    if spec.kind == "fraction":
        return sample_fraction(ds, spec.p, seed)
    return sample_balanced(ds, seed)


@dataclass(frozen=True)
class KnnConfig:
    pooling: PoolingSpec
    threshold: float | None = None

    def to_json(self) -> dict:
        return {
            "kind": "knn",
            "pooling": self.pooling.to_json(),
            "threshold": self.threshold,
        }


@dataclass(frozen=True)
class LinearConfig:
    hyper: Hyper = field(default_factory=Hyper)
    feature_mode: str = baseline.SENTENCE_MEAN
    vector_source: str = "random_init_lookup"
    dim: int = 300
    table_path: str | None = None

    def to_json(self) -> dict:
        return {
            "kind": "linear",
            "hyper": {
                "lr": self.hyper.lr,
                "epochs": self.hyper.epochs,
                "l2": self.hyper.l2,
                "seed": self.hyper.seed,
                "batch_size": self.hyper.batch_size,
                "shuffle": self.hyper.shuffle,
            },
            "feature_mode": self.feature_mode,
            "vector_source": self.vector_source,
            "dim": self.dim,
            "table_path": self.table_path,
        }


def _classifier_from_json(payload):
    kind = payload.get("kind")
    if kind == "knn":
        return KnnConfig(
            pooling=PoolingSpec.from_json(payload["pooling"]),
            threshold=payload.get("threshold"),
        )
    if kind == "linear":
        h = payload.get("hyper", {})
        return LinearConfig(
            hyper=Hyper(
                lr=h.get("lr", 0.1),
                epochs=h.get("epochs", 25),
                l2=h.get("l2", 1e-4),
                seed=h.get("seed", 0),
                batch_size=h.get("batch_size", 32),
                shuffle=h.get("shuffle", True),
            ),
            feature_mode=payload.get("feature_mode", baseline.SENTENCE_MEAN),
            vector_source=payload.get("vector_source", "random_init_lookup"),
            dim=payload.get("dim", 300),
            table_path=payload.get("table_path"),
        )
    raise CwsdError(f"unknown classifier kind {kind!r}")


@dataclass(frozen=True)
class ExperimentSpec:
    """Declarative description of one experiment."""

    name: str
    words: tuple[str, ...]
    sampler: SamplerSpec
    classifier: object  # KnnConfig | LinearConfig
    runs: int = 1
    seeds: tuple[int, ...] = (0,)
    eval_split: str = "test"

    def __post_init__(self):
        if len(self.seeds) != self.runs:
            raise CwsdError(
                f"{self.runs} runs need {self.runs} seeds, got {len(self.seeds)}"
            )
        if self.eval_split not in ("test", "ood_test"):
            raise CwsdError(f"eval_split must be test or ood_test, got {self.eval_split!r}")

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "words": list(self.words),
            "sampler": self.sampler.to_json(),
            "classifier": self.classifier.to_json(),
            "runs": self.runs,
            "seeds": list(self.seeds),
            "eval_split": self.eval_split,
        }

    @classmethod
    def from_json(cls, payload) -> "ExperimentSpec":
        return cls(
            name=payload["name"],
            words=tuple(payload["words"]),
            sampler=SamplerSpec.from_json(payload["sampler"]),
            classifier=_classifier_from_json(payload["classifier"]),
            runs=payload.get("runs", 1),
            seeds=tuple(payload.get("seeds", [0])),
            eval_split=payload.get("eval_split", "test"),
        )

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))

    def digest(self) -> str:
        canonical = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class RunResult:
    run: int
    seed: int
    skipped: bool
    reason: str | None
    report: evaluate.MetricsReport | None
    cm: evaluate.ConfusionMatrix | None


@dataclass(frozen=True)
class WordResult:
    word: str
    runs: tuple[RunResult, ...]
    mean: evaluate.MetricsReport | None  # None when every run was skipped
    bias: evaluate.BiasReport | None


def _mean_scalar(reports, attr):
    values = [getattr(r, attr) for r in reports]
    if any(v is None for v in values):
        return None
    return float(np.mean(values))


def _mean_reports(reports) -> evaluate.MetricsReport:
    """Mean over runs of ONE word; per-class lists share a class count."""
    per_class = []
    for i in range(len(reports[0].per_class)):
        per_class.append(
            evaluate.ClassMetrics(
                precision=float(np.mean([r.per_class[i].precision for r in reports])),
                recall=float(np.mean([r.per_class[i].recall for r in reports])),
                f1=float(np.mean([r.per_class[i].f1 for r in reports])),
                support=reports[0].per_class[i].support,
            )
        )
    return evaluate.MetricsReport(
        per_class=tuple(per_class),
        micro_f1=_mean_scalar(reports, "micro_f1"),
        macro_f1=_mean_scalar(reports, "macro_f1"),
        accuracy=_mean_scalar(reports, "accuracy"),
        mfs_f1=_mean_scalar(reports, "mfs_f1"),
        lfs_f1=_mean_scalar(reports, "lfs_f1"),
    )


def _mean_across_words(reports) -> evaluate.MetricsReport:
    """Scalar-only mean: words differ in polysemy, so classes don't align."""
    return evaluate.MetricsReport(
        per_class=(),
        micro_f1=_mean_scalar(reports, "micro_f1"),
        macro_f1=_mean_scalar(reports, "macro_f1"),
        accuracy=_mean_scalar(reports, "accuracy"),
        mfs_f1=_mean_scalar(reports, "mfs_f1"),
        lfs_f1=_mean_scalar(reports, "lfs_f1"),
    )


def _run_word(ds, cache, spec: ExperimentSpec) -> WordResult:
    eval_instances = ds.split(spec.eval_split)
    if not eval_instances:
        return WordResult(
            word=ds.word,
            runs=tuple(
                RunResult(i, s, True, f"no {spec.eval_split} instances", None, None)
                for i, s in enumerate(spec.seeds)
            ),
            mean=None,
            bias=None,
        )
    gold = [inst.gold for inst in eval_instances]
    mfs_class, lfs_class = ds.train_mfs(), ds.train_lfs()
    runs = []
    for i, seed in enumerate(spec.seeds):
        subset = sample(ds, spec.sampler, seed)
        if subset is None:
            counts = ds.counts("train")
            short = [c for c in range(ds.polysemy) if counts[c] < spec.sampler.n]
            runs.append(
                RunResult(
                    i,
                    seed,
                    True,
                    f"n_shot({spec.sampler.n}) unavailable: sense(s) {short} "
                    f"have fewer than {spec.sampler.n} train instances",
                    None,
                    None,
                )
            )
            continue
        if isinstance(spec.classifier, KnnConfig):
            table = build_sense_table(ds, cache, spec.classifier.pooling, subset)
            preds = classify.classify_split(
                ds, cache, table, spec.eval_split, spec.classifier.threshold
            )
            predicted = [p.predicted for p in preds]
        else:
            cfg = spec.classifier
            if cfg.vector_source == "external_table":
                source = baseline.ExternalTableSource.load(cfg.table_path)
            else:
                source = baseline.RandomLookupSource.from_train_split(
                    ds, subset=subset, dim=cfg.dim, seed=seed
                )
            hyper = Hyper(
                lr=cfg.hyper.lr,
                epochs=cfg.hyper.epochs,
                l2=cfg.hyper.l2,
                seed=seed,
                batch_size=cfg.hyper.batch_size,
                shuffle=cfg.hyper.shuffle,
            )
            model = baseline.train_linear(ds, source, cfg.feature_mode, hyper, subset)
            predicted = [
                baseline.predict_linear(model, inst, source)[0]
                for inst in eval_instances
            ]
        cm = evaluate.confusion(gold, predicted, ds.polysemy)
        report = evaluate.metrics(cm, mfs_class=mfs_class, lfs_class=lfs_class)
        runs.append(RunResult(i, seed, False, None, report, cm))
    scored = [r for r in runs if not r.skipped]
    return WordResult(
        word=ds.word,
        runs=tuple(runs),
        mean=_mean_reports([r.report for r in scored]) if scored else None,
        bias=evaluate.sense_bias([r.cm for r in scored]) if scored else None,
    )


def run_experiment(
    spec: ExperimentSpec,
    data_root,
    cache_dir=None,
    caches: dict[str, EmbeddingCache] | None = None,
    out_dir=None,
    threads: int = 1,
    timestamp: str | None = None,
):
    """Execute every (word, run) cell and assemble the aggregate report.

    Embeddings come either from preloaded ``caches`` or from
    ``<cache_dir>/<word>.cwse``. Metrics aggregate by mean over runs,
    bias by median. Results are keyed by (word, run) so thread scheduling
    cannot change any output.
    """
    needs_cache = isinstance(spec.classifier, KnnConfig)

    def load_word(word: str):
        ds = load_word_dataset(data_root, word)
        cache = None
        if needs_cache:
            if caches is not None and word in caches:
                cache = caches[word]
            elif cache_dir is not None:
                cache = EmbeddingCache.load(Path(cache_dir) / f"{word}.cwse")
            else:
                raise CwsdError(f"no embedding cache available for {word!r}")
        return _run_word(ds, cache, spec)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool_:
            results = list(pool_.map(load_word, spec.words))
    else:
        results = [load_word(w) for w in spec.words]
    by_word = {r.word: r for r in results}

    scored_means = [r.mean for r in results if r.mean is not None]
    average = _mean_across_words(scored_means) if scored_means else None
    payload = _experiment_json(spec, by_word, average, timestamp)
    if out_dir is not None:
        _write_reports(spec, by_word, average, payload, out_dir)
    return by_word, average, payload


def _experiment_json(spec, by_word, average, timestamp):
    digest = spec.digest()
    words_payload = {}
    for word, result in by_word.items():
        runs_payload = []
        for r in result.runs:
            if r.skipped:
                runs_payload.append(
                    {"run": r.run, "seed": r.seed, "skipped": True, "reason": r.reason}
                )
            else:
                runs_payload.append(
                    {
                        "run": r.run,
                        "seed": r.seed,
                        "skipped": False,
                        **r.report.to_json(),
                    }
                )
        words_payload[word] = {
            "runs": runs_payload,
            "mean": result.mean.to_json() if result.mean else None,
            "bias": result.bias.to_json() if result.bias else None,
        }
    payload = {
        "config": spec.to_json(),
        "config_digest": digest,
        "words": words_payload,
        "average": average.to_json() if average else None,
    }
    if timestamp is not None:
        payload["generated_at"] = timestamp
    return payload


def _write_reports(spec, by_word, average, payload, out_dir):
    out = Path(out_dir) / spec.name
    out.mkdir(parents=True, exist_ok=True)
    write_text_atomic(out / "report.json", json.dumps(payload, indent=2, sort_keys=True) + "\n")
    lines = [evaluate.REPORT_CSV_HEADER]
    for word in spec.words:
        result = by_word[word]
        if result.mean is None:
            lines.append(f"{word},skipped,skipped,skipped,skipped")
        else:
            lines.append(evaluate.report_csv_row(word, result.mean))
    if average is not None:
        lines.append(evaluate.report_csv_row("AVG", average))
    write_text_atomic(out / "summary.csv", "".join(line + "\n" for line in lines))


def fraction_sweep(
    base: ExperimentSpec,
    fractions,
    data_root,
    cache_dir=None,
    caches=None,
    threads: int = 1,
):
    """Run the experiment once per training-size fraction.

    -> ordered {fraction: (by_word, average)} ready for table assembly.
    """
    results = {}
    for p in fractions:
        spec = ExperimentSpec(
            name=f"{base.name}-p{p:g}",
            words=base.words,
            sampler=SamplerSpec("fraction", p=float(p), seed=base.sampler.seed),
            classifier=base.classifier,
            runs=base.runs,
            seeds=base.seeds,
            eval_split=base.eval_split,
        )
        by_word, average, _ = run_experiment(
            spec, data_root, cache_dir=cache_dir, caches=caches, threads=threads
        )
        results[p] = (by_word, average)
    return results


def fraction_sweep_csv(results, metric: str = "micro_f1") -> str:
    """Words-by-sizes table, one column per fraction ("ALL" for p = 1)."""

    def label(p):
        return "ALL" if p == 1 else f"{100 * p:g}%"

    fractions = list(results)
    lines = ["word," + ",".join(label(p) for p in fractions)]
    words = list(next(iter(results.values()))[0])
    for word in words:
        cells = []
        for p in fractions:
            mean = results[p][0][word].mean
            cells.append(
                "skipped" if mean is None else f"{evaluate.percent(getattr(mean, metric)):.1f}"
            )
        lines.append(f"{word}," + ",".join(cells))
    avg_cells = []
    for p in fractions:
        average = results[p][1]
        avg_cells.append(
            "skipped" if average is None else f"{evaluate.percent(getattr(average, metric)):.1f}"
        )
    lines.append("AVG," + ",".join(avg_cells))
    return "".join(line + "\n" for line in lines)


def layer_sweep(datasets, caches, layers, eval_split: str = "test"):
    """Mean micro-F1 over words for single-layer sense tables, per layer.

    -> list of (layer, mean_micro_f1). Every requested layer must exist
    in every word's cache.
    """
    results = []
    for layer in layers:
        scores = []
        for ds in datasets:
            cache = caches[ds.word]
            table = build_sense_table(ds, cache, PoolingSpec.single(layer))
            preds = classify.classify_split(ds, cache, table, eval_split)
            gold = [inst.gold for inst in ds.split(eval_split)]
            cm = evaluate.confusion(gold, [p.predicted for p in preds], ds.polysemy)
            scores.append(evaluate.metrics(cm).micro_f1)
        results.append((layer, float(np.mean(scores))))
    return results


def layer_sweep_csv(rows) -> str:
    lines = ["layer,f1"]
    for layer, f1 in rows:
        lines.append(f"{layer},{f1:.6f}")
    return "".join(line + "\n" for line in lines)
