"""Construct per-word datasets from hyperlink-annotated sentence streams.

Input is a neutral JSONL of pre-extracted sentences; pulling links out of
raw wiki dumps belongs to upstream tooling (wikiextractor and friends).
Each line: {"tokens": [...], "target_index": int, "link_title": str}.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from decimal import ROUND_CEILING, Decimal
from pathlib import Path

import numpy as np

from .baseline import derive_seed
from .corpus import Instance, SenseLabel, WordDataset
from .errors import BuildError

log = logging.getLogger(__name__)

DEFAULT_MIN_OCCURRENCES = 30
DEFAULT_TRAIN_RATIO = 0.6
MIN_SENTENCE_TOKENS = 5


@dataclass(frozen=True)
class AnnotatedSentence:
    """One sentence whose target token links to a specific page."""

    tokens: tuple[str, ...]
    target_index: int
    link_title: str


def read_annotated_jsonl(path):
    """Yield AnnotatedSentence records from a JSONL file."""
    path = Path(path)
    with path.open(encoding="utf-8") as f:
        for i, line in enumerate(f):
            line = line.strip()
            if not line:
                continue
            try:
                payload = json.loads(line)
                sent = AnnotatedSentence(
                    tokens=tuple(payload["tokens"]),
                    target_index=int(payload["target_index"]),
                    link_title=str(payload["link_title"]),
                )
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as e:
                raise BuildError(f"{path}, line {i + 1}: {e}") from None
            if not 0 <= sent.target_index < len(sent.tokens):
                raise BuildError(
                    f"{path}, line {i + 1}: target_index {sent.target_index} "
                    f"out of range"
                )
            yield sent


@dataclass
class CollectReport:
    total_sentences: int = 0
    unmapped_discarded: int = 0
    dropped_senses: dict = field(default_factory=dict)  # sense_id -> count


def collect_candidates(
    stream, word: str, sense_map: dict[str, str], min_occurrences: int = DEFAULT_MIN_OCCURRENCES
):
    """Bucket lowercased sentences per sense; drop under-represented senses.

    ``sense_map`` maps hyperlink page titles to curated sense ids.
    Sentences whose link maps to no sense are discarded and counted.
    Senses collecting fewer than ``min_occurrences`` sentences are dropped
    with a report entry. -> (per-sense lists, CollectReport)
    """
    report = CollectReport()
    buckets: dict[str, list[AnnotatedSentence]] = {}
    for sense_id in dict.fromkeys(sense_map.values()):
        buckets[sense_id] = []
    word = word.lower()
    saw_word = False
    for sent in stream:
        report.total_sentences += 1
        tokens = tuple(t.lower() for t in sent.tokens)
        if word in tokens:
            saw_word = True
        sense_id = sense_map.get(sent.link_title)
        if sense_id is None:
            report.unmapped_discarded += 1
            continue
        buckets[sense_id].append(
            AnnotatedSentence(tokens, sent.target_index, sent.link_title)
        )
    if report.total_sentences > 0 and not saw_word:
        raise BuildError(f"word {word!r} absent from every input sentence")
    kept = {}
    for sense_id, sentences in buckets.items():
        if len(sentences) < min_occurrences:
            report.dropped_senses[sense_id] = len(sentences)
            log.info(
                "%s: dropping sense %r with %d < %d occurrences",
                word, sense_id, len(sentences), min_occurrences,
            )
        else:
            kept[sense_id] = sentences
    return kept, report


@dataclass
class DedupeReport:
    duplicates: int = 0
    too_short: int = 0
    target_mismatch: int = 0
    removed: list = field(default_factory=list)  # (reason, tokens) log


def dedupe(sentences, word: str, min_tokens: int = MIN_SENTENCE_TOKENS):
    """Drop exact duplicates (by token sequence) and mechanically noisy rows.

    Noise means: shorter than ``min_tokens`` tokens, or the target position
    does not hold the ambiguous word. Every removal is logged so a human
    pass can review them. -> (kept sentences, DedupeReport)
    """
    word = word.lower()
    report = DedupeReport()
    seen = set()
    kept = []
    for sent in sentences:
        if len(sent.tokens) < min_tokens:
            report.too_short += 1
            report.removed.append(("too_short", sent.tokens))
            continue
        if sent.tokens[sent.target_index] != word:
            report.target_mismatch += 1
            report.removed.append(("target_mismatch", sent.tokens))
            continue
        if sent.tokens in seen:
            report.duplicates += 1
            report.removed.append(("duplicate", sent.tokens))
            continue
        seen.add(sent.tokens)
        kept.append(sent)
    return kept, report


def split_dataset(
    per_sense: dict[str, list[AnnotatedSentence]],
    word: str,
    ratio: float = DEFAULT_TRAIN_RATIO,
    seed: int = 0,
) -> WordDataset:
    """Seeded per-sense shuffle, then the first ceil(ratio * n) go to train.

    A sense whose ceiling swallows every sentence donates one back to test,
    so each sense with >= 2 sentences appears in both splits. Fewer than 2
    sentences cannot populate both splits and is an error.
    """
    if not 0 < ratio < 1:
        raise BuildError(f"train ratio must be in (0, 1), got {ratio}")
    if not per_sense:
        raise BuildError(f"{word}: no senses survived collection")
    ratio_dec = Decimal(repr(ratio))
    senses = []
    train_rows: list[tuple[AnnotatedSentence, int]] = []
    test_rows: list[tuple[AnnotatedSentence, int]] = []
    for class_index, (sense_id, sentences) in enumerate(per_sense.items()):
        if len(sentences) < 2:
            raise BuildError(
                f"{word}: sense {sense_id!r} has {len(sentences)} sentence(s), "
                f"cannot populate both splits"
            )
        senses.append(SenseLabel(class_index=class_index, sense_id=sense_id))
        rng = np.random.default_rng(derive_seed(seed, word, sense_id))
        order = rng.permutation(len(sentences))
        n_train = int(
            (ratio_dec * len(sentences)).to_integral_value(rounding=ROUND_CEILING)
        )
        if n_train >= len(sentences):
            n_train = len(sentences) - 1
        for pos in order[:n_train]:
            train_rows.append((sentences[pos], class_index))
        for pos in order[n_train:]:
            test_rows.append((sentences[pos], class_index))

    def make_instances(rows, split):
        return tuple(
            Instance(
                instance_id=f"{split}.{i}",
                tokens=sent.tokens,
                target_index=sent.target_index,
                gold=gold,
            )
            for i, (sent, gold) in enumerate(rows)
        )

    return WordDataset(
        word=word,
        senses=tuple(senses),
        train=make_instances(train_rows, "train"),
        test=make_instances(test_rows, "test"),
    )


def build_word_dataset(
    input_jsonl,
    word: str,
    sense_map: dict[str, str],
    ratio: float = DEFAULT_TRAIN_RATIO,
    seed: int = 0,
    min_occurrences: int = DEFAULT_MIN_OCCURRENCES,
):
    """Full pipeline: collect -> dedupe -> split. -> (dataset, build report)."""
    stream = read_annotated_jsonl(input_jsonl)
    buckets, collect_report = collect_candidates(stream, word, sense_map, min_occurrences)
    deduped = {}
    dedupe_totals = {"duplicates": 0, "too_short": 0, "target_mismatch": 0}
    for sense_id, sentences in buckets.items():
        kept, rep = dedupe(sentences, word)
        deduped[sense_id] = kept
        dedupe_totals["duplicates"] += rep.duplicates
        dedupe_totals["too_short"] += rep.too_short
        dedupe_totals["target_mismatch"] += rep.target_mismatch
    ds = split_dataset(deduped, word, ratio=ratio, seed=seed)
    train_counts = ds.counts("train")
    test_counts = ds.counts("test")
    report = {
        "word": word,
        "ratio": ratio,
        "seed": seed,
        "min_occurrences": min_occurrences,
        "input_sentences": collect_report.total_sentences,
        "unmapped_discarded": collect_report.unmapped_discarded,
        "dropped_senses": collect_report.dropped_senses,
        "dedupe": dedupe_totals,
        "split_sizes": {
            s.sense_id: {
                "train": train_counts[s.class_index],
                "test": test_counts[s.class_index],
            }
            for s in ds.senses
        },
    }
    return ds, report
