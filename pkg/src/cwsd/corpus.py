"""Data model and disk I/O for per-word sense-annotated datasets.

On-disk layout (one directory per ambiguous word, UTF-8, LF newlines):

    <word>/<split>.data.txt    TARGET_INDEX<TAB>space-separated tokens
    <word>/<split>.gold.txt    one decimal class index per line, aligned 1:1
    <word>/classes_map.txt     JSON object: class-index string -> sense id
    <word>/definitions.txt     optional: SENSE_ID<TAB>definition per line

Splits are ``train`` and ``test`` (required) plus an optional ``ood_test``.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, replace
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

from .errors import DatasetFormatError

log = logging.getLogger(__name__)

SPLITS = ("train", "test", "ood_test")
REQUIRED_SPLITS = ("train", "test")


@dataclass(frozen=True)
class SenseLabel:
    """One sense of an ambiguous word, identified by its page title."""

    class_index: int
    sense_id: str
    definition: str | None = None


@dataclass(frozen=True)
class Instance:
    """A single sense-annotated sentence.

    ``instance_id`` is synthesized as ``<split>.<line>`` with a 0-based line
    index, so embedding caches stay valid across reloads of the same files.
    ``group`` is a free grouping key (e.g. a domain tag) used by grouped
    metric reports; the disk format does not carry it.
    """

    instance_id: str
    tokens: tuple[str, ...]
    target_index: int
    gold: int
    group: str | None = None

    @property
    def target_token(self) -> str:
        return self.tokens[self.target_index]


@dataclass(frozen=True)
class WordDataset:
    """Sense inventory plus train/test instances for one ambiguous word."""

    word: str
    senses: tuple[SenseLabel, ...]
    train: tuple[Instance, ...]
    test: tuple[Instance, ...]
    ood_test: tuple[Instance, ...] = ()

    @property
    def polysemy(self) -> int:
        return len(self.senses)

    def split(self, name: str) -> tuple[Instance, ...]:
        if name not in SPLITS:
            raise DatasetFormatError(f"unknown split {name!r}")
        return getattr(self, name)

    def counts(self, split: str) -> list[int]:
        """Per-sense instance counts for a split, indexed by class_index."""
        counts = [0] * self.polysemy
        for inst in self.split(split):
            counts[inst.gold] += 1
        return counts

    def train_mfs(self) -> int:
        """Class index with the largest train count; ties break low."""
        counts = self.counts("train")
        return max(range(len(counts)), key=lambda c: (counts[c], -c))

    def train_lfs(self) -> int:
        """Class index with the smallest train count; ties break low."""
        counts = self.counts("train")
        return min(range(len(counts)), key=lambda c: (counts[c], c))


@dataclass(frozen=True)
class WordStats:
    """Summary statistics for one word (dataset-statistics table columns)."""

    word: str
    polysemy: int
    train_counts: tuple[int, ...]
    test_counts: tuple[int, ...]
    f2r: float
    entropy_train: float
    entropy_test: float

    @property
    def train_total(self) -> int:
        return sum(self.train_counts)

    @property
    def test_total(self) -> int:
        return sum(self.test_counts)


def normalized_entropy(counts) -> float:
    """Entropy of a count distribution, normalized to [0, 1] by log(n).

    Computes -sum(f_i * log f_i) / log(n) over entries with f_i > 0, where
    f_i = counts_i / sum(counts) and n = len(counts). Returns 0.0 when n = 1
    or when only one count is nonzero. The log base cancels.
    """
    counts = list(counts)
    if any(c < 0 for c in counts):
        raise ValueError(f"negative count in {counts!r}")
    total = sum(counts)
    if total <= 0:
        raise ValueError("all counts are zero")
    n = len(counts)
    if n == 1:
        return 0.0
    acc = 0.0
    # Summation in sorted order makes the result exactly permutation
    # invariant, not merely up to float reassociation.
    for c in sorted(counts):
        if c > 0:
            f = c / total
            acc -= f * math.log(f)
    return min(1.0, acc / math.log(n))


def word_stats(ds: WordDataset) -> WordStats:
    """Statistics row for one word.

    F2R is the first sense's train count over the sum of the remaining
    senses' train counts (infinite when the rest have no train instances).
    Both entropies are carried because the train and test distributions
    generally differ.
    """
    train_counts = ds.counts("train")
    test_counts = ds.counts("test")
    rest = sum(train_counts[1:])
    f2r = train_counts[0] / rest if rest > 0 else math.inf
    return WordStats(
        word=ds.word,
        polysemy=ds.polysemy,
        train_counts=tuple(train_counts),
        test_counts=tuple(test_counts),
        f2r=f2r,
        entropy_train=normalized_entropy(train_counts),
        entropy_test=normalized_entropy(test_counts),
    )


def round_half_up(x: float, decimals: int = 1) -> float:
    """Decimal round-half-up, used for all table-style reporting."""
    q = Decimal(1).scaleb(-decimals)
    return float(Decimal(repr(float(x))).quantize(q, rounding=ROUND_HALF_UP))


def stats_csv_rows(stats) -> list[str]:
    """CSV lines (with header) for a sequence of WordStats."""
    rows = ["word,polysemy,f2r,entropy_train,entropy_test,train_total,test_total"]
    for s in stats:
        f2r = "inf" if math.isinf(s.f2r) else f"{round_half_up(s.f2r, 1):.1f}"
        rows.append(
            f"{s.word},{s.polysemy},{f2r},"
            f"{round_half_up(s.entropy_train, 2):.2f},"
            f"{round_half_up(s.entropy_test, 2):.2f},"
            f"{s.train_total},{s.test_total}"
        )
    return rows


def _read_lines(path: Path) -> list[str]:
    if not path.is_file():
        raise DatasetFormatError(f"missing file: {path}")
    text = path.read_text(encoding="utf-8")
    if text == "":
        return []
    return text.rstrip("\n").split("\n")


def _parse_split(word_dir: Path, split: str, n_senses: int) -> tuple[Instance, ...]:
    data_path = word_dir / f"{split}.data.txt"
    gold_path = word_dir / f"{split}.gold.txt"
    data_lines = _read_lines(data_path)
    gold_lines = _read_lines(gold_path)
    if len(gold_lines) != len(data_lines):
        longer, n_short = (
            (gold_path, len(data_lines))
            if len(gold_lines) > len(data_lines)
            else (data_path, len(gold_lines))
        )
        raise DatasetFormatError(
            f"{longer}: line {n_short + 1} has no counterpart "
            f"({len(data_lines)} data lines vs {len(gold_lines)} gold lines)"
        )

    instances = []
    for i, (data_line, gold_line) in enumerate(zip(data_lines, gold_lines)):
        where = f"{data_path}, line {i + 1}"
        idx_str, sep, sentence = data_line.partition("\t")
        if not sep:
            raise DatasetFormatError(f"{where}: expected TARGET_INDEX<TAB>tokens")
        try:
            target_index = int(idx_str)
        except ValueError:
            raise DatasetFormatError(f"{where}: bad target index {idx_str!r}") from None
        tokens = tuple(sentence.split(" ")) if sentence else ()
        if not tokens:
            raise DatasetFormatError(f"{where}: empty token list")
        if not 0 <= target_index < len(tokens):
            raise DatasetFormatError(
                f"{where}: target index {target_index} out of range "
                f"for {len(tokens)} tokens"
            )
        try:
            gold = int(gold_line)
        except ValueError:
            raise DatasetFormatError(
                f"{gold_path}, line {i + 1}: bad class index {gold_line!r}"
            ) from None
        if not 0 <= gold < n_senses:
            raise DatasetFormatError(
                f"{gold_path}, line {i + 1}: class {gold} not in classes map"
            )
        instances.append(
            Instance(
                instance_id=f"{split}.{i}",
                tokens=tokens,
                target_index=target_index,
                gold=gold,
            )
        )
    return tuple(instances)


def _parse_classes_map(word_dir: Path) -> list[str]:
    path = word_dir / "classes_map.txt"
    if not path.is_file():
        raise DatasetFormatError(f"missing file: {path}")
    try:
        mapping = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"{path}: invalid JSON ({e})") from None
    if not isinstance(mapping, dict) or not mapping:
        raise DatasetFormatError(f"{path}: expected a non-empty JSON object")
    senses = [None] * len(mapping)
    for key, sense_id in mapping.items():
        try:
            idx = int(key)
        except ValueError:
            raise DatasetFormatError(f"{path}: non-integer class index {key!r}") from None
        if not 0 <= idx < len(mapping) or senses[idx] is not None:
            raise DatasetFormatError(
                f"{path}: class indices must be contiguous from 0 (got {key!r})"
            )
        if not isinstance(sense_id, str) or not sense_id:
            raise DatasetFormatError(f"{path}: empty sense id for class {key}")
        senses[idx] = sense_id
    if len(set(senses)) != len(senses):
        raise DatasetFormatError(f"{path}: duplicate sense ids")
    return senses


def _parse_definitions(word_dir: Path) -> dict[str, str]:
    path = word_dir / "definitions.txt"
    if not path.is_file():
        return {}
    defs = {}
    for i, line in enumerate(_read_lines(path)):
        sense_id, sep, definition = line.partition("\t")
        if not sep:
            raise DatasetFormatError(
                f"{path}, line {i + 1}: expected SENSE_ID<TAB>definition"
            )
        defs[sense_id] = definition
    return defs


def load_word_dataset(root_path, word: str) -> WordDataset:
    """Load one word's dataset from ``<root_path>/<word>/``.

    Instance order is preserved from file order. A sense with no train
    instances is reported as a warning, not an error: heavily skewed
    splits (notably out-of-domain test sets) are legitimate data.
    """
    word_dir = Path(root_path) / word
    if not word_dir.is_dir():
        raise DatasetFormatError(f"no dataset directory for {word!r} at {word_dir}")
    sense_ids = _parse_classes_map(word_dir)
    definitions = _parse_definitions(word_dir)
    senses = tuple(
        SenseLabel(class_index=i, sense_id=s, definition=definitions.get(s))
        for i, s in enumerate(sense_ids)
    )
    splits = {}
    for split in SPLITS:
        if split in REQUIRED_SPLITS or (word_dir / f"{split}.data.txt").is_file():
            splits[split] = _parse_split(word_dir, split, len(senses))
        else:
            splits[split] = ()
    ds = WordDataset(word=word, senses=senses, **splits)
    train_counts = ds.counts("train")
    for sense in senses:
        if train_counts[sense.class_index] == 0:
            log.warning(
                "%s: sense %r has no train instances", word, sense.sense_id
            )
    return ds


def write_word_dataset(ds: WordDataset, root_path) -> Path:
    """Write a dataset in canonical form; returns the word directory.

    Canonical form means LF newlines, a trailing newline on every file,
    and the classes map serialized with indices in ascending order, so a
    load/write cycle of our own output is byte-identical.
    """
    word_dir = Path(root_path) / ds.word
    word_dir.mkdir(parents=True, exist_ok=True)
    for split in SPLITS:
        instances = ds.split(split)
        if split not in REQUIRED_SPLITS and not instances:
            continue
        data_lines = [
            f"{inst.target_index}\t{' '.join(inst.tokens)}" for inst in instances
        ]
        gold_lines = [str(inst.gold) for inst in instances]
        write_text_atomic(word_dir / f"{split}.data.txt", _join(data_lines))
        write_text_atomic(word_dir / f"{split}.gold.txt", _join(gold_lines))
    mapping = {str(s.class_index): s.sense_id for s in ds.senses}
    write_text_atomic(
        word_dir / "classes_map.txt", json.dumps(mapping, indent=2) + "\n"
    )
    def_lines = [
        f"{s.sense_id}\t{s.definition}" for s in ds.senses if s.definition is not None
    ]
    if def_lines:
        write_text_atomic(word_dir / "definitions.txt", _join(def_lines))
    return word_dir


def _join(lines: list[str]) -> str:
    return "".join(line + "\n" for line in lines)


def write_text_atomic(path, text: str) -> None:
    """Write UTF-8 text via a temp file + rename in the same directory."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8", newline="\n")
    os.replace(tmp, path)


def write_bytes_atomic(path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def list_words(root_path) -> list[str]:
    """Word directories under a data root, sorted by name."""
    root = Path(root_path)
    if not root.is_dir():
        raise DatasetFormatError(f"data root {root} is not a directory")
    return sorted(
        p.name for p in root.iterdir() if (p / "classes_map.txt").is_file()
    )


def with_group(ds: WordDataset, split: str, group: str) -> WordDataset:
    """Copy of the dataset with every instance of a split tagged."""
    tagged = tuple(replace(inst, group=group) for inst in ds.split(split))
    return replace(ds, **{split: tagged})
