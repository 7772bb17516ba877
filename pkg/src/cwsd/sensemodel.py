"""Per-sense centroid tables built from training-instance embeddings.

A sense table is the whole "model" of the nearest-neighbor classifier:
one centroid per sense seen in (the selected subset of) training data,
plus the most-frequent-sense label used as fallback.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import WordDataset, write_text_atomic
from .embedding import (
    EmbeddingCache,
    InstanceEmbedding,
    PoolingSpec,
    pool,
    read_cache,
    write_cache,
)
from .errors import CacheFormatError, MissingEmbeddingError


@dataclass(frozen=True)
class SenseTable:
    """Sense centroids for one word under one pooling configuration.

    ``centroids`` holds only senses with at least one contributing train
    instance; ``mfs`` is computed from the same selection, ties broken
    toward the lowest class index.
    """

    word: str
    pooling: PoolingSpec
    centroids: dict[int, np.ndarray]
    support: dict[int, int]
    mfs: int

    @property
    def dim(self) -> int:
        return len(next(iter(self.centroids.values())))


def build_sense_table(
    ds: WordDataset,
    embeddings: EmbeddingCache,
    pooling: PoolingSpec,
    subset=None,
) -> SenseTable:
    """Average pooled train embeddings per sense.

    ``subset`` restricts to a set of instance ids (sampler output). Means
    accumulate in float64 and are stored as float32. Senses absent from
    the selection simply have no centroid; classification falls back over
    the available ones.
    """
    selected = [
        inst
        for inst in ds.train
        if subset is None or inst.instance_id in subset
    ]
    if not selected:
        raise MissingEmbeddingError(
            f"{ds.word}: empty training selection, cannot build a sense table"
        )
    sums: dict[int, np.ndarray] = {}
    support: dict[int, int] = {}
    for inst in selected:
        if inst.instance_id not in embeddings:
            raise MissingEmbeddingError(
                f"{ds.word}: no cached embedding for train instance "
                f"{inst.instance_id!r}"
            )
        vec = pool(embeddings[inst.instance_id], pooling).astype(np.float64)
        if inst.gold in sums:
            sums[inst.gold] += vec
            support[inst.gold] += 1
        else:
            sums[inst.gold] = vec.copy()
            support[inst.gold] = 1
    centroids = {
        c: (sums[c] / support[c]).astype(np.float32) for c in sorted(sums)
    }
    mfs = max(support, key=lambda c: (support[c], -c))
    return SenseTable(
        word=ds.word,
        pooling=pooling,
        centroids=centroids,
        support={c: support[c] for c in sorted(support)},
        mfs=mfs,
    )


def save_sense_table(table: SenseTable, path) -> None:
    """Write centroids in the embedding-cache container plus a JSON sidecar.

    Records are keyed "sense:<class_index>" with the pooled centroid stored
    as layer 0; pooling, support, and mfs live in ``<path>.json``.
    """
    records = [
        InstanceEmbedding(instance_id=f"sense:{c}", layers={0: vec})
        for c, vec in sorted(table.centroids.items())
    ]
    write_cache(path, records)
    sidecar = {
        "word": table.word,
        "pooling": table.pooling.to_json(),
        "support": {str(c): n for c, n in sorted(table.support.items())},
        "mfs": table.mfs,
    }
    write_text_atomic(
        Path(str(path) + ".json"), json.dumps(sidecar, indent=2, sort_keys=True) + "\n"
    )


def load_sense_table(path) -> SenseTable:
    sidecar_path = Path(str(path) + ".json")
    if not sidecar_path.is_file():
        raise CacheFormatError(f"missing sense-table sidecar {sidecar_path}")
    sidecar = json.loads(sidecar_path.read_text(encoding="utf-8"))
    centroids = {}
    for record in read_cache(path):
        prefix, sep, idx = record.instance_id.partition(":")
        if prefix != "sense" or not sep:
            raise CacheFormatError(
                f"{path}: unexpected record id {record.instance_id!r}"
            )
        centroids[int(idx)] = record.layers[0]
    return SenseTable(
        word=sidecar["word"],
        pooling=PoolingSpec.from_json(sidecar["pooling"]),
        centroids=centroids,
        support={int(c): n for c, n in sidecar["support"].items()},
        mfs=int(sidecar["mfs"]),
    )
