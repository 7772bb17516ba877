import math

import numpy as np
import pytest

from cwsd.classify import (
    BELOW_THRESHOLD,
    MFS_FALLBACK,
    NEAREST_NEIGHBOR,
    Prediction,
    classify_instance,
    classify_split,
    cosine,
    parse_predictions_csv,
    predictions_csv,
    similarities_csv,
    similarity_report,
    sweep_csv,
)
from cwsd.corpus import Instance, SenseLabel, WordDataset
from cwsd.embedding import EmbeddingCache, InstanceEmbedding, PoolingSpec
from cwsd.errors import CwsdError
from cwsd.sensemodel import SenseTable

POOL1 = PoolingSpec.single(0)


def cosine_oracle(u, v):
    """Plain-python reference implementation."""
    dot = sum(a * b for a, b in zip(u, v))
    nu = math.sqrt(sum(a * a for a in u))
    nv = math.sqrt(sum(b * b for b in v))
    return dot / (nu * nv)


def table_from(centroids, mfs=0):
    return SenseTable(
        word="toy",
        pooling=POOL1,
        centroids={c: np.asarray(v, dtype=np.float32) for c, v in centroids.items()},
        support={c: 1 for c in centroids},
        mfs=mfs,
    )


class TestCosine:
    def test_self_similarity(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            v = rng.standard_normal(6)
            assert cosine(v, v) == pytest.approx(1.0)

    def test_orthogonal(self):
        assert cosine((1.0, 0.0), (0.0, 1.0)) == 0.0

    def test_antipodal(self):
        assert cosine((1.0, 0.0), (-1.0, 0.0)) == -1.0

    def test_matches_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            u = rng.standard_normal(5)
            v = rng.standard_normal(5)
            assert cosine(u, v) == pytest.approx(cosine_oracle(u, v), abs=1e-12)

    def test_zero_vector_rejected(self):
        with pytest.raises(CwsdError, match="zero vector"):
            cosine((0.0, 0.0), (1.0, 0.0))

    def test_dimension_mismatch(self):
        with pytest.raises(CwsdError, match="dimension"):
            cosine((1.0,), (1.0, 0.0))


class TestClassifyInstance:
    def test_exact_centroid_match(self):
        table = table_from({0: (1.0, 0.0), 1: (0.0, 1.0)})
        p = classify_instance(np.array([0.0, 1.0]), table)
        assert p.predicted == 1
        assert p.similarity == pytest.approx(1.0)
        assert p.decided_by == NEAREST_NEIGHBOR

    def test_hand_computed_similarity(self):
        table = table_from({0: (1.0, 0.0), 1: (0.0, 1.0)})
        p = classify_instance(np.array([0.9, 0.1]), table)
        assert p.predicted == 0
        assert p.similarity == pytest.approx(0.9 / math.hypot(0.9, 0.1), abs=1e-6)
        assert p.similarity == pytest.approx(0.9939, abs=1e-4)

    def test_threshold_abstains_to_mfs(self):
        table = table_from({0: (1.0, 0.0), 1: (0.0, 1.0)}, mfs=1)
        query = np.array([1.0, 1.0])  # max cosine ~= 0.707
        p = classify_instance(query, table, threshold=0.75)
        assert p.decided_by == BELOW_THRESHOLD
        assert p.predicted == 1
        assert p.similarity == pytest.approx(math.cos(math.pi / 4), abs=1e-6)

    def test_threshold_boundary_does_not_abstain(self):
        table = table_from({0: (1.0, 0.0)})
        p = classify_instance(np.array([1.0, 0.0]), table, threshold=1.0)
        assert p.decided_by == NEAREST_NEIGHBOR

    def test_no_threshold_never_abstains(self):
        rng = np.random.default_rng(2)
        table = table_from({0: (1.0, 0.0), 1: (0.0, 1.0)})
        for _ in range(50):
            q = rng.standard_normal(2)
            if not q.any():
                continue
            p = classify_instance(q, table)
            assert p.decided_by == NEAREST_NEIGHBOR

    def test_mfs_fallback_fires_exactly_when_no_centroids(self):
        empty = table_from({}, mfs=2)
        p = classify_instance(np.array([1.0, 0.0]), empty)
        assert p.decided_by == MFS_FALLBACK
        assert p.predicted == 2
        nonempty = table_from({0: (1.0, 0.0)})
        q = classify_instance(np.array([1.0, 0.0]), nonempty)
        assert q.decided_by == NEAREST_NEIGHBOR

    def test_cosine_tie_breaks_low(self):
        table = table_from({0: (1.0, 0.0), 1: (1.0, 0.0)})
        p = classify_instance(np.array([2.0, 0.0]), table)
        assert p.predicted == 0

    def test_argmax_over_available_centroids_only(self):
        table = table_from({1: (0.0, 1.0), 2: (1.0, 0.0)})
        p = classify_instance(np.array([0.9, 0.1]), table)
        assert p.predicted == 2

    def test_positive_rescaling_invariance(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            k = int(rng.integers(2, 5))
            centroids = {c: rng.standard_normal(4) for c in range(k)}
            table = table_from(centroids)
            query = rng.standard_normal(4)
            base = classify_instance(query, table).predicted
            scale = float(rng.uniform(0.01, 100.0))
            scaled_table = table_from(
                {c: np.asarray(v) * scale for c, v in centroids.items()}
            )
            assert classify_instance(query * scale, scaled_table).predicted == base
            assert classify_instance(query, scaled_table).predicted == base


def planted_word(rng, word="toy", k=3, d=8, n_test=20):
    """Dataset + cache with planted centroids and noisy test queries."""
    centroids = rng.standard_normal((k, d))
    train = []
    cache_records = []
    for c in range(k):
        iid = f"train.{c}"
        train.append(Instance(iid, ("a", word), 1, c))
        cache_records.append(
            InstanceEmbedding(iid, {0: centroids[c].astype(np.float32)})
        )
    test = []
    for i in range(n_test):
        gold = int(rng.integers(0, k))
        vec = centroids[gold] + rng.normal(scale=0.3, size=d)
        iid = f"test.{i}"
        test.append(Instance(iid, ("a", word), 1, gold))
        cache_records.append(InstanceEmbedding(iid, {0: vec.astype(np.float32)}))
    ds = WordDataset(
        word=word,
        senses=tuple(SenseLabel(c, f"{word}_{c}") for c in range(k)),
        train=tuple(train),
        test=tuple(test),
    )
    return ds, EmbeddingCache(cache_records), centroids


class TestClassifySplit:
    def test_planted_solution_is_perfect(self):
        rng = np.random.default_rng(4)
        ds, cache, centroids = planted_word(rng, n_test=10)
        # Queries exactly equal to gold centroids.
        records = [
            InstanceEmbedding(
                inst.instance_id, {0: centroids[inst.gold].astype(np.float32)}
            )
            for inst in ds.test
        ] + [cache[inst.instance_id] for inst in ds.train]
        exact_cache = EmbeddingCache(records)
        from cwsd.sensemodel import build_sense_table

        table = build_sense_table(ds, exact_cache, POOL1)
        preds = classify_split(ds, exact_cache, table)
        assert all(p.predicted == inst.gold for p, inst in zip(preds, ds.test))

    def test_empty_split(self):
        rng = np.random.default_rng(5)
        ds, cache, _ = planted_word(rng, n_test=0)
        from cwsd.sensemodel import build_sense_table

        table = build_sense_table(ds, cache, POOL1)
        assert classify_split(ds, cache, table, "test") == []

    def test_matches_brute_force_argmax(self):
        # Independent oracle: explicit cosine table over all pairs.
        rng = np.random.default_rng(6)
        from cwsd.sensemodel import build_sense_table

        ds, cache, _ = planted_word(rng, k=3, n_test=40)
        table = build_sense_table(ds, cache, POOL1)
        preds = classify_split(ds, cache, table)
        for p, inst in zip(preds, ds.test):
            q = cache[inst.instance_id].layers[0]
            sims = [
                cosine_oracle(q.tolist(), table.centroids[c].tolist())
                for c in sorted(table.centroids)
            ]
            best = max(range(len(sims)), key=lambda i: (sims[i], -i))
            assert p.predicted == sorted(table.centroids)[best]
            assert p.similarity == pytest.approx(max(sims), abs=1e-9)


class TestSimilarityReport:
    def _preds(self, rows):
        return [
            Prediction(f"t.{i}", pred, sim, decided)
            for i, (pred, sim, decided) in enumerate(rows)
        ]

    def test_all_correct_precision_one_everywhere(self):
        preds = self._preds(
            [(0, 0.9, NEAREST_NEIGHBOR), (1, 0.8, NEAREST_NEIGHBOR)]
        )
        report = similarity_report(preds, [0, 1])
        for row in report.sweep:
            if row.coverage > 0:
                assert row.precision == 1.0

    def test_vacuous_threshold_has_no_precision(self):
        preds = self._preds([(0, 0.5, NEAREST_NEIGHBOR)])
        report = similarity_report(preds, [0])
        top = [r for r in report.sweep if r.threshold > 0.5]
        assert all(r.coverage == 0.0 and r.precision is None for r in top)

    def test_mixed_set_matches_hand_counts(self):
        # 4 NN rows at sims .9/.8/.6/.4 (correct: y/n/y/n) + 1 abstention.
        preds = self._preds(
            [
                (0, 0.9, NEAREST_NEIGHBOR),
                (0, 0.8, NEAREST_NEIGHBOR),
                (1, 0.6, NEAREST_NEIGHBOR),
                (1, 0.4, NEAREST_NEIGHBOR),
                (0, 0.3, BELOW_THRESHOLD),
            ]
        )
        gold = [0, 1, 1, 0, 0]
        report = similarity_report(preds, gold)
        by_t = {round(r.threshold, 2): r for r in report.sweep}
        assert by_t[0.0].coverage == pytest.approx(4 / 5)
        assert by_t[0.0].precision == pytest.approx(2 / 4)
        assert by_t[0.5].coverage == pytest.approx(3 / 5)
        assert by_t[0.5].precision == pytest.approx(2 / 3)
        assert by_t[0.85].coverage == pytest.approx(1 / 5)
        assert by_t[0.85].precision == pytest.approx(1.0)

    def test_length_mismatch(self):
        with pytest.raises(CwsdError):
            similarity_report(self._preds([(0, 0.5, NEAREST_NEIGHBOR)]), [0, 1])

    def test_sweep_csv_empty_cell(self):
        preds = self._preds([(0, 0.5, NEAREST_NEIGHBOR)])
        text = sweep_csv(similarity_report(preds, [0]))
        lines = text.strip().split("\n")
        assert lines[0] == "threshold,coverage,precision"
        assert lines[-1].endswith(",")  # precision cell empty at t=1.0

    def test_sweep_uses_005_grid(self):
        preds = self._preds([(0, 0.5, NEAREST_NEIGHBOR)])
        report = similarity_report(preds, [0])
        assert len(report.sweep) == 21
        assert report.sweep[1].threshold == pytest.approx(0.05)

    def test_raw_similarity_rows_export(self):
        preds = self._preds(
            [(0, 0.9, NEAREST_NEIGHBOR), (1, 0.2, BELOW_THRESHOLD)]
        )
        text = similarities_csv(similarity_report(preds, [0, 0]))
        lines = text.strip().split("\n")
        assert lines[0] == "instance_id,similarity,correct,decided_by"
        assert lines[1] == "t.0,0.900000,1,nearest_neighbor"
        assert lines[2] == "t.1,0.200000,0,below_threshold_abstain"


class TestPredictionsCsv:
    def test_round_trip(self):
        preds = [
            Prediction("test.0", 1, 0.875, NEAREST_NEIGHBOR),
            Prediction("test.1", 0, 0.25, BELOW_THRESHOLD),
        ]
        text = predictions_csv(preds, [1, 1])
        back, gold = parse_predictions_csv(text)
        assert gold == [1, 1]
        assert [p.predicted for p in back] == [1, 0]
        assert back[0].similarity == pytest.approx(0.875)
        assert back[1].decided_by == BELOW_THRESHOLD
