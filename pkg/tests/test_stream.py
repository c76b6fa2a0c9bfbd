import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gemstream.errors import InvalidSpec, TooFewSamples
from gemstream.model import Batch
from gemstream.stream import (
    StreamSpec,
    class_angle,
    class_mean,
    even_sizes,
    export_stream,
    generate_stream,
    import_stream,
    portion_windows,
    split_even,
)

SMALL = StreamSpec(d0_size=400, increment_size=300, n_splits=3, val_size=200)


def class_means(batch, classes):
    return np.stack([batch.features[batch.labels == c].mean(axis=0) for c in range(classes)])


class TestGenerate:
    def test_default_sizes(self):
        s = generate_stream(StreamSpec())
        assert len(s.d0) == 4000
        assert [len(b) for b in s.splits] == [200] * 10
        assert len(s.validation) == 2000
        assert s.d0.features.shape[1] == 2

    def test_no_splits(self):
        s = generate_stream(StreamSpec(n_splits=0, d0_size=50, val_size=20))
        assert s.splits == []

    def test_deterministic(self):
        a, b = generate_stream(SMALL), generate_stream(SMALL)
        for x, y in zip([a.d0, *a.splits, a.validation], [b.d0, *b.splits, b.validation]):
            assert x.features.tobytes() == y.features.tobytes()
            assert x.labels.tobytes() == y.labels.tobytes()
        c = generate_stream(StreamSpec(**{**SMALL.to_dict(), "seed": 1}))
        assert not np.array_equal(a.d0.features, c.d0.features)

    def test_balanced_labels(self):
        s = generate_stream(SMALL)
        assert Counter(s.d0.labels.tolist()) == {c: 100 for c in range(4)}

    def test_time_windows(self):
        s = generate_stream(SMALL)
        wins = portion_windows(SMALL)
        for batch, (lo, hi) in zip([s.d0, *s.splits], wins):
            assert batch.t.min() >= lo and batch.t.max() <= hi
        assert wins[0][0] == 0.0 and wins[-1][1] == 1.0
        assert all(a[1] == b[0] for a, b in zip(wins[:-1], wins[1:]))
        assert 0.0 <= s.validation.t.min() and s.validation.t.max() <= 1.0

    def test_no_drift_means_match(self):
        spec = StreamSpec(drift_rate=0.0, d0_size=4000, increment_size=4000, n_splits=2)
        for c in range(spec.class_count):
            np.testing.assert_array_equal(class_mean(spec, c, 0.0), class_mean(spec, c, 1.0))
        s = generate_stream(spec)
        se = spec.cluster_spread / math.sqrt(spec.increment_size / 2 / spec.class_count)
        for split in s.splits:
            diff = class_means(split, 4) - class_means(s.d0, 4)
            assert np.abs(diff).max() < 5 * se * math.sqrt(2)

    def test_class_angle(self):
        spec = StreamSpec(class_count=4, drift_rate=0.5)
        assert class_angle(spec, 1, 0.0) == pytest.approx(math.pi / 2)
        assert class_angle(spec, 0, 1.0) == pytest.approx(0.5)
        np.testing.assert_allclose(class_mean(spec, 2, 0.0), [-2.0, 0.0], atol=1e-12)

    def test_drift_rotates_later_splits(self):
        spec = StreamSpec(drift_rate=1.0, d0_size=2000, increment_size=8000, n_splits=4)
        s = generate_stream(spec)
        angles = []
        for batch in [s.d0, *s.splits]:
            m = batch.features[batch.labels == 0].mean(axis=0)
            angles.append(math.atan2(m[1], m[0]))
        assert all(a < b for a, b in zip(angles[:-1], angles[1:]))

    def test_empirical_means_follow_window_centre(self):
        spec = StreamSpec(drift_rate=0.8, d0_size=8000, n_splits=0, cluster_spread=0.3)
        s = generate_stream(spec)
        (lo, hi), = portion_windows(spec)
        for c in range(spec.class_count):
            # mean of a point on an arc, averaged over uniform t
            a0, a1 = class_angle(spec, c, lo), class_angle(spec, c, hi)
            arc = 2.0 / (a1 - a0) * np.array([math.sin(a1) - math.sin(a0), math.cos(a0) - math.cos(a1)])
            got = s.d0.features[s.d0.labels == c].mean(axis=0)
            np.testing.assert_allclose(got, arc, atol=0.05)

    @pytest.mark.parametrize(
        "bad",
        [
            {"input_dim": 1},
            {"class_count": 1},
            {"d0_size": 0},
            {"val_size": 0},
            {"n_splits": -1},
            {"n_splits": 5, "increment_size": 3},
            {"drift_rate": -0.1},
            {"cluster_spread": 0.0},
        ],
    )
    def test_invalid(self, bad):
        with pytest.raises(InvalidSpec):
            generate_stream(StreamSpec(**bad))


class TestEvenSplit:
    def test_sizes(self):
        assert even_sizes(10, 2) == [5, 5]
        assert even_sizes(10, 3) == [4, 3, 3]
        data = Batch(np.arange(10.0)[:, None], np.zeros(10, dtype=int))
        assert [len(b) for b in split_even(data, 3, 0)] == [4, 3, 3]

    def test_too_few(self):
        data = Batch(np.zeros((2, 1)), [0, 0])
        with pytest.raises(TooFewSamples):
            split_even(data, 3, 0)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 60), st.integers(1, 8), st.integers(0, 1000))
    def test_multiset_preserved(self, rows, n, seed):
        if rows < n:
            return
        data = Batch(np.arange(rows, dtype=float)[:, None], np.arange(rows) % 3)
        parts = split_even(data, n, seed)
        sizes = [len(p) for p in parts]
        assert max(sizes) - min(sizes) <= 1
        merged = np.concatenate([p.features[:, 0] for p in parts])
        assert sorted(merged.tolist()) == list(range(rows))
        labels = np.concatenate([p.labels for p in parts])
        np.testing.assert_array_equal(labels, merged.astype(int) % 3)

    def test_seeded(self):
        data = Batch(np.arange(20.0)[:, None], np.zeros(20, dtype=int))
        a = split_even(data, 4, 7)
        b = split_even(data, 4, 7)
        assert all(np.array_equal(x.features, y.features) for x, y in zip(a, b))


def test_export_roundtrip(tmp_path):
    s = generate_stream(SMALL)
    path = tmp_path / "s.csv"
    export_stream(s, path, SMALL.class_count)
    header = path.read_text().splitlines()[0]
    assert header.endswith("columns=part,t,label,x0..x1")
    back, classes = import_stream(path)
    assert classes == 4
    for x, y in zip([s.d0, *s.splits, s.validation], [back.d0, *back.splits, back.validation]):
        assert x.features.tobytes() == y.features.tobytes()
        assert x.labels.tolist() == y.labels.tolist()
        assert x.t.tobytes() == y.t.tobytes()


def test_import_rejects_foreign_file(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("a,b,c\n")
    with pytest.raises(InvalidSpec):
        import_stream(path)
