import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.svm import LinearSVC

from eegssl.data import (
    TEST_SESSIONS, TRAIN_SESSIONS, Dataset, SplitPlan, SynthSpec, batch_count, load_features, make_batches,
    make_split, save_features, session_split, synth_features, synth_generate, synth_raw,
)
from eegssl.errors import SchemaError, SplitError


def balanced(n=1000, width=4, steps=8, seed=0):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 3
    return Dataset(rng.normal(size=(n, steps, width)), y, [f"id{i:05d}" for i in range(n)], np.ones(n))


class TestDataset:
    def test_duplicate_ids_rejected(self):
        with pytest.raises(SchemaError):
            Dataset(np.zeros((2, 8, 3)), [0, 1], ["a", "a"], [1, 1])

    def test_label_domain(self):
        with pytest.raises(SchemaError):
            Dataset(np.zeros((1, 8, 3)), [3], ["a"], [1])

    def test_length_mismatch(self):
        with pytest.raises(SchemaError):
            Dataset(np.zeros((2, 8, 3)), [0], ["a", "b"], [1, 1])

    def test_by_ids_order(self):
        ds = balanced(9)
        sub = ds.by_ids(["id00004", "id00001"])
        np.testing.assert_array_equal(sub.x, ds.x[[4, 1]])
        assert sub.ids.tolist() == ["id00004", "id00001"]

    def test_session_split(self):
        sessions = np.repeat(np.arange(1, 16), 2)
        ds = Dataset(np.zeros((30, 8, 2)), np.zeros(30), [str(i) for i in range(30)], sessions)
        train, test = session_split(ds)
        assert set(train.sessions.tolist()) == set(TRAIN_SESSIONS) == set(range(1, 10))
        assert set(test.sessions.tolist()) == set(TEST_SESSIONS) == set(range(10, 16))

    def test_standardizer_uses_given_stats(self):
        ds = balanced(30)
        mean, std = ds.standardizer()
        flat = ds.standardized(mean, std).x.reshape(-1, ds.n_features)
        np.testing.assert_allclose(flat.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(flat.std(axis=0), 1.0, atol=1e-12)


class TestFeatureCsv:
    def test_round_trip(self, tmp_path):
        ds = balanced(6, width=310)
        ds = Dataset(ds.x, [0, 1, 2, -1, 1, 0], ds.ids, [1, 1, 2, 2, 3, 3])
        save_features(tmp_path / "f.csv", ds)
        assert load_features(tmp_path / "f.csv") == ds

    def test_missing_step_names_segment(self, tmp_path):
        save_features(tmp_path / "f.csv", balanced(2, width=3))
        lines = (tmp_path / "f.csv").read_text().splitlines()
        del lines[3]  # one row of the first segment
        (tmp_path / "f.csv").write_text("\n".join(lines) + "\n")
        with pytest.raises(SchemaError, match="id00000.*7 of 8"):
            load_features(tmp_path / "f.csv")

    def test_bad_label_line_number(self, tmp_path):
        save_features(tmp_path / "f.csv", balanced(2, width=3))
        lines = (tmp_path / "f.csv").read_text().splitlines()
        cells = lines[4].split(",")
        cells[-2] = "5"
        lines[4] = ",".join(cells)
        (tmp_path / "f.csv").write_text("\n".join(lines) + "\n")
        with pytest.raises(SchemaError, match=":5:"):
            load_features(tmp_path / "f.csv")

    def test_repeated_step(self, tmp_path):
        save_features(tmp_path / "f.csv", balanced(1, width=3))
        lines = (tmp_path / "f.csv").read_text().splitlines()
        lines[2] = lines[1]
        (tmp_path / "f.csv").write_text("\n".join(lines) + "\n")
        with pytest.raises(SchemaError, match="repeats step 0"):
            load_features(tmp_path / "f.csv")

    def test_bad_header(self, tmp_path):
        (tmp_path / "f.csv").write_text("id,step,f0,label\n")
        with pytest.raises(SchemaError, match=":1:"):
            load_features(tmp_path / "f.csv")


class TestSplit:
    def test_stratified_counts_at_three_percent(self):
        ds = balanced(1000)
        for seed in range(5):
            plan = make_split(ds, 0.03, seed)
            assert len(plan.labeled_ids) == 30
            assert np.bincount(ds.by_ids(plan.labeled_ids).y).tolist() == [10, 10, 10]

    def test_partition(self):
        ds = balanced(300)
        plan = make_split(ds, 0.1, 3)
        assert not set(plan.labeled_ids) & set(plan.unlabeled_ids)
        assert set(plan.labeled_ids) | set(plan.unlabeled_ids) == set(ds.ids.tolist())

    def test_full_fraction(self):
        plan = make_split(balanced(30), 1.0, 0)
        assert plan.unlabeled_ids == () and len(plan.labeled_ids) == 30

    def test_same_seed_same_split(self):
        ds = balanced(1000)
        first = make_split(ds, 0.03, 11)
        assert all(make_split(ds, 0.03, 11) == first for _ in range(100))
        assert make_split(ds, 0.03, 12) != first

    def test_independent_of_row_order(self):
        ds = balanced(200)
        perm = np.random.default_rng(0).permutation(200)
        assert make_split(ds.subset(perm), 0.1, 4) == make_split(ds, 0.1, 4)

    def test_too_small_fraction(self):
        with pytest.raises(SplitError, match="at least"):
            make_split(balanced(100), 0.01, 0)

    @pytest.mark.parametrize("fraction", [0.0, -0.1, 1.5])
    def test_fraction_domain(self, fraction):
        with pytest.raises(SplitError):
            make_split(balanced(30), fraction, 0)

    def test_unlabeled_training_sample_rejected(self):
        ds = balanced(6)
        ds = Dataset(ds.x, [0, 1, 2, 0, 1, -1], ds.ids, ds.sessions)
        with pytest.raises(SplitError):
            make_split(ds, 0.5, 0)

    @settings(max_examples=40, deadline=None)
    @given(n=st.integers(30, 400), fraction=st.floats(0.05, 1.0), seed=st.integers(0, 2**31 - 1),
           weights=st.tuples(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5)))
    def test_per_class_counts_within_one(self, n, fraction, seed, weights):
        y = np.random.default_rng(seed).choice(3, size=n, p=np.array(weights) / sum(weights))
        y[:3] = [0, 1, 2]
        ds = Dataset(np.zeros((n, 1, 1)), y, [f"{i}" for i in range(n)], np.zeros(n))
        try:
            plan = make_split(ds, fraction, seed)
        except SplitError:
            assert round(fraction * n) < 3
            return
        counts = np.bincount(ds.by_ids(plan.labeled_ids).y, minlength=3)
        sizes = np.bincount(y, minlength=3)
        assert counts.sum() == (n if fraction == 1.0 else round(fraction * n))
        # within one of the largest share unless the class ran out of members
        assert np.all(counts >= np.minimum(sizes, counts.max() - 1))

    def test_manifest_round_trip(self, tmp_path):
        plan = make_split(balanced(90), 0.1, 2)
        plan.save(tmp_path / "split.json")
        assert SplitPlan.load(tmp_path / "split.json") == plan


class TestBatches:
    def test_example_counts(self):
        plan = make_split(balanced(1000), 0.03, 0)
        batches = make_batches(plan, epoch=1)
        assert len(batches) == math.ceil(970 / 64) == 16
        assert {len(b.labeled) for b in batches} == {1, 2}
        assert not batches[0].reused

    def test_ratio_bound_at_three_percent(self):
        for seed in range(5):
            plan = make_split(balanced(1000), 0.03, seed)
            glob = len(plan.labeled_ids) / len(plan.unlabeled_ids)
            for epoch in range(1, 4):
                worst = max(abs(len(b.labeled) / len(b.unlabeled) - glob) for b in make_batches(plan, epoch))
                assert worst <= 1 / 64

    def test_partition_per_epoch(self):
        plan = make_split(balanced(1000), 0.05, 1)
        batches = make_batches(plan, epoch=2)
        lab = np.concatenate([b.labeled for b in batches]).tolist()
        unl = np.concatenate([b.unlabeled for b in batches]).tolist()
        assert sorted(lab) == sorted(plan.labeled_ids)
        assert sorted(unl) == sorted(plan.unlabeled_ids)

    def test_epochs_reshuffle(self):
        plan = make_split(balanced(500), 0.1, 1)
        a = [b.unlabeled.tolist() for b in make_batches(plan, 1)]
        assert a == [b.unlabeled.tolist() for b in make_batches(plan, 1)]
        assert a != [b.unlabeled.tolist() for b in make_batches(plan, 2)]

    def test_labeled_only(self):
        plan = make_split(balanced(200), 1.0, 0)
        batches = make_batches(plan, 1)
        assert len(batches) == batch_count(200, 0) == 4
        assert all(len(b.unlabeled) == 0 for b in batches)
        assert sorted(np.concatenate([b.labeled for b in batches]).tolist()) == sorted(plan.labeled_ids)

    def test_cyclic_reuse(self):
        plan = SplitPlan(0, 0.01, ("a", "b", "c"), tuple(f"u{i}" for i in range(640)))
        batches = make_batches(plan, 1)
        assert len(batches) == 10 and all(b.reused for b in batches)
        assert all(len(b.labeled) == 1 for b in batches)
        assert set(np.concatenate([b.labeled for b in batches]).tolist()) == {"a", "b", "c"}

    def test_empty_labeled(self):
        with pytest.raises(SplitError):
            make_batches(SplitPlan(0, 0.5, (), ("a",)), 1)

    @settings(max_examples=60, deadline=None)
    @given(n_l=st.integers(1, 300), n_u=st.integers(0, 3000), seed=st.integers(0, 1000),
           epoch=st.integers(1, 30))
    def test_counts_balanced_within_one(self, n_l, n_u, seed, epoch):
        plan = SplitPlan(seed, 0.5, tuple(f"l{i}" for i in range(n_l)), tuple(f"u{i}" for i in range(n_u)))
        batches = make_batches(plan, epoch)
        assert len(batches) == batch_count(n_l, n_u)
        lab = [len(b.labeled) for b in batches]
        unl = [len(b.unlabeled) for b in batches]
        assert max(lab) - min(lab) <= 1 and max(unl) - min(unl) <= 1
        assert min(lab) >= 1
        if n_u:
            assert max(unl) <= 64
        if n_l >= len(batches):
            assert sum(lab) == n_l


class TestSynth:
    small = dict(segments_per_session=20, n_channels=8, signature_channels=6)

    def test_spec_round_trip(self, tmp_path):
        spec = SynthSpec(snr=math.inf, signatures={0: "gamma", 1: "alpha", 2: "delta"})
        spec.save(tmp_path / "s.json")
        assert SynthSpec.load(tmp_path / "s.json") == spec

    def test_spec_unknown_band(self):
        with pytest.raises(SchemaError):
            SynthSpec.from_dict({"signatures": {"0": "mu"}})

    def test_spec_unknown_key(self):
        with pytest.raises(SchemaError):
            SynthSpec.from_dict({"segments": 3})

    def test_shapes_and_determinism(self):
        spec = SynthSpec(**self.small)
        a, b = synth_features(spec, 3), synth_features(spec, 3)
        assert a.x.shape == (15 * 20, 8, 40)
        assert a == b
        assert synth_features(spec, 4) != a
        assert synth_generate(spec, 3) == a

    def test_session_labels(self):
        ds = synth_features(SynthSpec(**self.small), 0)
        for s, c in enumerate(SynthSpec().session_labels, start=1):
            assert set(ds.y[ds.sessions == s].tolist()) == {c}

    def test_noiseless_linearly_separable(self):
        ds = synth_features(SynthSpec(snr=math.inf, segments_per_session=10), 0)
        flat = ds.x.mean(axis=1)
        clf = LinearSVC(C=10.0, max_iter=20000).fit(flat, ds.y)
        assert clf.score(flat, ds.y) == 1.0

    def test_raw_mode_shape(self):
        spec = SynthSpec(segments_per_session=1, n_sessions=2, session_labels=(0, 1))
        out = synth_raw(spec, 0)
        assert len(out) == 2
        rec, label, session, sid = out[0]
        assert rec.data.shape == (62, 8000)
        assert rec.sample_rate_hz == 1000.0
        assert (label, session) == (0, 1)

    def test_unknown_mode(self):
        with pytest.raises(SchemaError):
            synth_generate(SynthSpec(mode="video"))
