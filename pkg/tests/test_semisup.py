import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from agtfusion.data import Dataset, EmotionLabel, PredictionRecord, generate_synthetic
from agtfusion.errors import ConfigError, DataError
from agtfusion.models import TrainConfig, create_model
from agtfusion.semisup import (
    MODEL_ROLES,
    PseudoLabel,
    PseudoLabelSet,
    confidence_filter,
    intersect_pseudo_labels,
    pseudo_label_dataset,
    self_train,
    write_pseudo_labels,
)


def peaked(sample_id, label, conf):
    """Prediction with ``conf`` on ``label`` and the rest spread evenly."""
    probs = np.full(6, (1.0 - conf) / 5)
    probs[label] = conf
    return PredictionRecord(sample_id, probs)


def pl_set(entries, source="m"):
    return PseudoLabelSet(tuple(PseudoLabel(i, EmotionLabel(lab), c) for i, lab, c in entries), source)


class TestConfidenceFilter:
    def test_threshold_is_strict(self):
        kept = confidence_filter([peaked("a", 0, 0.9), peaked("b", 1, 0.9000001), peaked("c", 2, 0.89)])
        assert [e.id for e in kept] == ["b"]

    def test_exact_boundary_value(self):
        probs = [0.9, 0.02, 0.02, 0.02, 0.02, 0.02]
        assert len(confidence_filter([PredictionRecord("a", probs)], 0.9)) == 0

    def test_threshold_one_keeps_nothing(self):
        assert len(confidence_filter([peaked("a", 0, 1.0)], 1.0)) == 0

    @pytest.mark.parametrize("bad", [0.0, -0.1, 1.01])
    def test_threshold_range(self, bad):
        with pytest.raises(ConfigError):
            confidence_filter([], bad)

    def test_enumerated_monotonicity(self):
        confs = [0.2, 0.5, 0.7, 0.9, 0.95, 0.99]
        preds = [peaked(f"s{i}", i % 6, c) for i, c in enumerate(confs)]
        thresholds = [0.1, 0.5, 0.7, 0.9, 0.95, 0.99, 1.0]
        kept = [confidence_filter(preds, t).ids for t in thresholds]
        for lo, hi in zip(kept, kept[1:]):
            assert hi <= lo
        assert [len(k) for k in kept] == [6, 4, 3, 2, 1, 0, 0]

    @given(st.lists(st.floats(0.17, 1.0), max_size=20), st.floats(0.01, 1.0), st.floats(0.01, 1.0))
    def test_monotone_in_threshold(self, confs, t1, t2):
        lo, hi = sorted((t1, t2))
        preds = [peaked(f"s{i}", 0, c) for i, c in enumerate(confs)]
        assert confidence_filter(preds, hi).ids <= confidence_filter(preds, lo).ids

    def test_preserves_label_and_confidence(self):
        (entry,) = confidence_filter([peaked("a", 4, 0.97)])
        assert entry.label is EmotionLabel.SURPRISE and entry.confidence == pytest.approx(0.97)


class TestIntersection:
    def test_all_agree(self):
        out = intersect_pseudo_labels(
            [pl_set([("a", 1, 0.95)]), pl_set([("a", 1, 0.91)]), pl_set([("a", 1, 0.99)])]
        )
        assert [(e.id, e.label, e.confidence) for e in out] == [("a", EmotionLabel.HAPPY, 0.91)]

    def test_label_disagreement_drops(self):
        out = intersect_pseudo_labels([pl_set([("a", 1, 0.95)]), pl_set([("a", 2, 0.95)]), pl_set([("a", 1, 0.95)])])
        assert len(out) == 0

    def test_missing_in_any_set_drops(self):
        out = intersect_pseudo_labels([pl_set([("a", 1, 0.95), ("b", 0, 0.95)]), pl_set([("b", 0, 0.95)]), pl_set([("a", 1, 0.95), ("b", 0, 0.97)])])
        assert [e.id for e in out] == ["b"]

    def test_enumerated_membership_patterns(self):
        # every combination of (present, label) across three sources for one id
        options = [None, 0, 1]
        for combo in itertools.product(options, repeat=3):
            sets = [pl_set([] if lab is None else [("x", lab, 0.95)]) for lab in combo]
            out = intersect_pseudo_labels(sets)
            expect = None not in combo and len(set(combo)) == 1
            assert (len(out) == 1) == expect, combo

    def test_order_follows_first_set_and_sources_joined(self):
        a = pl_set([("z", 0, 0.95), ("y", 0, 0.95)], "audio")
        b = pl_set([("y", 0, 0.95), ("z", 0, 0.95)], "baseline")
        out = intersect_pseudo_labels([a, b, b])
        assert [e.id for e in out] == ["z", "y"] and out.source == "audio&baseline&baseline"

    def test_needs_three_sets(self):
        with pytest.raises(ConfigError):
            intersect_pseudo_labels([pl_set([]), pl_set([])])

    def test_duplicate_ids_rejected(self):
        with pytest.raises(DataError):
            pl_set([("a", 0, 0.95), ("a", 0, 0.96)])


class TestPseudoLabelDataset:
    def test_relabels_pool_members(self, tiny_dataset):
        pool = tiny_dataset.without_labels()
        labels = pl_set([(pool.ids[3], 2, 0.95)])
        out = pseudo_label_dataset(pool, labels)
        assert out.ids == [pool.ids[3]] and out[0].label is EmotionLabel.NEUTRAL

    def test_unknown_id(self, tiny_dataset):
        with pytest.raises(DataError):
            pseudo_label_dataset(tiny_dataset, pl_set([("nope", 0, 0.95)]))

    def test_writer(self, tmp_path):
        path = tmp_path / "p.jsonl"
        write_pseudo_labels(pl_set([("a", 5, 0.93)], "agt"), path)
        assert path.read_text() == '{"id":"a","label":5,"confidence":0.93,"source":"agt"}\n'


@pytest.fixture(scope="module")
def pools():
    counts = {EmotionLabel.HAPPY: 15, EmotionLabel.SAD: 15}
    labeled = generate_synthetic(counts, (4, 4, 4), noise_sigma=0.05, seed=1, prototype_seed=0, id_prefix="l")
    unlabeled = generate_synthetic(counts, (4, 4, 4), noise_sigma=0.05, seed=2, prototype_seed=0, id_prefix="u")
    return labeled, unlabeled.without_labels()


def fresh_models():
    hp = {"d_model": 4, "n_heads": 2, "d_ff": 4, "n_layers": 1, "hidden": 4}
    return {role: create_model(role, (4, 4, 4), **hp) for role in MODEL_ROLES}


CFG = TrainConfig(epochs=40, batch_size=8, lr=1e-2)


class TestSelfTrain:
    def test_two_stages_admit_confident_agreement(self, pools):
        labeled, unlabeled = pools
        res = self_train(fresh_models(), labeled, unlabeled, stages=2, threshold=0.5, config=CFG)
        assert len(res.history) == 2 and len(res.pseudo_labels) == 1
        r1, r2 = res.reports
        assert r1.n_train == 30 and r1.n_pseudo == 0
        assert r2.n_pseudo == len(res.pseudo_labels[0]) > 0
        assert r2.n_train == 30 + r2.n_pseudo
        assert sum(r2.composition.values()) == r2.n_pseudo

    def test_threshold_one_repeats_stage_one(self, pools):
        labeled, unlabeled = pools
        res = self_train(fresh_models(), labeled, unlabeled, stages=2, threshold=1.0, config=CFG)
        assert res.reports[1].n_pseudo == 0
        for role in MODEL_ROLES:
            a, b = res.history[0][role].params, res.history[1][role].params
            assert all(np.array_equal(a[k], b[k]) for k in a)

    def test_empty_unlabeled_pool(self, pools):
        labeled, _ = pools
        res = self_train(fresh_models(), labeled, Dataset((), labeled.widths), stages=2, config=CFG)
        assert res.reports[1].n_pseudo == 0

    def test_true_labels_are_never_overwritten(self, pools):
        labeled, unlabeled = pools
        # the unlabeled pool repeats labeled ids with wrong labels; they must be skipped
        flipped = Dataset(
            tuple(s.with_label(EmotionLabel.WORRY) for s in labeled) + unlabeled.samples, labeled.widths
        )
        res = self_train(fresh_models(), labeled, flipped, stages=2, threshold=0.5, config=CFG)
        assert not res.pseudo_labels[0].ids & set(labeled.ids)

    def test_validation(self, pools):
        labeled, unlabeled = pools
        with pytest.raises(ConfigError):
            self_train(fresh_models(), labeled, unlabeled, stages=0)
        models = fresh_models()
        models.pop("agt")
        with pytest.raises(ConfigError):
            self_train(models, labeled, unlabeled)
        with pytest.raises(DataError):
            self_train(fresh_models(), Dataset((), labeled.widths), unlabeled)
