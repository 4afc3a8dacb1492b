import itertools

import numpy as np
import pytest

from hdrforensics.dataset import BlockStore, Label, SourceImage, Split, build_manifest
from hdrforensics.evaluation import (accuracy, confusion, evaluate, evaluate_verify1, majority_vote, model_id,
                                     roc_auc, roc_svg, score_blocks, write_report)
from hdrforensics.models import Classifier, ModelSpec
from hdrforensics.svm import SvmModel

M, I = int(Label.MHDR), int(Label.IHDR)


def brute_auc(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    wins = sum((p > q) + 0.5 * (p == q) for p in pos for q in neg)
    return wins / (len(pos) * len(neg))


class TestRoc:
    def test_separated(self):
        assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]).auc == 1.0

    def test_random_labels(self, rng):
        assert abs(roc_auc(rng.random(10_000), rng.integers(0, 2, 10_000)).auc - 0.5) < 0.02

    def test_against_brute_force_with_ties(self, rng):
        for _ in range(50):
            n = int(rng.integers(2, 200))
            labels = rng.integers(0, 2, n)
            labels[:2] = [0, 1]
            scores = rng.integers(0, 12, n) / 4.0
            assert abs(roc_auc(scores, labels).auc - brute_auc(scores, labels)) <= 1e-12

    def test_curve_shape(self, rng):
        roc = roc_auc(rng.standard_normal(60), rng.integers(0, 2, 60) | np.r_[1, np.zeros(59, int)])
        assert tuple(roc.points[0]) == (0.0, 0.0) and tuple(roc.points[-1]) == (1.0, 1.0)
        assert np.all(np.diff(roc.points, axis=0) >= 0)
        x, y = roc.points[:, 0], roc.points[:, 1]
        assert roc.auc == pytest.approx(float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2)), abs=1e-12)

    def test_reversed_scores(self, rng):
        s, l = rng.standard_normal(100), np.r_[np.zeros(50, int), np.ones(50, int)]
        assert roc_auc(-s, l).auc == pytest.approx(1 - roc_auc(s, l).auc, abs=1e-12)

    def test_errors(self):
        with pytest.raises(ValueError):
            roc_auc([0.1, 0.2], [1, 1])
        with pytest.raises(ValueError):
            roc_auc([0.1, np.nan], [0, 1])


class TestCounts:
    def test_accuracy(self):
        assert accuracy([0, 1, 1], [0, 1, 1]) == 1.0
        assert accuracy([1, 0], [0, 1]) == 0.0
        assert accuracy([0, 1, 0], [0, 1, 1]) == pytest.approx(2 / 3)

    def test_confusion(self):
        c = confusion([0, 1, 0, 1, 1], [0, 1, 1, 1, 0])
        assert c.tolist() == [[1, 1], [1, 2]] and c.sum() == 5


class TestMajorityVote:
    def test_strict_majority(self):
        r = majority_vote([(I, 0.6), (I, 0.7), (M, 0.99)])
        assert r.final == Label.IHDR and r.votes == (1, 2) and not r.tie

    def test_single_block(self):
        assert majority_vote([(M, 0.5)]).final == Label.MHDR

    def test_tie_rule(self):
        r = majority_vote([(M, 0.9), (I, 0.6), (M, 0.8), (I, 0.6)])
        assert r.tie and r.final == Label.MHDR
        assert majority_vote([(M, 0.5), (I, 0.9)]).final == Label.IHDR
        assert majority_vote([(M, 0.7), (I, 0.7)]).final == Label.MHDR

    def test_permutation_invariant(self, rng):
        preds = [(int(c), float(p)) for c, p in zip(rng.integers(0, 2, 6), rng.random(6))]
        finals = {majority_vote(list(p)).final for p in itertools.permutations(preds)}
        assert len(finals) == 1

    def test_empty(self):
        with pytest.raises(ValueError):
            majority_vote([])

    def test_mvs_at_least_block_accuracy(self, rng):
        for _ in range(20):
            err = rng.uniform(0, 0.45, 10)
            per_img = [rng.random(30) >= e for e in err]
            block_acc = np.mean(np.concatenate(per_img))
            mvs = np.mean([majority_vote([(int(c), 1.0) for c in ok]).final == Label.IHDR for ok in per_img])
            assert mvs >= block_acc or np.isclose(mvs, block_acc)


@pytest.fixture(scope="module")
def corpus():
    """Flat mHDR images and noisy iHDR images: a HOG-sum SVM labels them perfectly."""
    rng = np.random.default_rng(3)
    store, images = BlockStore(), []
    for i in range(8):
        for label in (Label.MHDR, Label.IHDR):
            grid = np.full((2, 3, 64, 64), float(i), np.float32)
            if label == Label.IHDR:
                grid += rng.standard_normal(grid.shape).astype(np.float32)
            name = f"{label.name.lower()}_{i}.hdr"
            store.add(name, grid)
            images.append(SourceImage(name, label, "LINEAR" if label == Label.IHDR else "FUSION", 2, 3))
    manifest = build_manifest(images, 0, verify_images_per_class=3, train_blocks_total=40, store=store)
    oracle = SvmModel(np.ones(324), -0.5, 1.0, np.zeros(324), np.ones(324), "HOG")
    return manifest, store, oracle


class TestReports:
    def test_true_labeler(self, corpus):
        manifest, store, oracle = corpus
        rep = evaluate_verify1(oracle, manifest, store)
        for row in rep.rows:
            assert row.block_accuracy == 1.0 and row.mvs_accuracy == 1.0
        assert rep.row("ALL").images == 6 and rep.row("ALL").blocks == 36
        assert rep.row("MHDR").table_cell() == "100.00(100.00)"
        assert rep.confusion.tolist() == [[18, 0], [0, 18]]

    def test_auc_matches_direct_call(self, corpus):
        manifest, store, _ = corpus
        clf = Classifier.create(ModelSpec(widths=(2, 2, 2), dense_units=4), 0)
        rep = evaluate_verify1(clf, manifest, store)
        entries = manifest.split(Split.VERIFY1)
        labels = np.array([int(e.label) for e in entries])
        sc = score_blocks(clf, store.stack(entries))
        assert rep.row("IHDR").auc == roc_auc(sc.ihdr_score, labels).auc
        assert rep.row("MHDR").auc == roc_auc(-sc.ihdr_score, labels, positive=Label.MHDR).auc
        np.testing.assert_allclose(sc.confidence, np.maximum(sc.ihdr_score, 1 - sc.ihdr_score), atol=1e-6)

    def test_verify2_single_row(self, corpus):
        manifest, store, oracle = corpus
        rep = evaluate(oracle, manifest, store, "VERIFY2")
        assert [r.name for r in rep.rows] == ["ALL"] and rep.rows[0].mvs_accuracy is None
        assert rep.rows[0].blocks == len(manifest.split(Split.VERIFY2))

    def test_written_files(self, corpus, tmp_path):
        manifest, store, oracle = corpus
        rep = evaluate_verify1(oracle, manifest, store)
        paths = write_report(rep, tmp_path, "abc_seed0_VERIFY1")
        assert [p.name for p in paths] == ["abc_seed0_VERIFY1_report.csv", "abc_seed0_VERIFY1_roc.csv",
                                           "abc_seed0_VERIFY1_roc.svg"]
        lines = paths[0].read_text().splitlines()
        assert lines[0].startswith("split,class,blocks") and len(lines) == 4
        assert paths[1].read_text().splitlines()[1] == "0.0,0.0"
        assert paths[2].read_text().startswith("<svg")


def test_model_id():
    assert model_id(b"abc") == "ba7816bf8f01"


def test_svg_contains_each_curve():
    roc = roc_auc([0.1, 0.9], [0, 1])
    svg = roc_svg({"CNN": roc, "HOG": roc})
    assert svg.count("<polyline") == 3 and "CNN (AUC 1.0000)" in svg
