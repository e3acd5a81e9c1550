import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crustprobe import evaluation
from crustprobe.errors import FormatError, ValidationError
from crustprobe.synth import SeafloorClass

C0 = SeafloorClass.MN_CRUST
S1 = SeafloorClass.SEDIMENT
N2 = SeafloorClass.NODULES


class TestSplit:
    def test_combined_transect_counts(self):
        # 1296 + 672 = 1968 samples at a 70% ratio: 1378 train, 590 test
        split = evaluation.split(1968, 0.7, seed=0)
        assert split.train_indices.shape[0] == 1378
        assert split.test_indices.shape[0] == 590
        union = np.union1d(split.train_indices, split.test_indices)
        assert np.array_equal(union, np.arange(1968))
        assert np.intersect1d(split.train_indices, split.test_indices).size == 0

    def test_round_half_up(self):
        # 10 * 0.65 = 6.5 rounds up to 7 (not banker's 6)
        split = evaluation.split(10, 0.65, seed=1)
        assert split.train_indices.shape[0] == 7

    def test_same_seed_identical(self):
        assert evaluation.split(100, 0.7, seed=9) == evaluation.split(100, 0.7, seed=9)

    def test_different_seeds_differ_same_sizes(self):
        a = evaluation.split(10, 0.7, seed=1)
        b = evaluation.split(10, 0.7, seed=2)
        assert a.train_indices.shape == b.train_indices.shape
        assert not np.array_equal(a.train_indices, b.train_indices)

    @pytest.mark.parametrize("n,ratio", [(1, 0.7), (0, 0.5)])
    def test_degenerate_n_rejected(self, n, ratio):
        with pytest.raises(ValidationError):
            evaluation.split(n, ratio)

    @pytest.mark.parametrize("ratio", [0.0, 1.0, -0.2, 1.5])
    def test_ratio_bounds(self, ratio):
        with pytest.raises(ValidationError):
            evaluation.split(10, ratio)

    def test_stratified_preserves_class_ratios(self):
        labels = np.array([0] * 50 + [1] * 30 + [2] * 20)
        split = evaluation.split(100, 0.7, seed=3, labels=labels, stratified=True)
        train_labels = labels[split.train_indices]
        assert np.sum(train_labels == 0) == 35
        assert np.sum(train_labels == 1) == 21
        assert np.sum(train_labels == 2) == 14
        union = np.union1d(split.train_indices, split.test_indices)
        assert np.array_equal(union, np.arange(100))

    def test_stratified_requires_labels(self):
        with pytest.raises(ValidationError):
            evaluation.split(10, 0.7, stratified=True)

    @given(st.integers(min_value=2, max_value=500), st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=100, deadline=None)
    def test_split_always_disjoint_and_exhaustive(self, n, seed):
        split = evaluation.split(n, 0.7, seed=seed)
        union = np.union1d(split.train_indices, split.test_indices)
        assert np.array_equal(union, np.arange(n))
        assert split.train_indices.shape[0] + split.test_indices.shape[0] == n


class TestConfusion:
    def test_perfect_predictions(self):
        labels = [C0, S1, N2, C0, S1, N2]
        matrix, metrics = evaluation.confusion(labels, labels)
        assert np.array_equal(matrix.counts, np.diag([2, 2, 2]))
        assert metrics["overall_accuracy"] == 1.0

    def test_all_predicted_crust_transect_a_shares(self):
        # transect A composition: 730 crust, 189 sediment, 377 nodules;
        # predicting crust everywhere scores 730/1296 = 0.563 overall with
        # full crust recall
        truth = [C0] * 730 + [S1] * 189 + [N2] * 377
        predicted = [C0] * 1296
        matrix, metrics = evaluation.confusion(truth, predicted)
        assert metrics["overall_accuracy"] == pytest.approx(730 / 1296)
        assert round(metrics["overall_accuracy"], 3) == 0.563
        assert metrics["recall_mncrust"] == 1.0
        assert matrix.counts[0, 0] == 730
        assert matrix.counts[1, 0] == 189
        assert matrix.counts[2, 0] == 377

    def test_hand_built_six_sample_case(self):
        truth = [C0, C0, S1, S1, N2, N2]
        predicted = [C0, S1, S1, S1, C0, N2]
        matrix, metrics = evaluation.confusion(truth, predicted)
        want = np.array([[1, 1, 0], [0, 2, 0], [1, 0, 1]])
        assert np.array_equal(matrix.counts, want)
        assert metrics["overall_accuracy"] == pytest.approx(4 / 6)
        assert metrics["recall_sediment"] == 1.0
        assert metrics["precision_sediment"] == pytest.approx(2 / 3)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            evaluation.confusion([C0], [C0, S1])

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            evaluation.confusion([], [])

    def test_absent_class_recall_is_nan(self):
        matrix, metrics = evaluation.confusion([C0, C0], [C0, S1])
        assert np.isnan(metrics["recall_nodules"])

    @given(
        st.lists(
            st.tuples(st.integers(0, 2), st.integers(0, 2)), min_size=1, max_size=200
        )
    )
    @settings(max_examples=100, deadline=None)
    def test_row_and_column_sums(self, pairs):
        truth = [SeafloorClass(a) for a, _ in pairs]
        predicted = [SeafloorClass(b) for _, b in pairs]
        matrix, metrics = evaluation.confusion(truth, predicted)
        assert matrix.total == len(pairs)
        for i, cls in enumerate(evaluation.CLASS_ORDER):
            assert matrix.counts[i].sum() == sum(1 for t in truth if t == cls)
            assert matrix.counts[:, i].sum() == sum(1 for p in predicted if p == cls)

    @given(
        st.lists(
            st.tuples(st.integers(0, 2), st.integers(0, 2)), min_size=1, max_size=100
        ),
        st.permutations([0, 1, 2]),
    )
    @settings(max_examples=100, deadline=None)
    def test_accuracy_invariant_under_label_permutation(self, pairs, perm):
        truth = [SeafloorClass(a) for a, _ in pairs]
        predicted = [SeafloorClass(b) for _, b in pairs]
        _, metrics = evaluation.confusion(truth, predicted)
        truth_p = [SeafloorClass(perm[int(t)]) for t in truth]
        predicted_p = [SeafloorClass(perm[int(p)]) for p in predicted]
        _, metrics_p = evaluation.confusion(truth_p, predicted_p)
        assert metrics["overall_accuracy"] == metrics_p["overall_accuracy"]


class TestOutputs:
    def test_confusion_csv_roundtrip(self, tmp_path):
        matrix, _ = evaluation.confusion([C0, S1, N2, N2], [C0, C0, N2, S1])
        path = tmp_path / "confusion.csv"
        evaluation.write_confusion_csv(matrix, path)
        assert evaluation.read_confusion_csv(path) == matrix

    def test_confusion_csv_has_class_names(self, tmp_path):
        matrix, _ = evaluation.confusion([C0], [C0])
        path = tmp_path / "confusion.csv"
        evaluation.write_confusion_csv(matrix, path)
        text = path.read_text()
        for name in ("MnCrust", "Sediment", "Nodules"):
            assert name in text

    def test_metrics_roundtrip(self, tmp_path):
        _, metrics = evaluation.confusion([C0, S1], [C0, S1])
        path = tmp_path / "metrics.json"
        evaluation.write_metrics(metrics, path)
        again = evaluation.read_metrics(path)
        assert again["overall_accuracy"] == metrics["overall_accuracy"]

    def test_bad_confusion_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(FormatError):
            evaluation.read_confusion_csv(path)
