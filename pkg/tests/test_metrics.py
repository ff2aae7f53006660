import numpy as np
import pytest

from dualgnn.errors import EvaluationError, ShapeError
from dualgnn.metrics import balanced_accuracy, compute_metrics, confusion_matrix


# Frozen hand-worked example (C=3):
#   y_true = [0,0,0,1,1,2], y_pred = [0,1,0,1,1,0]
#   confusion = [[2,1,0],[0,2,0],[1,0,0]]
#   recall     = [2/3, 1, 0]          -> balanced accuracy 5/9
#   precision  = [2/3, 2/3, 0]
#   f1         = [2/3, 4/5, 0]        -> macro F1 22/45
#   specificity= [2/3, 3/4, 1]
#   g-means    = (sqrt(4/9) + sqrt(3/4) + 0) / 3
Y_TRUE = np.array([0, 0, 0, 1, 1, 2])
Y_PRED = np.array([0, 1, 0, 1, 1, 0])


class TestFrozenExample:
    def test_confusion(self):
        conf = confusion_matrix(Y_TRUE, Y_PRED, 3)
        np.testing.assert_array_equal(conf, [[2, 1, 0], [0, 2, 0], [1, 0, 0]])

    def test_report_values(self):
        rep = compute_metrics(Y_TRUE, Y_PRED, 3)
        assert rep.balanced_accuracy == pytest.approx(5 / 9, abs=1e-12)
        assert rep.macro_f1 == pytest.approx(22 / 45, abs=1e-12)
        expected_g = (np.sqrt(4 / 9) + np.sqrt(3 / 4) + 0.0) / 3
        assert rep.g_means == pytest.approx(expected_g, abs=1e-12)
        assert rep.accuracy == pytest.approx(4 / 6, abs=1e-12)
        np.testing.assert_allclose(rep.per_class_recall, [2 / 3, 1.0, 0.0])
        np.testing.assert_allclose(rep.per_class_specificity,
                                   [2 / 3, 3 / 4, 1.0])

    def test_cheap_balanced_accuracy_matches(self):
        assert balanced_accuracy(Y_TRUE, Y_PRED, 3) == pytest.approx(
            compute_metrics(Y_TRUE, Y_PRED, 3).balanced_accuracy, abs=1e-15)


class TestProperties:
    @pytest.mark.parametrize("seed", range(10))
    def test_naive_recomputation(self, seed):
        rng = np.random.default_rng(seed)
        c = int(rng.integers(2, 6))
        y_true = np.repeat(np.arange(c), rng.integers(1, 20, size=c))
        y_pred = rng.integers(0, c, size=y_true.size)
        rep = compute_metrics(y_true, y_pred, c)
        recalls = [np.mean(y_pred[y_true == k] == k) for k in range(c)]
        assert rep.balanced_accuracy == pytest.approx(np.mean(recalls),
                                                      abs=1e-12)
        specs = [np.mean(y_pred[y_true != k] != k) for k in range(c)]
        expected_g = np.mean([np.sqrt(r * s) for r, s in zip(recalls, specs)])
        assert rep.g_means == pytest.approx(expected_g, abs=1e-12)

    def test_perfect_prediction(self):
        y = np.array([0, 1, 2, 0, 1, 2])
        rep = compute_metrics(y, y, 3)
        assert rep.balanced_accuracy == 1.0
        assert rep.macro_f1 == 1.0
        assert rep.g_means == 1.0

    def test_binary_g_means_is_sqrt_of_recall_product(self):
        y_true = np.array([0] * 10 + [1] * 5)
        y_pred = np.array([0] * 8 + [1] * 2 + [1] * 4 + [0])
        rep = compute_metrics(y_true, y_pred, 2)
        r0, r1 = rep.per_class_recall
        assert rep.g_means == pytest.approx(np.sqrt(r0 * r1), abs=1e-12)

    def test_f1_zero_when_class_never_predicted_nor_hit(self):
        y_true = np.array([0, 0, 1])
        y_pred = np.array([0, 0, 0])
        rep = compute_metrics(y_true, y_pred, 2)
        assert rep.per_class_f1[1] == 0.0
        assert np.isfinite(rep.macro_f1)


class TestValidation:
    def test_missing_class_in_truth_raises(self):
        with pytest.raises(EvaluationError):
            compute_metrics([0, 0, 1], [0, 1, 1], 3)

    def test_out_of_range_labels(self):
        with pytest.raises(EvaluationError):
            compute_metrics([0, 3], [0, 1], 3)
        with pytest.raises(EvaluationError):
            compute_metrics([0, 1], [0, -1], 2)

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            compute_metrics([0, 1], [0], 2)

    def test_empty(self):
        with pytest.raises(EvaluationError):
            compute_metrics([], [], 2)

    def test_single_class_rejected(self):
        with pytest.raises(EvaluationError):
            compute_metrics([0, 0], [0, 0], 1)

    def test_to_dict_round_trips_scalars(self):
        rep = compute_metrics(Y_TRUE, Y_PRED, 3)
        d = rep.to_dict()
        assert d["balanced_accuracy"] == rep.balanced_accuracy
        assert d["confusion"] == rep.confusion.tolist()
