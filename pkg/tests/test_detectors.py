import math

import numpy as np
import pytest

from oodeval import detectors as det
from oodeval.errors import (
    ConfigError,
    InsufficientSamplesError,
    ModeError,
    ShapeError,
)


def softmax_rows(values):
    return det.softmax(np.asarray(values, dtype=np.float64))


def sigmoid_probs(values):
    return det.ProbMatrix(np.asarray(values, dtype=np.float64), "sigmoid")


class TestSoftmax:
    def test_symmetric(self):
        np.testing.assert_allclose(softmax_rows([[0.0, 0.0]]).values, [[0.5, 0.5]])

    def test_analytic(self):
        np.testing.assert_allclose(softmax_rows([[math.log(2), 0.0]]).values,
                                   [[2 / 3, 1 / 3]], rtol=1e-12)

    def test_large_logits_no_overflow(self):
        probs = softmax_rows([[1000.0, 0.0]]).values
        assert np.isfinite(probs).all()
        np.testing.assert_allclose(probs, [[1.0, 0.0]], atol=1e-12)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        probs = softmax_rows(rng.standard_normal((200, 7)) * 10)
        np.testing.assert_allclose(probs.values.sum(axis=1), 1.0, atol=1e-9)

    def test_argmax_preserved(self):
        rng = np.random.default_rng(1)
        logits = rng.standard_normal((5000, 11)) * 5
        probs = softmax_rows(logits)
        np.testing.assert_array_equal(np.argmax(probs.values, axis=1),
                                      np.argmax(logits, axis=1))


class TestMsp:
    def test_values(self):
        probs = det.ProbMatrix(np.array([[1.0, 0.0], [0.5, 0.5], [0.7, 0.3]]),
                               "softmax")
        np.testing.assert_allclose(det.msp_score(probs), [-1.0, -0.5, -0.7])

    def test_sigmoid_rejected(self):
        with pytest.raises(ModeError):
            det.msp_score(sigmoid_probs([[0.9, 0.9]]))


class TestMaxLogit:
    def test_values(self):
        np.testing.assert_allclose(det.maxlogit_score(np.array([[2.0, 1.0, 0.0]])),
                                   [-2.0])
        np.testing.assert_allclose(det.maxlogit_score(np.array([[-5.0, -7.0]])),
                                   [5.0])

    def test_cross_item_ordering_diverges_from_msp(self):
        """MSP and MaxLogit can rank the same two items oppositely."""
        logits = np.array([[5.0, 4.9], [1.0, -3.0]])
        msp = det.msp_score(det.softmax(logits))
        maxlogit = det.maxlogit_score(logits)
        assert msp[0] > msp[1]          # msp: A more anomalous
        assert maxlogit[1] > maxlogit[0]  # maxlogit: B more anomalous
        np.testing.assert_allclose(msp, [-0.5249791875, -0.9820137900],
                                   atol=1e-9)
        np.testing.assert_allclose(maxlogit, [-5.0, -1.0])

    def test_shift_covariance(self):
        rng = np.random.default_rng(2)
        logits = rng.standard_normal((50, 6))
        shifts = rng.standard_normal((50, 1))
        np.testing.assert_allclose(det.maxlogit_score(logits + shifts),
                                   det.maxlogit_score(logits) - shifts.ravel(),
                                   atol=1e-12)
        # msp is invariant to the same per-row shift
        np.testing.assert_allclose(det.msp_score(det.softmax(logits + shifts)),
                                   det.msp_score(det.softmax(logits)), atol=1e-9)

    def test_class_permutation_invariance(self):
        rng = np.random.default_rng(3)
        logits = rng.standard_normal((40, 8))
        perm = rng.permutation(8)
        np.testing.assert_array_equal(det.maxlogit_score(logits),
                                      det.maxlogit_score(logits[:, perm]))
        np.testing.assert_allclose(det.msp_score(det.softmax(logits)),
                                   det.msp_score(det.softmax(logits[:, perm])),
                                   atol=1e-12)


class TestLogitAvg:
    def test_values(self):
        logits = np.array([[1.0, 1.0, 1.0], [3.0, -3.0, 0.0], [2.0, 1.0, 0.0]])
        np.testing.assert_allclose(det.logitavg_score(logits), [-1.0, 0.0, -1.0])


class TestBackground:
    def test_values(self):
        probs = det.ProbMatrix(np.array([[0.9, 0.1], [0.0, 1.0]]), "softmax")
        np.testing.assert_allclose(det.background_score(probs, 1), [0.1, 1.0])

    def test_out_of_range(self):
        probs = det.softmax(np.zeros((1, 3)))
        with pytest.raises(IndexError):
            det.background_score(probs, 5)


class TestKlDetector:
    def test_fit_single_row(self):
        probs = det.ProbMatrix(np.array([[0.8, 0.2]]), "softmax")
        templates = det.kl_templates_fit(probs)
        np.testing.assert_allclose(templates.templates[0], [0.8, 0.2])
        np.testing.assert_allclose(templates.templates[1], [0.5, 0.5])
        np.testing.assert_array_equal(templates.support_counts, [1, 0])

    def test_fit_mean(self):
        probs = det.ProbMatrix(np.array([[0.8, 0.2], [0.6, 0.4]]), "softmax")
        templates = det.kl_templates_fit(probs)
        np.testing.assert_allclose(templates.templates[0], [0.7, 0.3])

    def test_uniform_rows_tie_to_lowest_class(self):
        probs = det.ProbMatrix(np.full((3, 2), 0.5), "softmax")
        templates = det.kl_templates_fit(probs)
        np.testing.assert_array_equal(templates.support_counts, [3, 0])
        np.testing.assert_allclose(templates.templates[0], [0.5, 0.5])

    def test_score_zero_on_exact_template(self):
        probs = det.ProbMatrix(np.array([[0.8, 0.2]]), "softmax")
        templates = det.kl_templates_fit(probs)
        np.testing.assert_allclose(det.kl_score(probs, templates), [0.0], atol=1e-12)

    def test_score_closed_form(self):
        templates = det.ClassTemplates(templates=np.array([[0.5, 0.5]]),
                                       support_counts=np.array([1]))
        probs = det.ProbMatrix(np.array([[1.0, 0.0]]), "softmax")
        np.testing.assert_allclose(det.kl_score(probs, templates), [math.log(2)],
                                   rtol=1e-12)

    def test_min_over_templates_bounded_by_uniform(self):
        rng = np.random.default_rng(4)
        probs = det.softmax(rng.standard_normal((30, 4)))
        templates = det.kl_templates_fit(det.softmax(rng.standard_normal((50, 4))))
        with_uniform = det.ClassTemplates(
            templates=np.vstack([templates.templates, np.full((1, 4), 0.25)]),
            support_counts=np.append(templates.support_counts, 0),
        )
        kl_uniform = det.kl_score(
            probs, det.ClassTemplates(np.full((1, 4), 0.25), np.array([0]))
        )
        scores = det.kl_score(probs, with_uniform)
        assert np.all(scores <= kl_uniform + 1e-12)

    def test_nonnegative(self):
        rng = np.random.default_rng(5)
        probs = det.softmax(rng.standard_normal((100, 6)) * 3)
        templates = det.kl_templates_fit(det.softmax(rng.standard_normal((200, 6))))
        assert np.all(det.kl_score(probs, templates) >= 0.0)


class TestTypicality:
    def test_no_trigger_gives_uniform_row(self):
        probs = sigmoid_probs([[0.2, 0.9], [0.3, 0.8]])
        matrix = det.typicality_build(probs, threshold=0.5)
        np.testing.assert_allclose(matrix.rows[0], [0.5, 0.5])

    def test_single_row_already_normalized(self):
        probs = sigmoid_probs([[0.9, 0.1]])
        matrix = det.typicality_build(probs, threshold=0.5)
        np.testing.assert_allclose(matrix.rows[0], [0.9, 0.1])

    def test_two_row_fixture(self):
        probs = sigmoid_probs([[0.9, 0.3], [0.7, 0.1]])
        matrix = det.typicality_build(probs, threshold=0.5)
        np.testing.assert_allclose(matrix.rows[0], [0.8, 0.2])

    def test_rows_stochastic(self):
        rng = np.random.default_rng(6)
        probs = sigmoid_probs(rng.random((100, 5)))
        matrix = det.typicality_build(probs)
        np.testing.assert_allclose(matrix.rows.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(matrix.rows >= 0)

    def test_permutation_leaves_matrix_unchanged(self):
        rng = np.random.default_rng(7)
        values = rng.random((60, 4))
        matrix = det.typicality_build(sigmoid_probs(values))
        for seed in range(5):
            perm = np.random.default_rng(seed).permutation(60)
            permuted = det.typicality_build(sigmoid_probs(values[perm]))
            np.testing.assert_array_equal(matrix.rows, permuted.rows)

    def test_bad_threshold(self):
        with pytest.raises(ConfigError):
            det.typicality_build(sigmoid_probs([[0.9, 0.1]]), threshold=1.5)

    def test_score_zero_on_proportional_row(self):
        matrix = det.typicality_build(sigmoid_probs([[0.9, 0.1]]), threshold=0.5)
        scores = det.typicality_score(sigmoid_probs([[0.9, 0.1]]), matrix)
        np.testing.assert_allclose(scores, [0.0], atol=1e-12)

    def test_score_hand_l1(self):
        matrix = det.TypicalityMatrix(rows=np.array([[0.8, 0.2], [0.5, 0.5]]),
                                      threshold_build=0.5)
        scores = det.typicality_score(sigmoid_probs([[0.9, 0.1]]), matrix)
        np.testing.assert_allclose(scores, [0.2], atol=1e-12)

    def test_fallback_uses_argmax_row(self):
        matrix = det.TypicalityMatrix(rows=np.array([[0.8, 0.2], [0.5, 0.5]]),
                                      threshold_build=0.5)
        # nothing triggered; argmax ties to class 0 -> distance to row 0
        scores = det.typicality_score(sigmoid_probs([[0.1, 0.1]]), matrix)
        np.testing.assert_allclose(scores, [abs(0.5 - 0.8) + abs(0.5 - 0.2)])
        zeroed = det.typicality_score(sigmoid_probs([[0.1, 0.1]]), matrix,
                                      fallback="zero")
        np.testing.assert_allclose(zeroed, [0.0])

    def test_matrix_type_rejects_non_stochastic_rows(self):
        with pytest.raises(Exception):
            det.TypicalityMatrix(rows=np.array([[0.9, 0.5], [0.5, 0.5]]),
                                 threshold_build=0.5)

    def test_templates_type_rejects_non_stochastic_rows(self):
        with pytest.raises(Exception):
            det.ClassTemplates(templates=np.array([[2.0, 1.0]]),
                               support_counts=np.array([1]))

    def test_eval_threshold_can_differ_from_build(self):
        matrix = det.typicality_build(
            sigmoid_probs([[0.9, 0.3], [0.7, 0.1]]), threshold=0.5)
        loose = det.typicality_score(sigmoid_probs([[0.4, 0.4]]), matrix,
                                     threshold=0.3)
        assert loose[0] > 0.0


class TestDropoutVariance:
    def test_identical_samples(self):
        stack = np.tile(np.array([[0.2, 0.8]]), (4, 3, 1)).reshape(4, 3, 2)
        np.testing.assert_allclose(det.dropout_variance_score(stack), np.zeros(3))

    def test_two_sample_analytic(self):
        stack = np.array([0.0, 1.0]).reshape(2, 1, 1)
        np.testing.assert_allclose(det.dropout_variance_score(stack), [0.25])

    def test_three_sample_hand_value(self):
        stack = np.array([[[1.0, 0.0]], [[0.0, 1.0]], [[0.5, 0.5]]])
        np.testing.assert_allclose(det.dropout_variance_score(stack), [1 / 6],
                                   rtol=1e-12)

    def test_needs_two_samples(self):
        with pytest.raises(InsufficientSamplesError):
            det.dropout_variance_score(np.zeros((1, 3, 2)))

    def test_sample_order_invariance(self):
        rng = np.random.default_rng(8)
        stack = rng.random((6, 10, 4))
        perm = rng.permutation(6)
        np.testing.assert_allclose(det.dropout_variance_score(stack),
                                   det.dropout_variance_score(stack[perm]),
                                   atol=1e-15)

    def test_max_aggregate(self):
        stack = np.array([[[1.0, 0.5]], [[0.0, 0.5]]])
        np.testing.assert_allclose(
            det.dropout_variance_score(stack, aggregate="max"), [0.25])


class TestAeRecon:
    def test_equal_inputs(self):
        img = np.random.default_rng(9).random((4, 5, 3))
        np.testing.assert_array_equal(det.ae_recon_score(img, img), np.zeros((4, 5)))

    def test_all_ones_vs_zeros(self):
        np.testing.assert_array_equal(
            det.ae_recon_score(np.ones((2, 2, 3)), np.zeros((2, 2, 3))),
            np.ones((2, 2)))

    def test_single_channel_difference(self):
        img = np.zeros((3, 3, 3))
        recon = img.copy()
        recon[1, 2, 0] = 0.3
        expected = np.zeros((3, 3))
        expected[1, 2] = 0.1
        np.testing.assert_allclose(det.ae_recon_score(img, recon), expected)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            det.ae_recon_score(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)))


class TestSegScores:
    def test_single_pixel_consistency(self):
        logits = np.array([[[2.0, -1.0, 0.5]]])
        np.testing.assert_allclose(det.seg_scores(logits, "maxlogit"),
                                   det.maxlogit_score(logits.reshape(1, 3)).reshape(1, 1))
        np.testing.assert_allclose(det.seg_scores(logits, "msp"),
                                   det.msp_score(det.softmax(logits.reshape(1, 3))).reshape(1, 1))

    def test_constant_map(self):
        logits = np.tile(np.array([1.0, 2.0, 3.0]), (4, 6, 1))
        np.testing.assert_array_equal(det.seg_scores(logits, "maxlogit"),
                                      np.full((4, 6), -3.0))

    def test_matches_per_pixel_loop_oracle(self):
        rng = np.random.default_rng(10)
        logits = rng.standard_normal((2, 2, 4))
        for method, kwargs in (("maxlogit", {}), ("msp", {}),
                               ("background", {"background_class": 2})):
            got = det.seg_scores(logits, method, **kwargs)
            for y in range(2):
                for x in range(2):
                    row = logits[y, x][None, :]
                    if method == "maxlogit":
                        want = det.maxlogit_score(row)[0]
                    elif method == "msp":
                        want = det.msp_score(det.softmax(row))[0]
                    else:
                        want = det.background_score(det.softmax(row), 2)[0]
                    assert got[y, x] == pytest.approx(want, abs=1e-12)

    def test_unknown_method(self):
        with pytest.raises(ConfigError):
            det.seg_scores(np.zeros((2, 2, 3)), "energy")

    def test_background_needs_class(self):
        with pytest.raises(ConfigError):
            det.seg_scores(np.zeros((2, 2, 3)), "background")
