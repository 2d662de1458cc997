import math

import numpy as np
import pytest

from chimera.autodiff import Tensor, grad_check
from chimera.losses import (
    LossBreakdown,
    alignment_loss,
    combined_loss,
    detection_loss,
    disentanglement_loss,
    ranking_loss,
)


def _rand_dist(rng, n):
    x = rng.random(n) + 1e-6
    return x / x.sum()


class TestDetectionLoss:
    def test_perfect_prediction_near_zero(self):
        val = detection_loss(Tensor([1.0 - 1e-12]), np.array([1.0])).item()
        assert val == pytest.approx(0.0, abs=1e-9)

    def test_coin_flip_is_ln2(self):
        val = detection_loss(Tensor([0.5]), np.array([1.0])).item()
        assert val == pytest.approx(math.log(2), abs=1e-12)

    def test_symmetry_of_labels(self):
        a = detection_loss(Tensor([0.5]), np.array([1.0])).item()
        b = detection_loss(Tensor([0.5]), np.array([0.0])).item()
        assert a == pytest.approx(b, abs=1e-15)

    def test_batch_mean(self):
        val = detection_loss(Tensor([0.5, 1.0 - 1e-12]), np.array([1.0, 1.0])).item()
        assert val == pytest.approx(math.log(2) / 2, abs=1e-9)

    def test_extreme_probability_clamped_not_nan(self):
        val = detection_loss(Tensor([0.0]), np.array([1.0])).item()
        assert math.isfinite(val)


class TestRankingLoss:
    def test_margin_satisfied(self):
        val = ranking_loss(Tensor([0.0, 0.0]), Tensor([1.0, 0.2])).item()
        assert val == 0.0

    def test_zero_separation(self):
        val = ranking_loss(Tensor([0.4, 0.1]), Tensor([0.4, 0.3])).item()
        assert val == pytest.approx(1.0)

    def test_hand_case(self):
        val = ranking_loss(Tensor([0.2, 0.1]), Tensor([0.9, 0.5])).item()
        assert val == pytest.approx(0.3, abs=1e-12)

    def test_paired_batch_average(self):
        normal = Tensor([[0.2, 0.1], [0.0, 0.0]])
        anomalous = Tensor([[0.9, 0.5], [1.0, 0.0]])
        # pair hinges: 0.3 and 0.0
        assert ranking_loss(normal, anomalous).item() == pytest.approx(0.15)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            ranking_loss(Tensor(np.zeros((0,))), Tensor([0.5]))


class TestDisentanglementLoss:
    def test_orthogonal_views_zero(self):
        vpd = Tensor([[1.0, 0.0], [2.0, 0.0]])
        vpl = Tensor([[3.0, 0.0], [1.0, 0.0]])
        vs = Tensor([[0.0, 1.0], [0.0, -2.0]])
        assert disentanglement_loss(vpd, vpl, vs).item() == 0.0

    def test_hand_case(self):
        vpd = Tensor([[1.0, 0.0]])
        vpl = Tensor([[0.0, 1.0]])
        vs = Tensor([[1.0, 0.0]])
        assert disentanglement_loss(vpd, vpl, vs).item() == pytest.approx(1.0)

    def test_quadratic_in_shared_scale(self):
        rng = np.random.default_rng(3)
        vpd = Tensor(rng.normal(size=(4, 3)))
        vpl = Tensor(rng.normal(size=(4, 3)))
        vs = rng.normal(size=(4, 3))
        base = disentanglement_loss(vpd, vpl, Tensor(vs)).item()
        scaled = disentanglement_loss(vpd, vpl, Tensor(2.5 * vs)).item()
        assert scaled == pytest.approx(2.5**2 * base, rel=1e-12)

    def test_batch_average(self):
        rng = np.random.default_rng(4)
        seq = rng.normal(size=(5, 3))
        one = disentanglement_loss(Tensor(seq), Tensor(seq), Tensor(seq)).item()
        batch = np.stack([seq, seq])
        two = disentanglement_loss(Tensor(batch), Tensor(batch), Tensor(batch)).item()
        assert two == pytest.approx(one, rel=1e-12)


class TestAlignmentLoss:
    def test_identical_distributions_zero(self):
        a = Tensor([0.2, 0.3, 0.5])
        assert alignment_loss(a, Tensor([0.2, 0.3, 0.5])).item() == pytest.approx(0.0, abs=1e-9)

    def test_disjoint_support_is_ln2(self):
        val = alignment_loss(Tensor([1.0, 0.0]), Tensor([0.0, 1.0])).item()
        assert val == pytest.approx(math.log(2), abs=1e-9)

    def test_symmetric(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            a = Tensor(_rand_dist(rng, 6))
            r = Tensor(_rand_dist(rng, 6))
            assert alignment_loss(a, r).item() == pytest.approx(
                alignment_loss(r, a).item(), abs=1e-9)

    def test_bounded_by_ln2(self):
        rng = np.random.default_rng(6)
        for _ in range(200):
            n = rng.integers(2, 9)
            val = alignment_loss(Tensor(_rand_dist(rng, n)), Tensor(_rand_dist(rng, n))).item()
            assert -1e-12 <= val <= math.log(2) + 1e-9


class TestCombinedLoss:
    def test_weighted_sum(self):
        parts = [Tensor(0.5), Tensor(0.3), Tensor(10.0), Tensor(0.2)]
        total, br = combined_loss(*parts, lambdas=(1, 2, 0.001, 0.5))
        assert total.item() == pytest.approx(1.21, abs=1e-12)
        assert br == LossBreakdown(0.5, 0.3, 10.0, 0.2, total.item())

    def test_all_zero_weights(self):
        total, _ = combined_loss(Tensor(0.5), Tensor(0.3), Tensor(10.0), Tensor(0.2),
                                 lambdas=(0, 0, 0, 0))
        assert total.item() == 0.0

    def test_projection_onto_detector(self):
        total, _ = combined_loss(Tensor(0.7), Tensor(0.3), Tensor(10.0), Tensor(0.2),
                                 lambdas=(1, 0, 0, 0))
        assert total.item() == pytest.approx(0.7)

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            combined_loss(Tensor(0.0), Tensor(0.0), Tensor(0.0), Tensor(0.0),
                          lambdas=(1, 2, -1, 0))


class TestLossGradients:
    def test_detection_loss_gradient(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            probs = Tensor(rng.uniform(0.05, 0.95, size=4))
            labels = rng.integers(0, 2, size=4).astype(float)
            err = grad_check(lambda p: detection_loss(p, labels), probs)
            assert err < 1e-6

    def test_alignment_loss_gradient(self):
        rng = np.random.default_rng(8)
        for _ in range(5):
            a = Tensor(_rand_dist(rng, 5))
            r = Tensor(_rand_dist(rng, 5))
            assert grad_check(alignment_loss, [a, r]) < 1e-6

    def test_disentanglement_loss_gradient(self):
        rng = np.random.default_rng(9)
        args = [Tensor(rng.normal(size=(3, 4))) for _ in range(3)]
        assert grad_check(disentanglement_loss, args) < 1e-6

    def test_ranking_loss_gradient(self):
        rng = np.random.default_rng(10)
        for _ in range(5):
            normal = Tensor(rng.uniform(0.1, 0.4, size=5))
            anomalous = Tensor(rng.uniform(0.5, 0.9, size=5))
            assert grad_check(ranking_loss, [normal, anomalous]) < 1e-6
