import itertools
import math

import numpy as np
import pytest
import torch

from hgqdet.geometry import ciou
from hgqdet.heatmap import render_target
from hgqdet.losses import (
    LossWeights,
    ciou_box_loss,
    l1_box_loss,
    query_focal_loss,
    sigmoid_focal_loss,
    total_loss,
)
from hgqdet.matching import CostWeights, MatchAssignment, build_cost, hungarian_assign

from conftest import random_boxes


def brute_force_min(cost: np.ndarray) -> tuple[float, list[tuple[int, int]]]:
    """Exhaustive minimum over one-to-one assignments of size min(rows, cols)."""
    n, m = cost.shape
    best, best_pairs = math.inf, None
    if n <= m:
        for cols in itertools.permutations(range(m), n):
            pairs = list(zip(range(n), cols))
            c = math.fsum(cost[i, j] for i, j in pairs)
            if c < best:
                best, best_pairs = c, pairs
    else:
        for rows in itertools.permutations(range(n), m):
            pairs = sorted(zip(rows, range(m)))
            c = math.fsum(cost[i, j] for i, j in pairs)
            if c < best:
                best, best_pairs = c, pairs
    return best, best_pairs


def assignment_cost(cost, pairs):
    return math.fsum(cost[i, j] for i, j in pairs)


class TestBuildCost:
    def test_weights_default(self):
        assert CostWeights().as_tuple() == (3, 5, 4, 4)

    def test_only_bce_survives_for_identical_boxes(self):
        box = torch.tensor([[0.4, 0.5, 0.2, 0.1]], dtype=torch.float64)
        c = build_cost(torch.zeros(1), box, box)
        assert c.values[0, 0] == pytest.approx(3 * math.log(2), abs=1e-12)
        assert c.values[0, 0] == pytest.approx(2.0794, abs=1e-4)

    def test_perfect_prediction_cost_vanishes(self):
        box = torch.tensor([[0.4, 0.5, 0.2, 0.1]], dtype=torch.float64)
        c = build_cost(torch.tensor([50.0]), box, box)
        # p clamps at 1 - 1e-6 so -log p ~ 1e-6
        assert c.values[0, 0] < 1e-5

    def test_components_and_valid_rows(self, rng):
        boxes = torch.tensor(random_boxes(rng, 5))
        gts = torch.tensor(random_boxes(rng, 3))
        logits = torch.tensor(rng.normal(size=5))
        valid = torch.tensor([True, False, True, True, False])
        c = build_cost(logits, boxes, gts, valid)
        assert c.shape == (3, 3)
        assert c.query_index.tolist() == [0, 2, 3]
        i, j = 1, 2
        b, g = boxes[2].numpy(), gts[j].numpy()
        p = 1 / (1 + math.exp(-float(logits[2])))
        expected = (
            3 * -math.log(p)
            + 5 * np.abs(b - g).sum()
            + 4 * (1 - float(ciou(b, g)))
            + 4 * math.hypot(b[0] - g[0], b[1] - g[1])
        )
        assert c.values[i, j] == pytest.approx(expected, abs=1e-12)
        assert np.all(c.values >= 0)

    def test_no_ground_truth(self):
        c = build_cost(torch.zeros(4), torch.full((4, 4), 0.2), torch.zeros(0, 4))
        a = hungarian_assign(c)
        assert c.shape == (4, 0) and a.pairs == [] and a.unmatched_queries == [0, 1, 2, 3]


class TestHungarian:
    def test_trivial(self):
        assert hungarian_assign(np.array([[0.7]])).pairs == [(0, 0)]

    def test_two_by_two(self):
        a = hungarian_assign(np.array([[1.0, 2.0], [2.0, 1.0]]))
        assert set(a.pairs) == {(0, 0), (1, 1)}

    def test_brute_force_random(self, rng):
        for _ in range(100):
            cost = rng.uniform(0, 10, (6, 6))
            best, _ = brute_force_min(cost)
            assert assignment_cost(cost, hungarian_assign(cost).pairs) == best

    def test_brute_force_rectangular_and_ties(self, rng):
        for trial in range(300):
            n, m = map(int, rng.integers(1, 7, 2))
            cost = rng.uniform(0, 1, (n, m)) if trial % 2 else rng.integers(0, 3, (n, m)).astype(float)
            a = hungarian_assign(cost)
            best, _ = brute_force_min(cost)
            assert assignment_cost(cost, a.pairs) == best
            assert len(a.pairs) == min(n, m)
            assert len({q for q, _ in a.pairs}) == len(a.pairs) == len({g for _, g in a.pairs})

    def test_lexicographic_tie_break(self, rng):
        for _ in range(100):
            n, m = map(int, rng.integers(1, 6, 2))
            cost = rng.integers(0, 2, (n, m)).astype(float)
            a = hungarian_assign(cost)
            best, _ = brute_force_min(cost)
            # smallest sorted pair list among every optimal assignment
            optimal = []
            for rows in itertools.permutations(range(n), min(n, m)):
                for cols in itertools.permutations(range(m), min(n, m)):
                    pairs = sorted(zip(rows, cols))
                    if assignment_cost(cost, pairs) == best:
                        optimal.append(pairs)
            assert a.pairs == min(optimal)

    def test_constant_shift_invariance(self, rng):
        for _ in range(50):
            cost = rng.uniform(0, 1, (5, 4))
            assert hungarian_assign(cost).pairs == hungarian_assign(cost + 7.0).pairs

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            hungarian_assign(np.array([[np.inf, 1.0]]))


def _pair_instance(rng, k=6, m=3):
    logits = torch.tensor(rng.normal(size=k), requires_grad=True)
    boxes = torch.tensor(random_boxes(rng, k, 0.1, 0.3), requires_grad=True)
    gts = torch.tensor(random_boxes(rng, m, 0.1, 0.3))
    return logits, boxes, gts


class TestLosses:
    def test_single_pair_terms(self):
        a = torch.tensor([[0.5, 0.5, 0.2, 0.2]], dtype=torch.float64)
        b = torch.tensor([[0.6, 0.5, 0.2, 0.2]], dtype=torch.float64)
        assert float(l1_box_loss(a, b)) == pytest.approx(0.1, abs=1e-12)
        assert float(ciou_box_loss(a, b)) == pytest.approx(1 - (1 / 3 - 0.01 / 0.13), abs=1e-12)
        assert float(ciou_box_loss(a, b)) == pytest.approx(0.74359, abs=1e-5)

    def test_focal_elementwise(self):
        x = torch.tensor([0.0, 0.0], dtype=torch.float64)
        t = torch.tensor([1.0, 0.0], dtype=torch.float64)
        out = sigmoid_focal_loss(x, t)
        assert out[0].item() == pytest.approx(0.25 * 0.5**1.5 * math.log(2))
        assert out[1].item() == pytest.approx(0.75 * 0.5**1.5 * math.log(2))

    def test_gradients_finite_differences(self, rng):
        logits, boxes, gts = _pair_instance(rng)
        valid = torch.tensor([True, True, True, True, False, True])
        matched = torch.tensor([True, False, True, False, False, False])
        assert torch.autograd.gradcheck(lambda x: query_focal_loss(x, valid, matched), (logits,), eps=1e-6,
                                        atol=1e-8, rtol=1e-4)
        pb = boxes[:3]
        assert torch.autograd.gradcheck(lambda x: l1_box_loss(x, gts), (boxes[:3].detach().requires_grad_(),),
                                        eps=1e-6, atol=1e-8, rtol=1e-4)
        assert torch.autograd.gradcheck(lambda x: ciou_box_loss(x, gts), (pb.detach().requires_grad_(),),
                                        eps=1e-6, atol=1e-8, rtol=1e-4)

    def test_breakdown_identity_and_nonnegative(self, rng):
        w = LossWeights()
        assert (w.hm, w.cls, w.l1, w.iou) == (2.0, 1.0, 6.0, 2.0)
        for _ in range(20):
            logits, boxes, gts = _pair_instance(rng)
            valid = torch.ones(6, dtype=torch.bool)
            cost = build_cost(logits, boxes, gts, valid)
            a = hungarian_assign(cost)
            hm_t = render_target(gts.numpy(), 8, 8, dtype=torch.float64)
            hm_l = torch.tensor(rng.normal(size=(8, 8)))
            br = total_loss(logits, boxes, valid, gts, a, hm_l, hm_t)
            recombined = 2.0 * br.heatmap + 1.0 * br.cls + 6.0 * br.l1 + 2.0 * br.iou
            assert br.total.item() == recombined.item()
            assert all(v >= 0 for v in br.as_floats().values())

    def test_perfect_prediction_limit(self):
        gts = torch.tensor([[0.3, 0.3, 0.1, 0.1], [0.7, 0.6, 0.2, 0.1]], dtype=torch.float64)
        boxes = torch.cat([gts, torch.tensor([[0.5, 0.5, 0.1, 0.1]], dtype=torch.float64)])
        logits = torch.tensor([60.0, 60.0, -60.0], dtype=torch.float64)
        valid = torch.ones(3, dtype=torch.bool)
        a = hungarian_assign(build_cost(logits, boxes, gts, valid))
        assert a.pairs == [(0, 0), (1, 1)]
        target = render_target(gts.numpy(), 16, 16, dtype=torch.float64)
        hm = torch.where(target == 1, torch.tensor(60.0), torch.tensor(-60.0)).double()
        # soft negatives near centers still pay (1 - t)^4 p^gamma, which vanishes as p -> 0
        br = total_loss(logits, boxes, valid, gts, a, hm, target)
        assert br.total.item() < 1e-12

    def test_zero_ground_truth(self, rng):
        logits, boxes, _ = _pair_instance(rng)
        gts = torch.zeros(0, 4, dtype=torch.float64)
        valid = torch.ones(6, dtype=torch.bool)
        a = hungarian_assign(build_cost(logits, boxes, gts, valid))
        br = total_loss(logits, boxes, valid, gts, a, torch.zeros(4, 4, dtype=torch.float64),
                        torch.zeros(4, 4, dtype=torch.float64))
        assert br.l1.item() == 0.0 and br.iou.item() == 0.0 and br.cls.item() > 0
        br.total.backward()
        assert torch.isfinite(logits.grad).all()

    def test_padded_queries_ignored(self, rng):
        logits, boxes, gts = _pair_instance(rng)
        valid = torch.tensor([True, True, True, True, False, False])
        a = hungarian_assign(build_cost(logits, boxes, gts, valid))
        assert not {4, 5} & set(a.query_indices)
        hm_t = torch.zeros(4, 4, dtype=torch.float64)
        br1 = total_loss(logits, boxes, valid, gts, a, hm_t, hm_t)
        logits2 = logits.detach().clone()
        logits2[4:] = 100.0
        br2 = total_loss(logits2, boxes, valid, gts, a, hm_t, hm_t)
        assert br1.total.item() == pytest.approx(br2.total.item(), abs=1e-12)

    def test_assignment_is_constant_for_autograd(self, rng):
        logits, boxes, gts = _pair_instance(rng)
        a = MatchAssignment(pairs=[(0, 0), (1, 1)], unmatched_queries=[2, 3, 4, 5])
        hm = torch.zeros(4, 4, dtype=torch.float64)
        br = total_loss(logits, boxes, torch.ones(6, dtype=torch.bool), gts, a, hm, hm)
        br.total.backward()
        assert torch.all(boxes.grad[2:] == 0)
