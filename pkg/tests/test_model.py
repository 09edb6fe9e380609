import math

import numpy as np
import pytest
import torch

from hgqdet.config import TrainConfig
from hgqdet.data import SynthSpec, synth_generate
from hgqdet.geometry import BoxN
from hgqdet.model import HeatmapQueryDetector, ModelConfig
from hgqdet.model.encoding import bilinear_sample, encode_positions, positional_encoding_2d
from hgqdet.train import batch_loss

from conftest import tiny_model_config


@pytest.fixture
def tiny_model(tiny_cfg):
    return HeatmapQueryDetector(tiny_cfg).eval()


class TestShapes:
    @pytest.mark.slow
    def test_resnet_pyramid_and_memory(self):
        model = HeatmapQueryDetector(ModelConfig()).eval()
        with torch.no_grad():
            fp = model.backbone_forward(torch.zeros(1, 3, 512, 512))
            mem = model.build_memory(fp)
            hm = model.heatmap_head(fp.p2)
            q = model.init_queries(fp.p2, hm)
        assert [tuple(t.shape[-2:]) for t in fp.levels()] == [(128, 128), (64, 64), (32, 32)]
        assert all(t.shape[1] == 256 for t in fp.levels())
        assert mem.tokens.shape == (1, 128**2 + 64**2 + 32**2, 256) == (1, 21504, 256)
        assert hm.shape == (1, 1, 128, 128)
        assert q.vectors.shape == (1, 80, 256)

    def test_tiny_forward_shapes(self, tiny_model):
        with torch.no_grad():
            fp = tiny_model.backbone_forward(torch.zeros(2, 3, 64, 64))
            mem = tiny_model.build_memory(fp)
            out = tiny_model(torch.randn(2, 3, 64, 64))
        assert [tuple(t.shape[-2:]) for t in fp.levels()] == [(16, 16), (8, 8), (4, 4)]
        assert mem.tokens.shape == (2, 336, 32)
        assert mem.level.tolist() == [0] * 256 + [1] * 64 + [2] * 16
        assert out.heatmap_logits.shape == (2, 1, 16, 16)
        assert out.logits.shape == (2, 12) and out.boxes.shape == (2, 12, 4)

    def test_rejects_non_divisible_input(self, tiny_model):
        with pytest.raises(ValueError, match="divisible"):
            tiny_model(torch.zeros(1, 3, 72, 60))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ModelConfig(d=30)
        with pytest.raises(ValueError):
            ModelConfig(backbone="vgg")


class TestQueries:
    def test_padding_when_few_peaks(self):
        model = HeatmapQueryDetector(tiny_model_config(num_queries=80)).eval()
        p2 = torch.randn(1, 32, 16, 16)
        # strictly decreasing in raster order: no plateau maxima besides (0, 0)
        hm = (-5.0 - 0.01 * torch.arange(256.0)).reshape(1, 1, 16, 16)
        cells = [(0, 0), (5, 5), (9, 3), (12, 14), (3, 11)]
        for u, v in cells:
            hm[0, 0, v, u] = 3.0
        q = model.init_queries(p2, hm)
        assert q.vectors.shape == (1, 80, 32)
        assert int(q.valid.sum()) == 5
        assert {tuple(c) for c in q.cells[0, :5].tolist()} == set(cells)
        assert torch.all(q.vectors[0, 5:] == 0)
        assert torch.all(q.anchors[0, 5:] == 0)

    def test_anchor_of_corner_cell(self):
        model = HeatmapQueryDetector(tiny_model_config()).eval()
        p2 = torch.randn(1, 32, 128, 128)
        zero = torch.zeros(1, 1, dtype=torch.long)
        q = model.queries_from_cells(p2, zero, zero, torch.ones(1, 1, dtype=torch.bool))
        assert q.anchors[0, 0].tolist() == [0.5 / 128, 0.5 / 128]

    def test_query_sees_sampled_feature(self):
        model = HeatmapQueryDetector(tiny_model_config()).eval()
        p2 = torch.randn(1, 32, 16, 16)
        u = torch.tensor([[4]])
        v = torch.tensor([[7]])
        valid = torch.ones(1, 1, dtype=torch.bool)
        q1 = model.queries_from_cells(p2, u, v, valid).vectors
        p2b = p2.clone()
        p2b[0, :, 7, 4] += 1.0
        q2 = model.queries_from_cells(p2b, u, v, valid).vectors
        p2c = p2.clone()
        p2c[0, :, 0, 0] += 1.0
        q3 = model.queries_from_cells(p2c, u, v, valid).vectors
        assert not torch.allclose(q1, q2)
        assert torch.equal(q1, q3)


class TestEncoding:
    def test_origin_and_determinism(self):
        pe = positional_encoding_2d(16, 16, 64)
        assert pe.shape == (16, 16, 64)
        assert pe[0, 0, 0] == 0.0 and pe[0, 0, 1] == 1.0
        assert torch.equal(pe, positional_encoding_2d(16, 16, 64))

    def test_distinct_cells(self):
        pe = positional_encoding_2d(16, 16, 64).reshape(256, 64)
        d = torch.cdist(pe, pe) + torch.eye(256) * 10
        assert d.min() > 1e-3

    def test_matches_cell_encoding(self):
        pe = positional_encoding_2d(8, 8, 32)
        direct = encode_positions(torch.tensor(3.0), torch.tensor(5.0), 32)
        assert torch.allclose(pe[5, 3], direct)

    def test_pyramid_scale_shares_frame(self):
        # p3 cell (1, 1) sits at p2 position (2.5, 2.5)
        pe3 = positional_encoding_2d(4, 4, 32, scale=2.0)
        assert torch.allclose(pe3[1, 1], encode_positions(torch.tensor(2.5), torch.tensor(2.5), 32))


class TestBilinear:
    def test_integer_points_exact(self):
        feat = torch.randn(2, 3, 5, 6)
        u = torch.tensor([[0.0, 5.0, 2.0], [3.0, 1.0, 4.0]])
        v = torch.tensor([[0.0, 4.0, 3.0], [2.0, 0.0, 1.0]])
        out = bilinear_sample(feat, u, v)
        for b in range(2):
            for k in range(3):
                assert torch.equal(out[b, k], feat[b, :, int(v[b, k]), int(u[b, k])])

    def test_midpoint(self):
        feat = torch.tensor([[[0.0, 1.0], [2.0, 3.0]]])
        assert bilinear_sample(feat, torch.tensor(0.5), torch.tensor(0.5)).item() == 1.5
        assert bilinear_sample(feat, torch.tensor(0.5), torch.tensor(0.0)).item() == 0.5

    def test_gradcheck(self):
        feat = torch.randn(1, 2, 4, 4, dtype=torch.float64, requires_grad=True)
        u = torch.tensor([[0.3, 2.7]], dtype=torch.float64, requires_grad=True)
        v = torch.tensor([[1.2, 0.6]], dtype=torch.float64, requires_grad=True)
        assert torch.autograd.gradcheck(bilinear_sample, (feat, u, v))


class TestDecoder:
    def _setup(self, k=6, n_valid=None):
        model = HeatmapQueryDetector(tiny_model_config(num_queries=k)).double().eval()
        torch.nn.init.normal_(model.box_head[-1].weight, std=0.1)
        g = torch.Generator().manual_seed(3)
        vec = torch.randn(1, k, 32, generator=g, dtype=torch.float64)
        anchors = torch.rand(1, k, 2, generator=g, dtype=torch.float64)
        valid = torch.ones(1, k, dtype=torch.bool)
        if n_valid is not None:
            valid[0, n_valid:] = False
        mem = torch.randn(1, 20, 32, generator=g, dtype=torch.float64)
        return model, vec, anchors, valid, mem

    def _q(self, vec, anchors, valid):
        from hgqdet.model import QuerySet
        return QuerySet(vec, anchors, valid, torch.zeros(*vec.shape[:2], 2, dtype=torch.long))

    def test_permutation_equivariance(self):
        model, vec, anchors, valid, mem = self._setup()
        perm = torch.tensor([3, 0, 5, 1, 4, 2])
        with torch.no_grad():
            a = model.decoder_forward(self._q(vec, anchors, valid), mem)
            b = model.decoder_forward(self._q(vec[:, perm], anchors[:, perm], valid[:, perm]), mem)
        assert torch.allclose(a.logits[:, perm], b.logits, atol=1e-5)
        assert torch.allclose(a.deltas[:, perm], b.deltas, atol=1e-5)

    def test_padded_slots_receive_no_attention(self):
        model, vec, anchors, valid, mem = self._setup(n_valid=4)
        vec2 = vec.clone()
        vec2[:, 4:] = torch.randn_like(vec2[:, 4:]) * 5
        with torch.no_grad():
            a = model.decoder_forward(self._q(vec, anchors, valid), mem)
            b = model.decoder_forward(self._q(vec2, anchors, valid), mem)
        assert torch.allclose(a.logits[:, :4], b.logits[:, :4], atol=1e-12)
        assert torch.allclose(a.deltas[:, :4], b.deltas[:, :4], atol=1e-12)

    def test_all_padded_is_finite(self):
        model, vec, anchors, valid, mem = self._setup(n_valid=0)
        with torch.no_grad():
            out = model.decoder_forward(self._q(vec * 0, anchors, valid), mem)
        assert torch.isfinite(out.logits).all() and torch.isfinite(out.deltas).all()


class TestEndToEnd:
    def test_init_priors(self, tiny_model):
        with torch.no_grad():
            out = tiny_model(torch.zeros(1, 3, 64, 64))
        assert torch.sigmoid(tiny_model.cls_head.bias).item() == pytest.approx(0.01)
        assert torch.sigmoid(tiny_model.heatmap_head[-1].bias).item() == pytest.approx(0.1)
        # zero-initialised box head decodes to the default box on the anchor
        a = out.queries.anchors[0]
        interior = ((a - 0.04).min(-1).values > 0) & ((a + 0.04).max(-1).values < 1)
        assert interior.any()
        assert torch.allclose(out.boxes[0, interior, :2], a[interior], atol=1e-6)
        assert torch.allclose(out.boxes[0, interior, 2:], torch.tensor(0.08), atol=1e-6)

    def test_eval_deterministic_and_valid_boxes(self, tiny_model):
        torch.nn.init.normal_(tiny_model.box_head[-1].weight, std=1.0)
        x = torch.randn(2, 3, 64, 64)
        with torch.no_grad():
            a, b = tiny_model(x), tiny_model(x)
        assert torch.equal(a.boxes, b.boxes) and torch.equal(a.logits, b.logits)
        boxes = a.boxes[a.valid].numpy()
        assert len(boxes) > 0
        assert all(BoxN(*row).is_valid() for row in boxes)

    def test_gradient_finite_differences(self):
        cfg = TrainConfig(model=tiny_model_config(num_queries=8), augment=False)
        model = HeatmapQueryDetector(cfg.model).double()
        torch.nn.init.normal_(model.box_head[-1].weight, std=0.05)
        samples = synth_generate(SynthSpec(n_images=2, image_size=64, cells_per_image=(2, 3), seed=5))

        def loss_value():
            return batch_loss(model, samples, cfg, torch.float64)[0].total

        model.train(False)
        model.zero_grad()
        loss_value().backward()
        named = [(n, p) for n, p in model.named_parameters() if p.grad is not None]
        rng = np.random.default_rng(0)
        picks = rng.choice(len(named), size=20, replace=False)
        eps = 1e-6
        checked = 0
        for i in picks:
            name, p = named[i]
            flat_idx = int(rng.integers(p.numel()))
            analytic = p.grad.reshape(-1)[flat_idx].item()
            with torch.no_grad():
                orig = p.reshape(-1)[flat_idx].item()
                p.reshape(-1)[flat_idx] = orig + eps
                up = loss_value().item()
                p.reshape(-1)[flat_idx] = orig - eps
                down = loss_value().item()
                p.reshape(-1)[flat_idx] = orig
            numeric = (up - down) / (2 * eps)
            assert math.isclose(analytic, numeric, rel_tol=1e-3, abs_tol=1e-7), (name, analytic, numeric)
            checked += 1
        assert checked == 20
