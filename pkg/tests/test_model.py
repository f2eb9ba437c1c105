import math

import numpy as np
import pytest
import torch

from clickseg import Click, ModelConfig, Proposals, SegmentationModel, select_mask
from clickseg.layers import Attention, Mlp

from conftest import tiny_model_config


def _random_image(rng, height=64, width=64):
    return rng.random((3, height, width)).astype(np.float32)


@torch.no_grad()
def _zero_module(module):
    for p in module.parameters():
        p.zero_()


class TestEncodeImage:
    def test_shapes_and_finiteness_default_config(self):
        torch.manual_seed(0)
        model = SegmentationModel(ModelConfig())
        image = torch.zeros(3, 64, 64)
        disk = torch.zeros(2, 64, 64)
        prev = torch.zeros(1, 64, 64)
        bundle = model.encode_image(image, disk, prev)
        assert [tuple(f.shape) for f in bundle.pyramid] == [
            (64, 2, 2), (64, 4, 4), (64, 8, 8),
        ]
        assert tuple(bundle.mask_feature.shape) == (64, 16, 16)
        for f in bundle.pyramid + [bundle.mask_feature]:
            assert torch.isfinite(f).all()

    def test_deterministic_in_eval_mode(self, tiny_model):
        tiny_model.eval()
        rng = np.random.default_rng(0)
        image = torch.from_numpy(_random_image(rng))
        disk = torch.zeros(2, 64, 64)
        prev = torch.zeros(1, 64, 64)
        with torch.no_grad():
            a = tiny_model.encode_image(image, disk, prev)
            b = tiny_model.encode_image(image, disk, prev)
        for fa, fb in zip(a.pyramid + [a.mask_feature], b.pyramid + [b.mask_feature]):
            assert torch.equal(fa, fb)

    def test_size_mismatch_rejected(self, tiny_model):
        with pytest.raises(ValueError, match="sizes disagree"):
            tiny_model.encode_image(
                torch.zeros(3, 64, 64), torch.zeros(2, 32, 32), torch.zeros(1, 64, 64)
            )


class TestMaskedAttention:
    def test_all_ones_previous_mask_equals_unmasked_attention(self, tiny_model):
        torch.manual_seed(1)
        layer = tiny_model.decoder[0]
        n, d = 7, tiny_model.config.dim
        queries = torch.randn(n, d)
        spatial = torch.randn(16, d)
        clicks = torch.randn(2, d)
        bias = tiny_model.attention_bias(torch.full((n, 4, 4), 50.0), (4, 4), 2)
        assert torch.equal(bias, torch.zeros(n, 18))
        with torch.no_grad():
            masked = layer(queries, spatial, clicks, bias)
            unmasked = layer(queries, spatial, clicks, torch.zeros(n, 18))
        assert torch.equal(masked, unmasked)

    def test_all_zero_previous_mask_attends_only_to_clicks(self, tiny_model):
        torch.manual_seed(2)
        layer = tiny_model.decoder[0]
        n, d = 7, tiny_model.config.dim
        queries = torch.randn(n, d)
        spatial = torch.randn(16, d)
        clicks = torch.randn(3, d)
        bias = tiny_model.attention_bias(torch.full((n, 4, 4), -50.0), (4, 4), 3)
        with torch.no_grad():
            weights = layer.cross_attention_weights(queries, spatial, clicks, bias)
        spatial_mass = weights[..., :16].sum()
        click_mass = weights[..., 16:].sum(dim=-1)
        assert float(spatial_mass) == 0.0
        assert torch.allclose(click_mass, torch.ones_like(click_mass))

    def test_hand_computed_two_column_softmax(self):
        attn = Attention(dim=2, num_heads=1)
        with torch.no_grad():
            for proj in (attn.q_proj, attn.k_proj, attn.v_proj, attn.out_proj):
                proj.weight.copy_(torch.eye(2))
                proj.bias.zero_()
        query = torch.tensor([[1.0, 2.0]])
        spatial = torch.tensor([[0.5, -1.0]])
        click = torch.tensor([[2.0, 0.5]])
        memory = torch.cat([spatial, click])
        out = attn(query, memory, memory)
        # by hand: scores = [q.k1, q.k2] / sqrt(2), softmax, weighted sum of values
        s1 = (1.0 * 0.5 + 2.0 * -1.0) / math.sqrt(2)
        s2 = (1.0 * 2.0 + 2.0 * 0.5) / math.sqrt(2)
        z = math.exp(s1) + math.exp(s2)
        w1, w2 = math.exp(s1) / z, math.exp(s2) / z
        expected = np.array([w1 * 0.5 + w2 * 2.0, w1 * -1.0 + w2 * 0.5])
        assert np.allclose(out.detach().numpy()[0], expected, atol=1e-7)

    def test_masked_column_gets_zero_weight_even_with_bias(self):
        attn = Attention(dim=4, num_heads=2)
        query = torch.randn(2, 4)
        memory = torch.randn(5, 4)
        bias = torch.zeros(2, 5)
        bias[:, 1] = float("-inf")
        weights = attn.attention_weights(query, memory, bias)
        assert float(weights[..., 1].abs().sum()) == 0.0


class TestMaskHead:
    def test_zero_weight_vector_gives_zero_logits(self, tiny_model):
        _zero_module(tiny_model.mask_mlp.layers[-1])
        queries = torch.randn(7, tiny_model.config.dim)
        feature = torch.randn(tiny_model.config.dim, 6, 6)
        logits = tiny_model.mask_head(queries, feature)
        assert torch.equal(logits, torch.zeros(7, 6, 6))
        assert torch.allclose(logits.sigmoid(), torch.full((7, 6, 6), 0.5))

    def test_one_hot_weight_selects_feature_channel(self, tiny_model):
        k = 3
        with torch.no_grad():
            tiny_model.mask_mlp.layers[-1].weight.zero_()
            tiny_model.mask_mlp.layers[-1].bias.zero_()
            tiny_model.mask_mlp.layers[-1].bias[k] = 1.0
        queries = torch.randn(2, tiny_model.config.dim)
        feature = torch.randn(tiny_model.config.dim, 5, 5)
        logits = tiny_model.mask_head(queries, feature)
        assert torch.allclose(logits[0], feature[k])
        assert torch.allclose(logits[1], feature[k])

    def test_matches_per_pixel_dot_product_loop(self, tiny_model):
        torch.manual_seed(3)
        queries = torch.randn(3, tiny_model.config.dim)
        feature = torch.randn(tiny_model.config.dim, 4, 5)
        logits = tiny_model.mask_head(queries, feature).detach().numpy()
        weights = tiny_model.mask_mlp(queries).detach().numpy()
        feat = feature.numpy()
        for i in range(3):
            for r in range(4):
                for c in range(5):
                    expected = float(np.dot(weights[i], feat[:, r, c]))
                    assert abs(logits[i, r, c] - expected) <= 1e-6


class TestTrmHeads:
    def test_zero_weights_zero_queries_give_half(self, tiny_model):
        _zero_module(tiny_model.conf_head)
        _zero_module(tiny_model.iou_head)
        conf, iou_pred = tiny_model.trm_heads(torch.zeros(7, tiny_model.config.dim))
        assert torch.equal(conf, torch.full((7,), 0.5))
        assert torch.equal(iou_pred, torch.full((7,), 0.5))

    def test_outputs_strictly_inside_unit_interval(self, tiny_model):
        torch.manual_seed(4)
        conf, iou_pred = tiny_model.trm_heads(torch.randn(7, tiny_model.config.dim) * 3)
        for v in (conf, iou_pred):
            assert ((v > 0) & (v < 1)).all()

    def test_two_unit_mlp_matches_hand_forward(self):
        mlp = Mlp(2, 2, 1, num_layers=3)
        w1 = np.array([[0.5, -1.0], [1.5, 0.25]])
        b1 = np.array([0.1, -0.2])
        w2 = np.array([[1.0, 0.5], [-0.5, 2.0]])
        b2 = np.array([0.0, 0.3])
        w3 = np.array([[2.0, -1.0]])
        b3 = np.array([0.05])
        with torch.no_grad():
            mlp.layers[0].weight.copy_(torch.from_numpy(w1).float())
            mlp.layers[0].bias.copy_(torch.from_numpy(b1).float())
            mlp.layers[1].weight.copy_(torch.from_numpy(w2).float())
            mlp.layers[1].bias.copy_(torch.from_numpy(b2).float())
            mlp.layers[2].weight.copy_(torch.from_numpy(w3).float())
            mlp.layers[2].bias.copy_(torch.from_numpy(b3).float())
        x = np.array([0.7, -0.3])
        h1 = np.maximum(w1 @ x + b1, 0.0)
        h2 = np.maximum(w2 @ h1 + b2, 0.0)
        expected = w3 @ h2 + b3
        got = mlp(torch.from_numpy(x).float()).detach().numpy()
        assert np.allclose(got, expected, atol=1e-6)


class TestForward:
    def test_proposal_count_matches_configured_queries(self):
        torch.manual_seed(5)
        model = SegmentationModel(tiny_model_config())
        rng = np.random.default_rng(1)
        out = model.predict(_random_image(rng), [Click(10, 10, 1, 0)])
        assert out.num_proposals == 7  # default query count
        assert out.mask_logits.shape == (7, 64, 64)
        assert ((out.conf >= 0) & (out.conf <= 1)).all()
        assert ((out.iou_pred >= 0) & (out.iou_pred <= 1)).all()

    def test_eval_mode_bit_identical(self, tiny_model):
        rng = np.random.default_rng(2)
        image = _random_image(rng)
        clicks = [Click(5, 6, 1, 0), Click(40, 41, 0, 1)]
        threads = torch.get_num_threads()
        torch.set_num_threads(1)
        try:
            a = tiny_model.predict(image, clicks)
            b = tiny_model.predict(image, clicks)
        finally:
            torch.set_num_threads(threads)
        assert torch.equal(a.mask_logits, b.mask_logits)
        assert torch.equal(a.conf, b.conf)
        assert torch.equal(a.iou_pred, b.iou_pred)

    def test_click_order_permutation_invariance(self, tiny_model):
        tiny_model.double()  # summation-order noise in float32 masks the identity
        rng = np.random.default_rng(3)
        image = _random_image(rng)
        clicks = [Click(5, 6, 1, 0), Click(40, 41, 0, 1), Click(20, 33, 1, 2)]
        a = tiny_model.predict(image, clicks)
        b = tiny_model.predict(image, [clicks[2], clicks[0], clicks[1]])
        for ta, tb in ((a.mask_logits, b.mask_logits), (a.conf, b.conf), (a.iou_pred, b.iou_pred)):
            rel = (ta - tb).abs() / ta.abs().clamp_min(1e-12)
            assert float(rel.max()) < 1e-5

    def test_nonsquare_input_padded_and_cropped(self, tiny_model):
        rng = np.random.default_rng(4)
        image = rng.random((3, 70, 50)).astype(np.float32)
        out = tiny_model.predict(image, [Click(10, 12, 1, 0)])
        assert out.mask_logits.shape == (7, 70, 50)
        assert torch.isfinite(out.mask_logits).all()

    def test_validation_errors(self, tiny_model):
        rng = np.random.default_rng(5)
        image = _random_image(rng)
        with pytest.raises(ValueError, match="at least one click"):
            tiny_model.predict(image, [])
        with pytest.raises(ValueError, match="prev_mask"):
            tiny_model.predict(image, [Click(1, 1, 1, 0)], np.zeros((1, 32, 32)))


class TestSelectMask:
    def _proposals(self, conf, iou):
        n = len(conf)
        return Proposals(
            mask_logits=torch.zeros(n, 4, 4),
            conf=torch.tensor(conf),
            iou_pred=torch.tensor(iou),
        )

    def test_highest_product_wins(self):
        index, _ = select_mask(self._proposals([1.0, 1.0], [0.3, 0.7]))
        assert index == 1

    def test_tie_breaks_to_lowest_index(self):
        index, _ = select_mask(self._proposals([0.5, 0.5], [0.4, 0.4]))
        assert index == 0

    def test_three_way_products(self):
        index, score = select_mask(self._proposals([0.9, 0.2, 0.6], [0.5, 0.9, 0.8]))
        assert index == 2
        assert score == pytest.approx(0.48)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            select_mask(self._proposals([], []))

    def test_matches_brute_force_scan(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            n = int(rng.integers(1, 9))
            conf = rng.random(n)
            iou = rng.random(n)
            index, score = select_mask(self._proposals(conf.tolist(), iou.tolist()))
            products = [conf[i] * iou[i] for i in range(n)]
            best = max(range(n), key=lambda i: (products[i], -i))
            assert index == best

    def test_invariant_under_joint_positive_rescale(self):
        rng = np.random.default_rng(7)
        conf = rng.random(5)
        iou = rng.random(5)
        base, _ = select_mask(self._proposals(conf.tolist(), iou.tolist()))
        scaled, _ = select_mask(self._proposals((conf * 0.37).tolist(), iou.tolist()))
        assert base == scaled
