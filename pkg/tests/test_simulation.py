import numpy as np
import pytest
from scipy.stats import chisquare

from clickseg import Click, NoErroneousPixels, SampleSkipped, SimulationConfig
from clickseg.simulation import (
    largest_error_component,
    mask_center_point,
    next_click,
    random_clicks,
    simulate_iteration,
)

from conftest import StubModel, brute_force_center, brute_force_components, make_proposals


class TestMaskCenterPoint:
    def test_centered_square(self):
        mask = np.zeros((11, 11), np.uint8)
        mask[3:8, 3:8] = 1
        assert mask_center_point(mask) == (5, 5)

    def test_matches_brute_force_on_random_masks(self):
        rng = np.random.default_rng(0)
        for _ in range(15):
            size = int(rng.integers(5, 20))
            mask = (rng.random((size, size)) < 0.45).astype(np.uint8)
            if not mask.any():
                continue
            pixels = {(y, x) for y, x in zip(*np.nonzero(mask))}
            assert mask_center_point(mask) == brute_force_center(pixels, size, size)

    def test_border_counts_as_boundary(self):
        mask = np.ones((5, 9), np.uint8)
        assert mask_center_point(mask) == (2, 2)  # first max-distance point raster-wise


class TestNextClick:
    def test_empty_prediction_clicks_square_center(self):
        gt = np.zeros((11, 11), np.uint8)
        gt[3:8, 3:8] = 1
        pred = np.zeros_like(gt)
        click = next_click(pred, gt, order=4)
        assert (click.y, click.x) == (5, 5)
        assert click.polarity == 1
        assert click.order == 4

    def test_single_extra_pixel_gets_negative_click(self):
        gt = np.zeros((9, 9), np.uint8)
        gt[2:5, 2:5] = 1
        pred = gt.copy()
        pred[7, 7] = 1
        click = next_click(pred, gt)
        assert (click.y, click.x) == (7, 7)
        assert click.polarity == 0

    def test_larger_component_wins(self):
        gt = np.zeros((12, 12), np.uint8)
        gt[1:4, 1:4] = 1  # 9-pixel false-negative component
        gt[8:10, 8:10] = 1  # 4-pixel false-negative component
        pred = np.zeros_like(gt)
        click = next_click(pred, gt)
        assert 1 <= click.y < 4 and 1 <= click.x < 4

    def test_click_is_always_erroneous(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            size = int(rng.integers(6, 33))
            gt = (rng.random((size, size)) < 0.5).astype(np.uint8)
            pred = (rng.random((size, size)) < 0.5).astype(np.uint8)
            if np.array_equal(pred, gt):
                continue
            click = next_click(pred, gt)
            assert pred[click.y, click.x] != gt[click.y, click.x]
            if click.polarity == 1:
                assert gt[click.y, click.x] == 1 and pred[click.y, click.x] == 0
            else:
                assert gt[click.y, click.x] == 0 and pred[click.y, click.x] == 1

    def test_largest_component_matches_brute_force(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            size = int(rng.integers(8, 65))
            error = rng.random((size, size)) < 0.2
            if not error.any():
                continue
            got = largest_error_component(error, np.zeros_like(error))
            components = brute_force_components(error)
            best_size = max(len(c) for c in components)
            # earliest raster-order component among the largest
            expected = next(c for c in components if len(c) == best_size)
            assert {(y, x) for y, x in zip(*np.nonzero(got))} == expected

    def test_identical_masks_signal_no_error(self):
        mask = np.ones((4, 4), np.uint8)
        with pytest.raises(NoErroneousPixels):
            next_click(mask, mask.copy())


class TestRandomClicks:
    def test_single_click_is_positive_inside_primary(self):
        rng = np.random.default_rng(3)
        primary = np.zeros((16, 16), np.uint8)
        primary[4:9, 5:11] = 1
        clicks = random_clicks(primary, [primary], 1, rng)
        assert len(clicks) == 1
        assert clicks[0].polarity == 1
        assert primary[clicks[0].y, clicks[0].x] == 1

    def test_full_image_primary_yields_all_positive(self):
        rng = np.random.default_rng(4)
        primary = np.ones((12, 12), np.uint8)
        clicks = random_clicks(primary, [primary], 5, rng)
        assert len(clicks) == 5
        assert all(c.polarity == 1 for c in clicks)
        assert len({(c.y, c.x) for c in clicks}) == 5

    def test_placement_invariants_and_orders(self):
        rng = np.random.default_rng(5)
        primary = np.zeros((20, 20), np.uint8)
        primary[3:12, 4:15] = 1
        for _ in range(50):
            n = int(rng.integers(1, 11))
            clicks = random_clicks(primary, [primary], n, rng)
            assert clicks[0].polarity == 1
            assert [c.order for c in clicks] == list(range(len(clicks)))
            for c in clicks:
                inside = primary[c.y, c.x] == 1
                assert inside if c.polarity == 1 else not inside

    def test_first_click_uniform_over_interior(self):
        primary = np.zeros((10, 10), np.uint8)
        primary[2:7, 3:8] = 1  # 25 interior pixels
        counts = np.zeros(primary.size)
        for trial in range(10_000):
            rng = np.random.default_rng(1000 + trial)
            click = random_clicks(primary, [primary], 1, rng)[0]
            counts[click.y * 10 + click.x] += 1
        observed = counts[primary.ravel() == 1]
        assert counts[primary.ravel() == 0].sum() == 0
        _, p_value = chisquare(observed)
        assert p_value > 0.01

    def test_empty_primary_rejected(self):
        with pytest.raises(SampleSkipped):
            random_clicks(np.zeros((8, 8), np.uint8), [], 1, np.random.default_rng(0))


class TestSimulateIteration:
    def _scene(self):
        rng = np.random.default_rng(6)
        image = rng.random((3, 24, 24)).astype(np.float32)
        primary = np.zeros((24, 24), np.uint8)
        primary[6:15, 8:18] = 1
        other = np.zeros((24, 24), np.uint8)
        other[18:22, 2:6] = 1
        return image, [primary, other], primary

    def _stub(self, masks):
        proposals = make_proposals(masks, conf=[0.5] * len(masks), iou_pred=[0.5] * len(masks))
        return StubModel([proposals])

    def test_zero_interactions_leave_zero_prev_mask(self):
        image, masks, primary = self._scene()
        config = SimulationConfig(n_inter_range=(0, 0))
        clicks, prev = simulate_iteration(
            self._stub(masks), image, masks, primary, config, np.random.default_rng(7)
        )
        assert prev.shape == (1, 24, 24)
        assert prev.sum() == 0.0
        assert len(clicks) >= 1

    def test_identical_seeds_reproduce_trajectories(self):
        image, masks, primary = self._scene()
        config = SimulationConfig(n_inter_range=(2, 4))
        a = simulate_iteration(
            self._stub(masks), image, masks, primary, config, np.random.default_rng(8)
        )
        b = simulate_iteration(
            self._stub(masks), image, masks, primary, config, np.random.default_rng(8)
        )
        assert a[0] == b[0]
        assert np.array_equal(a[1], b[1])

    def test_scripted_model_produces_expected_trajectory(self):
        image, masks, primary = self._scene()
        # stub always returns one fixed wrong mask; every corrective click must
        # land on the largest error of that mask vs the primary
        wrong = np.zeros_like(primary)
        wrong[0:3, 0:3] = 1
        stub = StubModel([make_proposals([wrong], conf=[0.9], iou_pred=[0.9])])
        config = SimulationConfig(n_inter_range=(3, 3))
        rng = np.random.default_rng(9)
        clicks, prev = simulate_iteration(stub, image, masks, primary, config, rng)
        expected_correction = next_click(wrong.astype(bool), primary.astype(bool))
        corrective = clicks[-3:]
        assert all(
            (c.y, c.x, c.polarity)
            == (expected_correction.y, expected_correction.x, expected_correction.polarity)
            for c in corrective
        )
        assert np.array_equal(prev[0] >= 0.5, wrong.astype(bool))

    def test_largest_iou_policy_prefers_best_proposal(self):
        image, masks, primary = self._scene()
        near = primary.copy()
        near[6, 8] = 0  # one pixel short of the primary
        far = np.zeros_like(primary)
        far[0:2, 0:2] = 1
        stub = StubModel([make_proposals([far, near], conf=[0.5, 0.5], iou_pred=[0.5, 0.5])])
        config = SimulationConfig(n_inter_range=(1, 1), prev_mask_policy="largest_iou")
        clicks, prev = simulate_iteration(
            stub, image, masks, primary, config, np.random.default_rng(10)
        )
        assert np.array_equal(prev[0] >= 0.5, near.astype(bool))
        assert clicks[-1].polarity == 1 and (clicks[-1].y, clicks[-1].x) == (6, 8)

    def test_positive_clicks_inside_primary_both_policies(self):
        image, masks, primary = self._scene()
        for policy in ("random", "largest_iou"):
            config = SimulationConfig(n_inter_range=(1, 3), prev_mask_policy=policy)
            clicks, _ = simulate_iteration(
                self._stub(masks), image, masks, primary, config, np.random.default_rng(11)
            )
            for c in clicks:
                inside = primary[c.y, c.x] == 1
                assert inside if c.polarity == 1 else not inside
