"""Mask scoring: headroom recovery, sparsity, stability, batch reports."""

import numpy as np
import pytest

from undesir import models
from undesir.explainer import ExplainConfig
from undesir.metrics import (
    ImageMetrics,
    MetricReport,
    consistency_score,
    evaluate_batch,
    phi,
    pixel_ratio,
    seed_consistency,
)


def zero_toy() -> models.ToyLinearModel:
    # constant logits: the objective reduces to the regularizer, so the
    # mask rails to all-ones and every score is exactly zero
    return models.ToyLinearModel(weights=np.zeros((10, 32, 32, 3)),
                                 bias=np.zeros(10))


def sample_image() -> np.ndarray:
    return models.generate_synthetic_dataset(1, seed=0)[0].image


class TestPhi:
    def test_recovers_half_the_headroom(self):
        assert phi(0.6, 0.8) == 50.0

    def test_no_change_is_zero(self):
        assert phi(0.5, 0.5) == 0.0
        assert phi(0.0, 0.0) == 0.0

    def test_full_recovery_is_hundred(self):
        assert phi(0.75, 1.0) == 100.0

    def test_decline_is_negative(self):
        assert phi(0.4, 0.1) < 0.0

    def test_certain_before_rejected(self):
        with pytest.raises(ValueError):
            phi(1.0, 1.0)
        with pytest.raises(ValueError):
            phi(-0.1, 0.5)

    def test_after_outside_unit_interval_rejected(self):
        with pytest.raises(ValueError):
            phi(0.5, 1.5)
        with pytest.raises(ValueError):
            phi(0.5, -0.5)


class TestPixelRatio:
    def test_all_kept_is_zero(self):
        assert pixel_ratio(np.ones((8, 8))) == 0.0

    def test_all_removed_is_one(self):
        assert pixel_ratio(np.zeros((4, 4))) == 1.0

    def test_counts_fraction(self):
        mask = np.ones((2, 2))
        mask[0, 0] = 0.0
        assert pixel_ratio(mask) == 0.25

    def test_threshold_is_on_removal(self):
        # 1 - 0.35 = 0.65 >= 0.6 counts as removed
        assert pixel_ratio(np.full((3, 3), 0.35), threshold=0.6) == 1.0
        assert pixel_ratio(np.full((3, 3), 0.45), threshold=0.6) == 0.0

    def test_threshold_strictly_inside_unit_interval(self):
        for bad in (0.0, 1.0, -0.2, 1.5):
            with pytest.raises(ValueError):
                pixel_ratio(np.ones((2, 2)), threshold=bad)

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(7)
        mask = rng.uniform(0.0, 1.0, size=(16, 16))
        grid = np.linspace(0.05, 0.95, 19)
        ratios = [pixel_ratio(mask, threshold=t) for t in grid]
        assert all(a >= b for a, b in zip(ratios, ratios[1:]))


class TestConsistencyScore:
    def test_identical_masks_score_one(self):
        rng = np.random.default_rng(3)
        m = rng.uniform(0.0, 1.0, size=(8, 8))
        assert abs(consistency_score([m, m]) - 1.0) <= 1e-12

    def test_complementary_masks_score_minus_one(self):
        rng = np.random.default_rng(3)
        m = rng.uniform(0.0, 1.0, size=(8, 8))
        assert abs(consistency_score([m, 1.0 - m]) - (-1.0)) <= 1e-12

    def test_unrelated_masks_score_near_zero(self):
        rng = np.random.default_rng(0)
        masks = [rng.uniform(0.0, 1.0, size=(8, 8)) for _ in range(3)]
        assert abs(consistency_score(masks)) <= 0.3

    def test_order_invariant(self):
        rng = np.random.default_rng(0)
        a, b, c = (rng.uniform(0.0, 1.0, size=(8, 8)) for _ in range(3))
        assert abs(consistency_score([a, b, c])
                   - consistency_score([c, a, b])) <= 1e-12

    def test_constant_mask_rejected(self):
        with pytest.raises(ValueError, match="constant mask"):
            consistency_score([np.full((4, 4), 0.5), np.ones((4, 4))])

    def test_needs_two_masks(self):
        with pytest.raises(ValueError):
            consistency_score([np.ones((4, 4))])

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            consistency_score([np.zeros((4, 4)), np.zeros((2, 2))])


class TestSeedConsistency:
    def test_repeated_seed_scores_one(self):
        result = seed_consistency(models.make_toy_model(), sample_image(),
                                  ExplainConfig(iterations=30), seeds=[4, 4])
        assert abs(result.score - 1.0) <= 1e-12
        assert len(result.masks) == 2

    def test_needs_two_seeds(self):
        with pytest.raises(ValueError):
            seed_consistency(models.make_toy_model(), sample_image(),
                             ExplainConfig(), seeds=[0])


class TestEvaluateBatch:
    def test_constant_model_scores_exact_zero(self):
        rep = evaluate_batch(zero_toy(), [sample_image()], "ftc")
        row = rep.per_image[0]
        assert row.error is None
        assert row.before == 0.1 and row.after == 0.1
        assert row.phi == 0.0
        assert row.pixel_ratio == 0.0

    def test_duplicate_images_give_identical_rows(self):
        img = sample_image()
        rep = evaluate_batch(zero_toy(), [img, img], "ftc")
        a, b = (r.to_dict() for r in rep.per_image)
        a["index"] = b["index"]
        assert a == b

    def test_bad_image_fails_alone(self):
        img = sample_image()
        rep = evaluate_batch(zero_toy(), [img, np.zeros((8, 8, 3)), img], "plain")
        assert rep.n_failed == 1
        assert rep.per_image[1].error.startswith("ValueError")
        assert rep.per_image[0].error is None and rep.per_image[2].error is None
        assert rep.improved_fraction == 0.0  # survivors did not move

    def test_all_failed_report_has_no_means(self):
        bad = models.ToyLinearModel(weights=np.full((2, 4, 4, 3), np.nan),
                                    bias=np.zeros(2))
        rep = evaluate_batch(bad, [np.full((4, 4, 3), 0.5)], "plain",
                             config=ExplainConfig(mask_shape=(4, 4)))
        assert rep.n_failed == 1
        assert rep.per_image[0].error.startswith("ExplainDiverged")
        with pytest.raises(ValueError, match="no successful images"):
            rep.phi_mean
        assert "phi_mean" not in rep.to_dict()

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError):
            evaluate_batch(zero_toy(), [], "ftc")

    def test_report_dict_shape(self):
        rep = evaluate_batch(zero_toy(), [sample_image()], "fntc", base_seed=5)
        d = rep.to_dict()
        assert d["mode"] == "fntc"
        assert d["n_images"] == 1 and d["n_failed"] == 0
        assert d["config"]["base_seed"] == 5
        assert d["config"]["threshold"] == 0.6
        assert d["phi_mean"] == 0.0 and d["pixel_ratio_mean"] == 0.0
        assert d["improved_fraction"] == 0.0
        assert d["images"][0]["index"] == 0

    def test_thread_count_does_not_change_results(self, monkeypatch):
        imgs = [sample_image()] * 4
        serial = evaluate_batch(zero_toy(), imgs, "ftc", threads=1)
        pooled = evaluate_batch(zero_toy(), imgs, "ftc", threads=3)
        monkeypatch.setenv("UNDESIR_THREADS", "2")
        from_env = evaluate_batch(zero_toy(), imgs, "ftc")
        assert serial.per_image == pooled.per_image == from_env.per_image


class TestReportInvariants:
    def test_means_match_per_image_lists(self):
        rows = [
            ImageMetrics(index=0, target=1, before=0.2, after=0.6,
                         phi=phi(0.2, 0.6), pixel_ratio=0.05),
            ImageMetrics(index=1, target=3, before=0.5, after=0.4,
                         phi=phi(0.5, 0.4), pixel_ratio=0.20),
            ImageMetrics(index=2, target=None, before=None, after=None,
                         phi=None, pixel_ratio=None, error="ValueError: x"),
        ]
        rep = MetricReport(per_image=rows, mode="ftc")
        assert rep.n_failed == 1
        assert rep.phi_mean == pytest.approx(np.mean(rep.phi_per_image))
        assert rep.pixel_ratio_mean == pytest.approx(np.mean([0.05, 0.20]))
        assert rep.improved_fraction == 0.5

    def test_row_dict_keys(self):
        row = ImageMetrics(index=0, target=2, before=0.3, after=0.5,
                           phi=phi(0.3, 0.5), pixel_ratio=0.1)
        assert set(row.to_dict()) == {"index", "target", "before", "after",
                                      "phi", "pixel_ratio", "error"}


class TestReferenceBatch:
    def test_ftc_recovers_headroom_sparsely(self, ftc_report):
        assert ftc_report.n_failed == 0
        assert ftc_report.phi_mean > 0.0
        assert ftc_report.pixel_ratio_mean < 0.10
        assert ftc_report.improved_fraction >= 0.9
