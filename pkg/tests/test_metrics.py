import json

import numpy as np
import pytest

from gkanct.errors import ConfigurationError, DimensionError
from gkanct.metrics import (
    HU_DATA_RANGE,
    RoiSpec,
    evaluate_report,
    format_report_text,
    psnr,
    rmse,
    roi_stats,
    ssim,
)


class TestRmse:
    def test_closed_form(self):
        a = np.array([0.0, 0.0, 0.0, 0.0])
        b = np.array([1.0, -1.0, 1.0, -1.0])
        assert rmse(a, b) == pytest.approx(1.0)
        assert rmse(np.array([0.0, 3.0]), np.array([0.0, 0.0])) == pytest.approx(3.0 / np.sqrt(2))

    def test_identity(self):
        a = np.random.default_rng(0).random((4, 4))
        assert rmse(a, a) == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            rmse(np.zeros(3), np.zeros(4))


class TestPsnr:
    def test_constant_offset_closed_form(self):
        a = np.random.default_rng(1).random((8, 8))
        b = a + 20.0
        # MSE = 400, range 2000: 10*log10(2000^2/400) = 40 dB
        assert psnr(a, b, HU_DATA_RANGE) == pytest.approx(40.0, rel=1e-12)

    def test_halving_error_adds_six_db(self):
        a = np.zeros((4, 4))
        p1 = psnr(a, a + 10.0, 1000.0)
        p2 = psnr(a, a + 5.0, 1000.0)
        assert p2 - p1 == pytest.approx(20.0 * np.log10(2.0), rel=1e-12)

    def test_identical_is_infinite(self):
        a = np.ones((4, 4))
        assert psnr(a, a, 1.0) == float("inf")

    def test_rejects_bad_range(self):
        with pytest.raises(ConfigurationError):
            psnr(np.zeros((2, 2)), np.zeros((2, 2)), 0.0)


def ssim_loop_oracle(a, b, data_range, size=11, sigma=1.5, k1=0.01, k2=0.03):
    """Sliding-window SSIM with explicit per-window weighted moments."""
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2 * sigma**2))
    win = np.outer(g, g)
    win /= win.sum()
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    h, w = a.shape
    vals = []
    for y in range(h - size + 1):
        for x in range(w - size + 1):
            pa = a[y : y + size, x : x + size]
            pb = b[y : y + size, x : x + size]
            mu_a = (win * pa).sum()
            mu_b = (win * pb).sum()
            va = (win * pa * pa).sum() - mu_a**2
            vb = (win * pb * pb).sum() - mu_b**2
            cov = (win * pa * pb).sum() - mu_a * mu_b
            vals.append(
                ((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                / ((mu_a**2 + mu_b**2 + c1) * (va + vb + c2))
            )
    return float(np.mean(vals))


class TestSsim:
    def test_identical_images(self):
        a = np.random.default_rng(2).random((16, 16))
        assert ssim(a, a, 1.0) == pytest.approx(1.0, abs=1e-12)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(3)
        a = rng.random((16, 16))
        b = a + 0.1 * rng.standard_normal((16, 16))
        assert ssim(a, b, 1.0) == pytest.approx(ssim_loop_oracle(a, b, 1.0), rel=1e-9)

    def test_constant_images_closed_form(self):
        mu_a, mu_b, dr = 0.3, 0.5, 1.0
        a = np.full((16, 16), mu_a)
        b = np.full((16, 16), mu_b)
        c1 = (0.01 * dr) ** 2
        expected = (2 * mu_a * mu_b + c1) / (mu_a**2 + mu_b**2 + c1)
        assert ssim(a, b, dr) == pytest.approx(expected, rel=1e-12)

    def test_degrades_with_noise(self):
        rng = np.random.default_rng(4)
        a = rng.random((32, 32))
        mild = ssim(a, a + 0.02 * rng.standard_normal((32, 32)), 1.0)
        harsh = ssim(a, a + 0.3 * rng.standard_normal((32, 32)), 1.0)
        assert 1.0 > mild > harsh

    def test_rejects_small_images(self):
        with pytest.raises(DimensionError):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)), 1.0)


class TestRoi:
    def test_half_disk_closed_form(self):
        # radius-1 disk at the center of a 5x5: center + 4 neighbours
        vol = np.zeros((1, 5, 5))
        vol[0, 2, 2] = 1.0
        vol[0, 2, 1] = vol[0, 2, 3] = vol[0, 1, 2] = vol[0, 3, 2] = 1.0
        roi = RoiSpec(slice_index=0, center_x=2.0, center_y=2.0, radius=1.0)
        mean, std, err = roi_stats(vol, roi, reference_mean=0.5)
        assert mean == pytest.approx(1.0)
        assert std == pytest.approx(0.0)
        assert err == pytest.approx(0.5)

    def test_two_value_population_std(self):
        vol = np.zeros((1, 7, 7))
        roi = RoiSpec(slice_index=0, center_x=3.0, center_y=3.0, radius=1.0)
        mask = roi.mask((7, 7))
        assert mask.sum() == 5
        vals = np.array([0.0, 2.0, 0.0, 2.0, 1.0])
        vol[0][mask] = vals
        mean, std, err = roi_stats(vol, roi, reference_mean=0.0)
        assert mean == pytest.approx(1.0)
        assert std == pytest.approx(vals.std())  # ddof=0

    def test_disk_must_fit(self):
        roi = RoiSpec(slice_index=0, center_x=1.0, center_y=1.0, radius=4.0)
        with pytest.raises(ConfigurationError):
            roi.mask((8, 8))

    def test_slice_bounds(self):
        roi = RoiSpec(slice_index=3, center_x=4.0, center_y=4.0, radius=1.0)
        with pytest.raises(ConfigurationError):
            roi_stats(np.zeros((2, 8, 8)), roi, 0.0)


class TestEvaluateReport:
    def _stacks(self):
        rng = np.random.default_rng(5)
        ref = rng.random((3, 16, 16))
        pred = ref + 0.05 * rng.standard_normal((3, 16, 16))
        return pred, ref

    def test_aggregates_match_per_view(self):
        pred, ref = self._stacks()
        report = evaluate_report(pred, ref, data_range=1.0)
        assert len(report["per_view"]) == 3
        for key in ("psnr", "ssim", "rmse"):
            vals = np.array([row[key] for row in report["per_view"]])
            assert report["aggregates"][key]["mean"] == pytest.approx(vals.mean())
            assert report["aggregates"][key]["std"] == pytest.approx(vals.std())
        for i in range(3):
            assert report["per_view"][i]["rmse"] == pytest.approx(rmse(pred[i], ref[i]))

    def test_identical_stacks(self):
        _, ref = self._stacks()
        report = evaluate_report(ref.copy(), ref, data_range=1.0)
        assert report["aggregates"]["rmse"]["mean"] == 0.0
        assert report["aggregates"]["psnr"]["mean"] == float("inf")
        assert all(row["psnr"] == float("inf") for row in report["per_view"])

    def test_roi_rows(self):
        pred, ref = self._stacks()
        rois = [RoiSpec(slice_index=1, center_x=8.0, center_y=8.0, radius=2.0)]
        report = evaluate_report(pred, ref, data_range=1.0, rois=rois,
                                 roi_reference_means=[0.4])
        row = report["roi"][0]
        mean, std, err = roi_stats(pred, rois[0], 0.4)
        assert row["mean"] == pytest.approx(mean)
        assert row["std"] == pytest.approx(std)
        assert row["error"] == pytest.approx(err)

    def test_json_round_trip(self):
        pred, ref = self._stacks()
        report = evaluate_report(pred, ref, data_range=1.0,
                                 rois=[RoiSpec(0, 8.0, 8.0, 2.0)])
        again = json.loads(json.dumps(report))
        assert again["aggregates"] == report["aggregates"]
        assert again["roi"] == report["roi"]

    def test_default_data_range_is_ref_max(self):
        pred, ref = self._stacks()
        auto = evaluate_report(pred, ref)
        explicit = evaluate_report(pred, ref, data_range=float(ref.max()))
        assert auto["aggregates"] == explicit["aggregates"]

    def test_format_text(self):
        pred, ref = self._stacks()
        report = evaluate_report(pred, ref, data_range=1.0,
                                 rois=[RoiSpec(0, 8.0, 8.0, 2.0)])
        text = format_report_text(report)
        lines = text.splitlines()
        assert lines[0].split() == ["view", "PSNR(dB)", "SSIM", "RMSE"]
        assert len([l for l in lines if l and l.split()[0].isdigit()]) == 4  # 3 views + 1 roi

    def test_rejects_misaligned(self):
        with pytest.raises(DimensionError):
            evaluate_report(np.zeros((2, 16, 16)), np.zeros((3, 16, 16)))
