"""Metrics: PSNR, LR PSNR, random-feature distance, diversity, evaluate."""

import numpy as np
import pytest

from sparsesr import oracles
from sparsesr.errors import ConfigError, DataError, ShapeMismatchError
from sparsesr.imaging import bicubic_resize, degrade, dihedral
from sparsesr.metrics import (
    DistanceMap,
    EvalReport,
    diversity_from_maps,
    diversity_score,
    evaluate,
    format_report,
    lr_psnr,
    proxy_perceptual,
    psnr,
    write_report,
    _kernels,
)
from sparsesr.model import ModelConfig, SparseSRModel, cem_project
from sparsesr.rng import derive
from sparsesr.synthetic import EVAL_SEEDS, natural_image


class TestPsnr:
    def test_identical_capped_at_99(self):
        img = natural_image(0, 16, 16)
        assert psnr(img, img) == 99.0

    def test_uniform_offset_is_20db(self):
        a = np.full((8, 8, 3), 0.4)
        b = a + 0.1
        assert psnr(a, b) == pytest.approx(20.0, rel=1e-12)

    def test_symmetric(self):
        a = natural_image(1, 12, 12)
        b = natural_image(2, 12, 12)
        assert psnr(a, b) == psnr(b, a)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            psnr(np.zeros((4, 4)), np.zeros((5, 4)))


class TestLrPsnr:
    def test_consistent_image_scores_high(self):
        y = natural_image(3, 12, 12)
        sr = cem_project(bicubic_resize(y, 48, 48), y, 4, 12)
        assert lr_psnr(sr, y, 4) >= 55.0

    def test_bicubic_baseline_in_band(self):
        values = []
        for seed in EVAL_SEEDS[:5]:
            hr = natural_image(seed, 96, 96)
            y = degrade(hr, 4)
            values.append(lr_psnr(bicubic_resize(y, 96, 96), y, 4))
        assert all(36.0 <= v <= 41.0 for v in values)

    def test_dim_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            lr_psnr(np.zeros((47, 48, 3)), np.zeros((12, 12, 3)), 4)


class TestRfdKernels:
    def test_deterministic(self):
        from sparsesr.metrics import _rfd_kernels
        a = _rfd_kernels()
        b = _rfd_kernels()
        for ka, kb in zip(a, b):
            np.testing.assert_array_equal(ka, kb)

    def test_widths(self):
        ks = _kernels()
        assert [k.shape[0] for k in ks] == [16, 32, 64]
        assert [k.shape[1] for k in ks] == [3, 16, 32]

    def test_four_fold_rotation_symmetry(self):
        for k in _kernels():
            np.testing.assert_allclose(k, np.rot90(k, 1, (2, 3)), atol=1e-15)


class TestProxyPerceptual:
    def test_identical_images_zero_map(self):
        img = natural_image(4, 16, 16)
        m = proxy_perceptual(img, img)
        assert m.values.shape == (16, 16)
        np.testing.assert_array_equal(m.values, 0.0)
        assert m.scalar == 0.0

    def test_nonnegative(self):
        a = natural_image(5, 16, 16)
        b = natural_image(6, 16, 16)
        assert np.all(proxy_perceptual(a, b).values >= 0.0)

    def test_monotone_in_noise_amplitude(self):
        rng = derive(7, "rfd-noise")
        medians = []
        for amp in (0.01, 0.05, 0.1):
            vals = []
            for i in range(20):
                a = natural_image(100 + i, 32, 32)
                noisy = a + amp * rng.standard_normal(a.shape)
                vals.append(proxy_perceptual(a, noisy).scalar)
            medians.append(float(np.median(vals)))
        assert medians[0] < medians[1] < medians[2]

    def test_rotation_invariance_of_scalar(self):
        a = natural_image(8, 32, 32)
        b = natural_image(9, 32, 32)
        ref = proxy_perceptual(a, b).scalar
        for k in (1, 2, 3):
            rot = proxy_perceptual(np.rot90(a, k), np.rot90(b, k)).scalar
            assert abs(rot - ref) / ref < 0.05

    def test_mismatch_and_too_small(self):
        with pytest.raises(ShapeMismatchError):
            proxy_perceptual(np.zeros((16, 16, 3)), np.zeros((16, 17, 3)))
        with pytest.raises(DataError):
            proxy_perceptual(np.zeros((4, 4, 3)), np.zeros((4, 4, 3)))

    def test_grayscale_accepted(self):
        a = natural_image(10, 16, 16)[:, :, 0]
        b = natural_image(11, 16, 16)[:, :, 0]
        assert proxy_perceptual(a, b).scalar > 0


class TestDiversity:
    def test_toy_case_by_hand(self):
        maps = [np.array([[1.0, 3.0], [2.0, 2.0]]),
                np.array([[2.0, 1.0], [3.0, 1.0]])]
        # global best = min(2.0, 1.75); local best = mean(1, 1, 2, 1).
        assert diversity_from_maps(maps) == pytest.approx(
            100.0 * (1.75 - 1.25) / 1.75, rel=1e-12)

    def test_matches_brute_force_oracle(self):
        rng = derive(12, "div-cases")
        for _ in range(50):
            n = int(rng.integers(2, 6))
            h = int(rng.integers(2, 5))
            w = int(rng.integers(2, 5))
            maps = [rng.uniform(0.1, 2.0, size=(h, w)) for _ in range(n)]
            expected = oracles.diversity_reference(maps)
            assert diversity_from_maps(maps) == pytest.approx(expected, abs=1e-9)

    def test_identical_maps_exactly_zero(self):
        m = derive(13, "div-id").uniform(0.5, 1.5, size=(3, 3))
        assert diversity_from_maps([m.copy(), m.copy(), m.copy()]) == 0.0

    def test_single_map_scores_zero(self):
        assert diversity_from_maps([np.ones((2, 2))]) == 0.0

    def test_duplicate_sample_never_changes_score(self):
        rng = derive(14, "div-dup")
        maps = [rng.uniform(0.1, 1.0, size=(3, 3)) for _ in range(3)]
        base = diversity_from_maps(maps)
        assert diversity_from_maps(maps + [maps[1].copy()]) == pytest.approx(
            base, rel=1e-12)

    def test_order_invariant(self):
        rng = derive(15, "div-order")
        maps = [rng.uniform(0.1, 1.0, size=(2, 3)) for _ in range(4)]
        base = diversity_from_maps(maps)
        assert diversity_from_maps(maps[::-1]) == pytest.approx(base, rel=1e-12)

    def test_nonnegative_property(self):
        rng = derive(16, "div-nonneg")
        for _ in range(20):
            maps = [rng.uniform(0.0, 1.0, size=(3, 3)) for _ in range(3)]
            assert diversity_from_maps(maps) >= 0.0

    def test_empty_raises(self):
        with pytest.raises(DataError):
            diversity_from_maps([])
        with pytest.raises(DataError):
            diversity_score([], np.zeros((8, 8, 3)))

    def test_diversity_score_end_to_end(self):
        ref = natural_image(17, 16, 16)
        samples = [natural_image(18, 16, 16), natural_image(19, 16, 16)]
        assert diversity_score(samples, ref) > 0.0
        assert diversity_score([samples[0], samples[0].copy()], ref) == 0.0


@pytest.fixture(scope="module")
def dataset():
    return [(f"img_{i}", natural_image(seed, 32, 32))
            for i, seed in enumerate(EVAL_SEEDS[:3])]


class TestEvaluate:
    def test_deterministic_model_reports_zero_diversity(self, dataset):
        cfg = ModelConfig(scale=2, num_atoms=8, num_blocks=1, width=8,
                          coeff_depth=1, stochastic_coeffs=False)
        model = SparseSRModel.initialize(cfg, seed=0)
        report = evaluate(model, dataset, n_samples=3, seed=0)
        assert report.diversity == 0.0
        assert all(r.diversity == 0.0 for r in report.rows)
        assert np.isfinite(report.lr_psnr)

    def test_stochastic_model_positive_diversity(self, dataset):
        cfg = ModelConfig(scale=2, num_atoms=8, num_blocks=1, width=8,
                          coeff_depth=1)
        model = SparseSRModel.initialize(cfg, seed=1)
        report = evaluate(model, dataset, n_samples=3, seed=0)
        assert report.diversity > 0.0

    def test_aggregate_equals_mean_of_rows(self, dataset):
        cfg = ModelConfig(scale=2, num_atoms=8, num_blocks=1, width=8,
                          coeff_depth=1)
        model = SparseSRModel.initialize(cfg, seed=2)
        report = evaluate(model, dataset, n_samples=2, seed=3)
        assert report.lr_psnr == pytest.approx(
            np.mean([r.lr_psnr for r in report.rows]), abs=1e-9)
        assert report.diversity == pytest.approx(
            np.mean([r.diversity for r in report.rows]), abs=1e-9)
        assert report.proxy_perceptual == pytest.approx(
            np.mean([r.proxy_perceptual for r in report.rows]), abs=1e-9)

    def test_report_text_deterministic(self, dataset, tmp_path):
        cfg = ModelConfig(scale=2, num_atoms=8, num_blocks=1, width=8,
                          coeff_depth=1)
        model = SparseSRModel.initialize(cfg, seed=4)
        r1 = evaluate(model, dataset, n_samples=2, seed=5)
        r2 = evaluate(model, dataset, n_samples=2, seed=5)
        assert format_report(r1) == format_report(r2)
        write_report(r1, tmp_path / "report.txt")
        text = (tmp_path / "report.txt").read_text()
        assert text.startswith("images=3 samples=2")
        assert "aggregate " in text

    def test_single_sample_diversity_zero(self, dataset):
        cfg = ModelConfig(scale=2, num_atoms=8, num_blocks=1, width=8,
                          coeff_depth=1)
        model = SparseSRModel.initialize(cfg, seed=6)
        report = evaluate(model, dataset, n_samples=1, seed=7)
        assert report.diversity == 0.0

    def test_map_dump(self, dataset, tmp_path):
        cfg = ModelConfig(scale=2, num_atoms=8, num_blocks=1, width=8,
                          coeff_depth=1)
        model = SparseSRModel.initialize(cfg, seed=8)
        evaluate(model, dataset[:1], n_samples=2, seed=9,
                 map_dir=tmp_path / "maps")
        files = sorted((tmp_path / "maps").glob("*.png"))
        assert len(files) == 2

    def test_input_validation(self, dataset):
        cfg = ModelConfig(scale=2, num_atoms=8, num_blocks=1, width=8,
                          coeff_depth=1)
        model = SparseSRModel.initialize(cfg, seed=10)
        with pytest.raises(DataError):
            evaluate(model, [], n_samples=2, seed=0)
        with pytest.raises(ConfigError):
            evaluate(model, dataset, n_samples=0, seed=0)


def test_distance_map_validation():
    with pytest.raises(ShapeMismatchError):
        DistanceMap(values=np.zeros((2, 2, 2)))
    m = DistanceMap(values=np.arange(4.0).reshape(2, 2))
    assert m.scalar == 1.5
