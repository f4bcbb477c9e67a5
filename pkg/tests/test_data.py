"""Synthetic scenes, instance masks, augmentation, and dataset files."""

import numpy as np
import pytest

from crowdloc.data import (
    SceneSample,
    SyntheticConfig,
    augment,
    crop_sample,
    flip_sample,
    generate_scene,
    load_annotations,
    load_sample,
    read_manifest,
    render_instance_mask,
    save_annotations,
    scale_sample,
    split_ids,
    write_dataset,
)
from crowdloc.instances import connected_components, extract_instances
from crowdloc.metrics import HeadAnnotation, match_points


def _manual_sample(heads, h=48, w=48):
    image = np.zeros((3, h, w), dtype=np.float32)
    return SceneSample(image, heads, id="manual")


class TestSceneGeneration:
    def test_seed_determinism(self):
        cfg = SyntheticConfig(seed=7)
        a = generate_scene(cfg, index=3)
        b = generate_scene(cfg, index=3)
        assert np.array_equal(a.image, b.image)
        assert a.heads == b.heads
        assert a.id == b.id

    def test_distinct_indices_differ(self):
        cfg = SyntheticConfig(seed=7)
        a = generate_scene(cfg, index=0)
        b = generate_scene(cfg, index=1)
        assert not np.array_equal(a.image, b.image)

    def test_exact_count_when_range_collapses(self):
        cfg = SyntheticConfig(count_range=(5, 5), seed=11)
        for index in range(4):
            assert len(generate_scene(cfg, index).heads) == 5

    def test_counts_stay_in_range(self, rng):
        cfg = SyntheticConfig(count_range=(3, 8), seed=int(rng.integers(1000)))
        for index in range(10):
            assert 3 <= len(generate_scene(cfg, index).heads) <= 8

    def test_image_shape_dtype_range(self):
        cfg = SyntheticConfig(height=40, width=56, seed=2)
        sample = generate_scene(cfg)
        assert sample.image.shape == (3, 40, 56)
        assert sample.image.dtype == np.float32
        assert sample.image.min() >= 0.0 and sample.image.max() <= 1.0

    def test_heads_inside_bounds_with_diameter_boxes(self):
        cfg = SyntheticConfig(seed=5, count_range=(8, 12))
        sample = generate_scene(cfg)
        for head in sample.heads:
            assert 0 <= head.x < cfg.width
            assert 0 <= head.y < cfg.height
            # the box is the disk's bounding square, so w = h = 2r
            assert head.w == head.h
            assert 2.0 <= head.w <= 2.0 * cfg.radius_range[1]

    def test_radius_grows_toward_bottom(self):
        """Perspective trend: heads lower in the frame are larger.

        Jitter blurs the relation per head, so the check aggregates a
        correlation over many scenes instead of comparing single pairs.
        """
        cfg = SyntheticConfig(
            height=96, width=96, count_range=(6, 10), seed=13
        )
        ys, rs = [], []
        for index in range(20):
            for head in generate_scene(cfg, index).heads:
                ys.append(head.y)
                rs.append(head.w / 2.0)
        corr = np.corrcoef(ys, rs)[0, 1]
        assert corr > 0.5

    def test_blur_band_smooths_top_rows(self):
        """Oracle: blur only reduces high-frequency energy in the band.

        The blurred and unblurred configs share every random draw, so
        rows below the band must be bit-identical and rows inside it
        must lose horizontal-difference variance.
        """
        base = dict(height=64, width=64, count_range=(6, 9), seed=21)
        plain = generate_scene(SyntheticConfig(blur_band=0.0, **base))
        soft = generate_scene(SyntheticConfig(blur_band=0.3, **base))
        band = int(round(0.3 * 64))
        assert np.array_equal(plain.image[:, band:, :], soft.image[:, band:, :])
        assert plain.heads == soft.heads
        hf_plain = np.diff(plain.image[:, :band, :], axis=2).var()
        hf_soft = np.diff(soft.image[:, :band, :], axis=2).var()
        assert hf_soft < hf_plain * 0.7

    def test_zero_sigma_disables_blur(self):
        base = dict(height=64, width=64, count_range=(4, 6), seed=3)
        a = generate_scene(SyntheticConfig(blur_sigma=0.0, **base))
        b = generate_scene(SyntheticConfig(blur_band=0.0, **base))
        assert np.array_equal(a.image, b.image)

    def test_overcrowded_config_raises(self):
        cfg = SyntheticConfig(
            height=16, width=16, count_range=(60, 60), seed=1
        )
        with pytest.raises(ValueError, match="crowded"):
            generate_scene(cfg)

    def test_bad_ranges_rejected(self):
        with pytest.raises(ValueError):
            SyntheticConfig(count_range=(5, 3))
        with pytest.raises(ValueError):
            SyntheticConfig(radius_range=(0.2, 4.0))
        with pytest.raises(ValueError):
            SyntheticConfig(blur_band=1.5)


class TestInstanceMask:
    def test_component_count_equals_head_count(self):
        cfg = SyntheticConfig(count_range=(5, 12), seed=31)
        for index in range(6):
            sample = generate_scene(cfg, index)
            mask = render_instance_mask(sample)
            labels = connected_components(mask[0] > 0.5)
            assert labels.max() == len(sample.heads)

    def test_zero_heads_zero_mask(self):
        cfg = SyntheticConfig(count_range=(0, 0), seed=1)
        sample = generate_scene(cfg)
        mask = render_instance_mask(sample)
        assert mask.shape == (1, cfg.height, cfg.width)
        assert not mask.any()

    def test_mask_is_binary_float(self):
        sample = generate_scene(SyntheticConfig(seed=9))
        mask = render_instance_mask(sample)
        assert mask.dtype == np.float32
        assert set(np.unique(mask)) <= {0.0, 1.0}

    def test_touching_disks_stay_separate(self):
        # two overlapping disks: erosion along the shared border must
        # leave exactly two 8-connected components
        heads = [
            HeadAnnotation(20.0, 24.0, 12.0, 12.0),
            HeadAnnotation(28.0, 24.0, 12.0, 12.0),
        ]
        mask = render_instance_mask(_manual_sample(heads))
        labels = connected_components(mask[0] > 0.5)
        assert labels.max() == 2

    def test_center_pixels_survive_erosion(self):
        sample = generate_scene(SyntheticConfig(count_range=(8, 12), seed=17))
        mask = render_instance_mask(sample)[0]
        for head in sample.heads:
            assert mask[int(round(head.y)), int(round(head.x))] == 1.0

    def test_closure_recovers_annotations(self):
        """Scene -> mask -> components -> centroids lands on the heads.

        Every extracted centroid must match its source head one-to-one
        under the sigma radius, with nothing spurious and nothing lost.
        """
        cfg = SyntheticConfig(count_range=(4, 9), seed=41)
        for index in range(5):
            sample = generate_scene(cfg, index)
            mask = render_instance_mask(sample)
            labels = connected_components(mask[0] > 0.5)
            centroids = [inst.centroid for inst in extract_instances(labels)]
            result = match_points(centroids, sample.heads)
            assert len(result.fp) == 0
            assert len(result.fn) == 0
            assert len(result.tp_pairs) == len(sample.heads)


class TestAugmentation:
    def test_flip_twice_restores_sample(self):
        sample = generate_scene(SyntheticConfig(seed=6))
        twice = flip_sample(flip_sample(sample))
        assert np.array_equal(twice.image, sample.image)
        for a, b in zip(twice.heads, sample.heads):
            assert a.x == pytest.approx(b.x, abs=1e-9)
            assert a.y == b.y and a.w == b.w and a.h == b.h

    def test_flip_coordinate_contract(self):
        sample = _manual_sample([HeadAnnotation(10.0, 5.0, 4.0, 4.0)], h=50, w=100)
        flipped = flip_sample(sample)
        assert flipped.heads[0].x == 89.0
        assert flipped.heads[0].y == 5.0

    def test_flip_mirrors_pixels(self):
        sample = generate_scene(SyntheticConfig(seed=8))
        flipped = flip_sample(sample)
        assert np.array_equal(flipped.image, sample.image[:, :, ::-1])

    def test_unit_scale_full_crop_is_identity(self):
        sample = generate_scene(SyntheticConfig(seed=10))
        _, h, w = sample.image.shape
        out = crop_sample(scale_sample(sample, 1.0), 0, 0, h, w)
        assert np.array_equal(out.image, sample.image)
        assert out.heads == sample.heads

    def test_scale_resizes_image_and_coords(self):
        sample = _manual_sample([HeadAnnotation(20.0, 30.0, 6.0, 6.0)], h=48, w=48)
        small = scale_sample(sample, 0.5)
        assert small.image.shape == (3, 24, 24)
        assert small.heads[0].x == pytest.approx(10.0)
        assert small.heads[0].y == pytest.approx(15.0)
        assert small.heads[0].w == pytest.approx(3.0)

    def test_crop_keeps_and_shifts_inside_heads(self):
        heads = [
            HeadAnnotation(10.0, 12.0, 4.0, 4.0),
            HeadAnnotation(40.0, 12.0, 4.0, 4.0),
        ]
        out = crop_sample(_manual_sample(heads), 4, 4, 32, 32)
        assert len(out.heads) == 1
        assert out.heads[0].x == 6.0
        assert out.heads[0].y == 8.0

    def test_crop_pads_small_sources(self):
        sample = _manual_sample([HeadAnnotation(8.0, 8.0, 4.0, 4.0)], h=16, w=16)
        sample.image += 0.5
        out = crop_sample(sample, 0, 0, 32, 32)
        assert out.image.shape == (3, 32, 32)
        assert np.all(out.image[:, :16, :16] == 0.5)
        assert np.all(out.image[:, 16:, :] == 0.0)

    def test_crop_origin_validation(self):
        sample = _manual_sample([], h=32, w=32)
        with pytest.raises(ValueError, match="origin"):
            crop_sample(sample, 20, 0, 16, 16)

    def test_augment_is_rng_deterministic(self):
        sample = generate_scene(SyntheticConfig(seed=12, count_range=(6, 9)))
        a = augment(sample, np.random.default_rng(99), 48, 48)
        b = augment(sample, np.random.default_rng(99), 48, 48)
        assert np.array_equal(a.image, b.image)
        assert a.heads == b.heads
        assert a.image.shape == (3, 48, 48)

    def test_augment_output_heads_inside_bounds(self, rng):
        sample = generate_scene(SyntheticConfig(seed=14, count_range=(8, 12)))
        for _ in range(10):
            out = augment(sample, rng, 48, 48)
            for head in out.heads:
                assert 0 <= head.x < 48 and 0 <= head.y < 48


class TestAnnotationFiles:
    def test_roundtrip(self, tmp_path):
        heads = [
            HeadAnnotation(1.25, 2.5, 4.0, 4.0),
            HeadAnnotation(30.125, 7.75, 6.5, 6.5),
        ]
        path = tmp_path / "a.txt"
        save_annotations(heads, path)
        back = load_annotations(path)
        assert len(back) == 2
        for a, b in zip(back, heads):
            assert a.x == pytest.approx(b.x, abs=1e-3)
            assert a.y == pytest.approx(b.y, abs=1e-3)
            assert a.w == pytest.approx(b.w, abs=1e-3)
            assert a.h == pytest.approx(b.h, abs=1e-3)

    def test_accepts_sample_directly(self, tmp_path):
        sample = generate_scene(SyntheticConfig(seed=4, count_range=(3, 3)))
        path = tmp_path / "s.txt"
        save_annotations(sample, path)
        assert len(load_annotations(path)) == 3

    def test_empty_file_is_valid(self, tmp_path):
        path = tmp_path / "empty.txt"
        path.write_text("")
        assert load_annotations(path) == []

    def test_malformed_line_reports_number(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("1 2 3 4\n5 6 7 8\n9 10 11\n")
        with pytest.raises(ValueError, match=":3"):
            load_annotations(path)

    def test_non_numeric_field_reports_number(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("1 2 three 4\n")
        with pytest.raises(ValueError, match=":1"):
            load_annotations(path)


class TestDatasetFiles:
    def test_write_dataset_layout(self, tmp_path):
        cfg = SyntheticConfig(seed=3, count_range=(2, 4))
        ids = write_dataset(cfg, 5, tmp_path / "ds")
        assert len(ids) == 5
        assert read_manifest(tmp_path / "ds") == ids
        for sample_id in ids:
            assert (tmp_path / "ds" / f"{sample_id}.ppm").exists()
            assert (tmp_path / "ds" / f"{sample_id}.txt").exists()

    def test_load_sample_roundtrip(self, tmp_path):
        cfg = SyntheticConfig(seed=3, count_range=(3, 3))
        ids = write_dataset(cfg, 1, tmp_path / "ds")
        original = generate_scene(cfg, 0)
        loaded = load_sample(tmp_path / "ds", ids[0])
        # pixel values pass through one 8-bit quantization
        assert np.allclose(loaded.image, original.image, atol=1.0 / 255.0)
        assert len(loaded.heads) == len(original.heads)
        for a, b in zip(loaded.heads, original.heads):
            assert a.x == pytest.approx(b.x, abs=1e-3)

    def test_split_is_seed_stable_and_disjoint(self):
        ids = [f"s{i:03d}" for i in range(20)]
        train_a, val_a = split_ids(ids, seed=5)
        train_b, val_b = split_ids(ids, seed=5)
        assert train_a == train_b and val_a == val_b
        assert len(val_a) == 4 and len(train_a) == 16
        assert set(train_a) | set(val_a) == set(ids)
        assert not set(train_a) & set(val_a)

    def test_split_varies_with_seed(self):
        ids = [f"s{i:03d}" for i in range(20)]
        _, val_a = split_ids(ids, seed=1)
        _, val_b = split_ids(ids, seed=2)
        assert val_a != val_b
