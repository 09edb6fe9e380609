import json

import numpy as np
import pytest

from hgqdet.data import (
    AugmentationConfig,
    CocoFormatError,
    Sample,
    SynthSpec,
    augment,
    coco_dict,
    letterbox,
    load_coco,
    save_coco,
    synth_generate,
)
from hgqdet.data.augment import hflip, rescale, vflip
from hgqdet.data.coco import parse_coco
from hgqdet.geometry import BoxN

from conftest import random_boxes


def coco_fixture(boxes, width=500, height=500):
    return {
        "images": [{"id": 7, "file_name": "a.png", "width": width, "height": height}],
        "annotations": [
            {"id": i + 1, "image_id": 7, "bbox": b, "category_id": 1} for i, b in enumerate(boxes)
        ],
        "categories": [{"id": 1, "name": "cell"}],
    }


def write_json(tmp_path, data):
    p = tmp_path / "ann.json"
    p.write_text(json.dumps(data))
    return p


class TestCocoLoader:
    def test_pixel_to_normalized(self, tmp_path):
        ds = load_coco(write_json(tmp_path, coco_fixture([[10, 20, 30, 40]])))
        assert len(ds) == 1
        np.testing.assert_allclose(ds[0].gts, [[0.05, 0.08, 0.06, 0.08]], atol=1e-12)
        assert ds[0].image.shape == (500, 500, 3)

    def test_image_without_annotations(self, tmp_path):
        ds = load_coco(write_json(tmp_path, coco_fixture([])))
        assert ds[0].gts.shape == (0, 4)

    def test_zero_area_dropped(self, tmp_path, caplog):
        ds = load_coco(write_json(tmp_path, coco_fixture([[10, 20, 0, 40], [1, 1, 5, 5]])))
        assert ds.dropped == 1 and len(ds[0].gts) == 1
        assert "dropped 1" in caplog.text

    @pytest.mark.parametrize(
        "mutate, needle",
        [
            (lambda d: d["annotations"][0].pop("bbox"), "bbox"),
            (lambda d: d["annotations"][0].update(bbox=[1, 2, 3]), r"annotations\[0\]"),
            (lambda d: d["annotations"][0].update(bbox=[1, "x", 3, 4]), "non-numeric"),
            (lambda d: d["annotations"][0].update(image_id=99), "unknown image_id"),
            (lambda d: d.pop("images"), "images"),
        ],
    )
    def test_malformed_records(self, tmp_path, mutate, needle):
        data = coco_fixture([[10, 20, 30, 40]])
        mutate(data)
        with pytest.raises(CocoFormatError, match=needle):
            load_coco(write_json(tmp_path, data))

    def test_invalid_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        with pytest.raises(CocoFormatError):
            load_coco(p)

    def test_round_trip(self, tmp_path, rng):
        samples = [
            Sample(rng.random((60 + 8 * i, 80, 3)).astype(np.float32), random_boxes(rng, 4), i + 1)
            for i in range(3)
        ]
        path = save_coco(samples, tmp_path)
        ds = load_coco(path, tmp_path / "images")
        for s, r in zip(samples, ds):
            assert r.image_id == s.image_id
            np.testing.assert_allclose(r.gts, s.gts, atol=1e-9)
            np.testing.assert_allclose(r.image, s.image, atol=0.5 / 255 + 1e-6)

    def test_stain_filter(self):
        data = coco_fixture([[10, 20, 30, 40]])
        data["images"].append({"id": 8, "width": 10, "height": 10, "stain": "iba1"})
        records, _ = parse_coco(data)
        assert [r.stain_tag for r in records] == ["synthetic", "iba1"]

    def test_coco_dict_pixels(self):
        s = Sample(np.zeros((500, 500, 3), np.float32), np.array([[0.05, 0.08, 0.06, 0.08]]), 3)
        bbox = coco_dict([s])["annotations"][0]["bbox"]
        np.testing.assert_allclose(bbox, [10, 20, 30, 40], atol=1e-9)


class TestLetterbox:
    def test_downscale_and_pad(self, rng):
        s = Sample(rng.random((500, 500, 3)).astype(np.float32), np.array([[0.5, 0.5, 0.2, 0.1]]), 1)
        out = letterbox(s, (512, 512))
        assert out.image.shape == (512, 512, 3)
        np.testing.assert_allclose(out.gts, [[0.5 * 500 / 512, 0.5 * 500 / 512, 0.2 * 500 / 512, 0.1 * 500 / 512]])
        assert np.all(out.image[500:] == 0) and np.all(out.image[:, 500:] == 0)
        np.testing.assert_array_equal(out.image[:500, :500], s.image)
        assert out.meta["letterbox"] == {"scale_x": 1.0, "scale_y": 1.0, "orig_w": 500, "orig_h": 500}

    def test_large_image_shrinks_uniformly(self):
        s = Sample(np.zeros((1024, 512, 3), np.float32), np.array([[0.5, 0.5, 0.5, 0.5]]), 1)
        out = letterbox(s, (512, 512))
        lb = out.meta["letterbox"]
        assert lb["scale_x"] == lb["scale_y"] == 0.5
        np.testing.assert_allclose(out.gts, [[0.25, 0.5, 0.25, 0.5]])

    def test_pixel_boxes_preserved(self, rng):
        s = Sample(np.zeros((300, 420, 3), np.float32), random_boxes(rng, 5), 1)
        out = letterbox(s, (512, 512))
        np.testing.assert_allclose(out.gts_pixels_xywh(), s.gts_pixels_xywh(), atol=1e-9)


class TestAugment:
    def _sample(self, rng):
        return Sample(rng.random((64, 48, 3)).astype(np.float32), random_boxes(rng, 6), 1)

    def test_hflip_moves_center(self):
        s = Sample(np.zeros((10, 10, 3), np.float32), np.array([[0.2, 0.3, 0.1, 0.1]]), 1)
        np.testing.assert_allclose(hflip(s).gts, [[0.8, 0.3, 0.1, 0.1]])
        np.testing.assert_allclose(vflip(s).gts, [[0.2, 0.7, 0.1, 0.1]])

    def test_flip_involution(self, rng):
        s = self._sample(rng)
        for f in (hflip, vflip):
            t = f(f(s))
            np.testing.assert_array_equal(t.image, s.image)
            np.testing.assert_allclose(t.gts, s.gts, atol=1e-15)

    def test_flip_moves_content_with_box(self):
        img = np.zeros((20, 20, 3), np.float32)
        img[2:6, 1:5] = 1.0
        s = Sample(img, np.array([[3 / 20, 4 / 20, 4 / 20, 4 / 20]]), 1)
        t = hflip(s)
        x0, y0, w, h = t.gts_pixels_xywh()[0]
        assert t.image[int(y0):int(y0 + h), int(x0):int(x0 + w)].min() == 1.0

    def test_identity(self, rng):
        s = self._sample(rng)
        t = augment(s, AugmentationConfig.identity(), np.random.default_rng(0))
        np.testing.assert_array_equal(t.image, s.image)
        np.testing.assert_array_equal(t.gts, s.gts)

    def test_validity_preserved(self, rng):
        cfg = AugmentationConfig(scale_range=(0.7, 1.4))
        for seed in range(50):
            s = self._sample(rng)
            t = augment(s, cfg, np.random.default_rng(seed))
            assert t.image.shape == s.image.shape and t.image.dtype == np.float32
            assert all(BoxN(*b).is_valid() for b in t.gts)
            assert 0 <= t.image.min() and t.image.max() <= 1.0 + 1e-6

    def test_reproducible(self, rng):
        s = self._sample(rng)
        a = augment(s, AugmentationConfig(), np.random.default_rng(9))
        b = augment(s, AugmentationConfig(), np.random.default_rng(9))
        np.testing.assert_array_equal(a.image, b.image)
        np.testing.assert_array_equal(a.gts, b.gts)

    def test_rescale_box_about_center(self):
        s = Sample(np.zeros((40, 40, 3), np.float32), np.array([[0.25, 0.5, 0.1, 0.2]]), 1)
        np.testing.assert_allclose(rescale(s, 1.2).gts, [[0.2, 0.5, 0.12, 0.24]], atol=1e-12)

    def test_bad_config(self):
        with pytest.raises(ValueError):
            AugmentationConfig(flip_h=1.5)
        with pytest.raises(ValueError):
            AugmentationConfig(gamma_range=(1.2, 0.8))


class TestSynth:
    def test_deterministic(self):
        spec = SynthSpec(n_images=3, image_size=64, seed=4)
        a, b = synth_generate(spec), synth_generate(spec)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.image, y.image)
            np.testing.assert_array_equal(x.gts, y.gts)
        c = synth_generate(SynthSpec(n_images=3, image_size=64, seed=5))
        assert not np.array_equal(a[0].image, c[0].image)

    def test_counts_and_bounds(self):
        samples = synth_generate(SynthSpec(n_images=6, image_size=128, cells_per_image=(5, 5), seed=1))
        assert [len(s.gts) for s in samples] == [5] * 6
        assert [s.image_id for s in samples] == list(range(1, 7))
        for s in samples:
            assert s.image.shape == (128, 128, 3) and s.image.dtype == np.float32
            assert all(BoxN(*b).is_valid() for b in s.gts)

    def test_somata_inside_boxes(self):
        s = synth_generate(SynthSpec(n_images=1, image_size=128, cells_per_image=(4, 4), seed=2))[0]
        gray = s.image.mean(-1)
        for x, y, w, h in s.gts_pixels_xywh():
            cx, cy = int(x + w / 2), int(y + h / 2)
            # stained somata are darker than the bright background
            assert gray[cy, cx] < np.median(gray) - 0.2
