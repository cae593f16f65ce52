"""Data pipeline tests: image I/O, degradation, augmentation, sampling."""

import numpy as np
import pytest
from PIL import Image

from lisn.data import (
    Dataset,
    TrainPatch,
    augment,
    degrade,
    dihedral,
    load_image,
    sample_batch,
    save_image,
    split_train_test,
)
from lisn.ops import bicubic_resize
from lisn.tensor import Tensor

from conftest import make_smooth


class TestImageIO:
    def test_black_image_loads_as_zeros(self, tmp_path):
        path = tmp_path / "black.png"
        Image.fromarray(np.zeros((8, 8), dtype=np.uint8), "L").save(path)
        sample = load_image(path)
        assert np.all(sample.hr.data == 0.0)
        assert sample.hr.shape == (1, 1, 8, 8)

    def test_white_image_loads_as_ones(self, tmp_path):
        path = tmp_path / "white.png"
        Image.fromarray(np.full((8, 8), 255, dtype=np.uint8), "L").save(path)
        assert np.all(load_image(path).hr.data == 1.0)

    def test_round_trip_within_quantization(self, tmp_path):
        x = Tensor(make_smooth(16, seed=1)[None, None])
        path = tmp_path / "rt.png"
        save_image(x, path)
        back = load_image(path).hr
        # 0.5/255 quantization bound, plus float32 slop at exact ties
        assert np.abs(back.data - x.data).max() <= 0.5 / 255 + 1e-7

    def test_rgb_luma_conversion(self, tmp_path):
        rgb = np.zeros((4, 4, 3), dtype=np.uint8)
        rgb[...] = [255, 0, 0]
        path = tmp_path / "red.png"
        Image.fromarray(rgb, "RGB").save(path)
        np.testing.assert_allclose(load_image(path).hr.data, 0.299, atol=1e-6)

    def test_pgm_supported(self, tmp_path):
        path = tmp_path / "img.pgm"
        Image.fromarray(np.full((6, 6), 128, dtype=np.uint8), "L").save(path)
        np.testing.assert_allclose(load_image(path).hr.data, 128 / 255, atol=1e-6)

    def test_unreadable_file_names_path(self, tmp_path):
        path = tmp_path / "broken.png"
        path.write_bytes(b"not an image")
        with pytest.raises(ValueError, match="broken.png"):
            load_image(path)


class TestDegrade:
    def test_constant_stays_constant(self):
        hr = Tensor(np.full((1, 1, 16, 16), 0.42, dtype=np.float64))
        np.testing.assert_allclose(degrade(hr, 4).data, 0.42, atol=1e-12)

    def test_shape(self):
        hr = Tensor(np.zeros((1, 1, 128, 128), dtype=np.float32))
        assert degrade(hr, 4).shape == (1, 1, 32, 32)

    def test_indivisible_rejected(self):
        with pytest.raises(ValueError):
            degrade(Tensor(np.zeros((1, 1, 30, 32))), 4)

    def test_linear_ramp_on_line(self):
        w = 32
        ramp = np.tile(np.arange(w, dtype=np.float64), (w, 1))[None, None]
        lr = degrade(Tensor(ramp), 2).data[0, 0]
        for j in range(2, w // 2 - 2):
            src = (j + 0.5) * 2 - 0.5
            assert abs(lr[4, j] - src) < 1e-6


class TestAugment:
    def _patch(self, seed=0, size=8):
        hr = Tensor(make_smooth(size, seed)[None, None].astype(np.float32))
        return TrainPatch(lr=degrade(hr, 2), hr=hr)

    def test_rot90_four_times_identity(self):
        patch = self._patch()
        arr = patch.hr.data
        out = arr
        for _ in range(4):
            out = dihedral(out, 1, False)
        np.testing.assert_array_equal(out, arr)

    def test_hflip_involution(self):
        arr = self._patch().hr.data
        np.testing.assert_array_equal(dihedral(dihedral(arr, 0, True), 0, True), arr)

    def test_same_transform_both_sides(self):
        patch = self._patch(seed=3)
        rng = np.random.default_rng(5)
        out = augment(patch, rng)
        # multisets preserved on both sides
        np.testing.assert_array_equal(np.sort(out.hr.data.ravel()), np.sort(patch.hr.data.ravel()))
        np.testing.assert_array_equal(np.sort(out.lr.data.ravel()), np.sort(patch.lr.data.ravel()))

    def test_rot180_commutes_with_degrade(self):
        hr = Tensor(make_smooth(16, seed=4)[None, None].astype(np.float64))
        a = degrade(Tensor(dihedral(hr.data, 2, False)), 2).data
        b = dihedral(degrade(hr, 2).data, 2, False)
        np.testing.assert_allclose(a, b, atol=1e-6)

    def test_non_square_rot90_rejected(self):
        arr = np.zeros((1, 1, 4, 6))
        with pytest.raises(ValueError):
            dihedral(arr, 1, False)


class TestSampleBatch:
    def _dataset(self, n=3, size=64):
        from lisn.data import ImageSample

        return Dataset(
            ImageSample(hr=Tensor(make_smooth(size, seed=i)[None, None]), path=f"mem{i}")
            for i in range(n)
        )

    def test_shapes(self):
        batch = sample_batch(self._dataset(), 4, 12, 4, np.random.default_rng(0))
        assert len(batch) == 4
        for p in batch:
            assert p.lr.shape == (1, 1, 12, 12)
            assert p.hr.shape == (1, 1, 48, 48)

    def test_deterministic_under_seed(self):
        a = sample_batch(self._dataset(), 3, 8, 2, np.random.default_rng(11))
        b = sample_batch(self._dataset(), 3, 8, 2, np.random.default_rng(11))
        for pa, pb in zip(a, b):
            assert np.array_equal(pa.hr.data, pb.hr.data)
            assert np.array_equal(pa.lr.data, pb.lr.data)

    def test_lr_constructed_from_hr(self):
        for p in sample_batch(self._dataset(), 4, 8, 2, np.random.default_rng(1)):
            want = bicubic_resize(p.hr, 0.5).data
            assert np.array_equal(p.lr.data, want)

    def test_small_images_skipped_with_warning(self):
        ds = self._dataset(n=2, size=16)
        with pytest.warns(UserWarning, match="smaller than patch"):
            with pytest.raises(ValueError, match="no image"):
                sample_batch(ds, 1, 12, 2, np.random.default_rng(0))

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            sample_batch(Dataset([]), 1, 8, 2, np.random.default_rng(0))


class TestDatasetLoading:
    def test_from_dir_sorted(self, image_dir):
        ds = Dataset.from_dir(image_dir)
        assert len(ds) == 4
        assert [s.path for s in ds] == sorted(s.path for s in ds)

    def test_from_manifest(self, image_dir):
        manifest = image_dir / "list.txt"
        manifest.write_text("img1.png\nimg3.png\n")
        ds = Dataset.from_manifest(manifest)
        assert len(ds) == 2
        assert ds.samples[0].path.endswith("img1.png")

    def test_open_dispatches(self, image_dir):
        assert len(Dataset.open(image_dir)) == 4
        manifest = image_dir / "list.txt"
        manifest.write_text("img0.png\n")
        assert len(Dataset.open(manifest)) == 1

    def test_missing_dir_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            Dataset.from_dir(tmp_path / "nope")


class TestSplit:
    def test_80_20_partition(self):
        paths = [f"img{i:03d}.png" for i in range(100)]
        train, test = split_train_test(paths, seed=0)
        assert len(train) == 80 and len(test) == 20
        assert set(train) | set(test) == set(paths)

    def test_deterministic(self):
        paths = [f"img{i:03d}.png" for i in range(50)]
        assert split_train_test(paths, seed=3) == split_train_test(paths, seed=3)
        assert split_train_test(paths, seed=3) != split_train_test(paths, seed=4)
