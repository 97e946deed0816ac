import numpy as np
import pytest
import torch
from PIL import Image

from noisedirs.data import (
    Factor,
    FactorSpec,
    default_factor_spec,
    gen_synthetic_factors,
    load_image_folder,
    load_latent_png,
    save_latent_png,
    to_uint8,
)
from noisedirs.errors import IngestionError


class TestSyntheticFactors:
    def test_factor_independence(self):
        spec = default_factor_spec(count=512, seed=0)
        _, labels = gen_synthetic_factors(spec)
        rho = labels.correlation()
        assert abs(rho[0, 1]) < 0.1

    def test_deterministic(self):
        spec = default_factor_spec(count=64, seed=3)
        a, la = gen_synthetic_factors(spec)
        b, lb = gen_synthetic_factors(spec)
        assert torch.equal(a, b)
        assert np.array_equal(la.values, lb.values)

    def test_shapes_and_range(self):
        images, labels = gen_synthetic_factors(default_factor_spec(count=32, seed=0))
        assert images.shape == (32, 1, 8, 8)
        assert float(images.min()) >= -1.0
        assert float(images.max()) <= 1.0
        assert labels.binary.shape == (32, 2)

    def test_degenerate_range_rejected(self):
        with pytest.raises(ValueError):
            Factor("x", 1.0, 1.0, "x_pos")

    def test_empty_factors_rejected(self):
        with pytest.raises(ValueError):
            FactorSpec(factors=[], count=8)

    def test_single_factor_two_values_separates(self):
        # a probe trained on the rendered dataset separates the two values
        from noisedirs.evaluation import probe_accuracy, train_factor_probe

        spec = FactorSpec(factors=[Factor("position", 2.0, 5.0, "x_pos")], count=128, seed=0)
        images, labels = gen_synthetic_factors(spec)
        probe = train_factor_probe(images, labels.binary, labels.names, seed=0)
        acc = probe_accuracy(probe, images, labels.binary)
        assert acc[0] > 0.95

    def test_rendering_responds_to_each_factor(self):
        spec = default_factor_spec(count=1, seed=0)
        lo = gen_synthetic_factors(FactorSpec(spec.factors, count=256, seed=1))[0]
        # position moves mass horizontally; brightness changes max intensity
        imgs, labels = gen_synthetic_factors(FactorSpec(spec.factors, count=256, seed=2))
        cols = torch.argmax(imgs.amax(dim=2)[:, 0, :], dim=1).numpy()
        assert np.corrcoef(cols, labels.values[:, 0])[0, 1] > 0.9
        peaks = imgs.amax(dim=(1, 2, 3)).numpy()
        assert np.corrcoef(peaks, labels.values[:, 1])[0, 1] > 0.9


class TestFolderIngestion:
    def _make_folder(self, tmp_path, n=12, size=16):
        rng = np.random.default_rng(0)
        for i in range(n):
            arr = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
            Image.fromarray(arr, "RGB").save(tmp_path / f"img_{i:03d}.png")
        return tmp_path

    def test_deterministic_subsample(self, tmp_path):
        folder = self._make_folder(tmp_path)
        a = load_image_folder(folder, (3, 8, 8), limit=6, seed=0)
        b = load_image_folder(folder, (3, 8, 8), limit=6, seed=0)
        assert torch.equal(a, b)
        c = load_image_folder(folder, (3, 8, 8), limit=6, seed=1)
        assert not torch.equal(a, c)

    def test_all_black_normalizes_to_minus_one(self, tmp_path):
        Image.fromarray(np.zeros((8, 8), dtype=np.uint8), "L").save(tmp_path / "black.png")
        out = load_image_folder(tmp_path, (1, 8, 8), limit=1, seed=0)
        assert torch.all(out == -1.0)

    def test_various_limits_accepted(self, tmp_path):
        folder = self._make_folder(tmp_path, n=24)
        for n in (1, 10, 24):
            out = load_image_folder(folder, (3, 8, 8), limit=n, seed=0)
            assert out.shape == (n, 3, 8, 8)

    def test_insufficient_images_rejected(self, tmp_path):
        folder = self._make_folder(tmp_path, n=3)
        with pytest.raises(IngestionError):
            load_image_folder(folder, (3, 8, 8), limit=5, seed=0)

    def test_unreadable_files_skipped_with_threshold(self, tmp_path):
        folder = self._make_folder(tmp_path, n=6)
        (tmp_path / "broken.png").write_bytes(b"not a png")
        out = load_image_folder(folder, (3, 8, 8), limit=6, seed=0)
        assert out.shape[0] == 6
        for i in range(20):
            (tmp_path / f"bad_{i}.png").write_bytes(b"junk")
        with pytest.raises(IngestionError):
            load_image_folder(folder, (3, 8, 8), limit=6, seed=0, skip_threshold=4)

    def test_sources_never_mutated(self, tmp_path):
        folder = self._make_folder(tmp_path, n=4)
        payloads = {p: p.read_bytes() for p in folder.iterdir()}
        load_image_folder(folder, (3, 8, 8), limit=4, seed=0)
        for p, payload in payloads.items():
            assert p.read_bytes() == payload

    def test_missing_folder(self, tmp_path):
        with pytest.raises(IngestionError):
            load_image_folder(tmp_path / "nope", (3, 8, 8), limit=1)


class TestPngRoundTrip:
    def test_uint8_mapping(self):
        latent = torch.tensor([[[-1.0, 0.0], [1.0, 0.5]]])
        arr = to_uint8(latent)
        assert arr.dtype == np.uint8
        assert arr[0, 0] == 0 and arr[1, 0] == 255

    def test_save_load_close(self, tmp_path):
        gen = torch.Generator().manual_seed(0)
        latent = torch.randn(1, 8, 8, generator=gen).clamp(-1, 1)
        save_latent_png(latent, tmp_path / "x.png")
        back = load_latent_png(tmp_path / "x.png", (1, 8, 8))
        assert float((back - latent).abs().max()) <= (2.0 / 255.0)
