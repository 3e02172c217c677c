import asyncio

import numpy as np
import pytest

from utils.errors import DatasetError, MissingFileError
from utils.file_manager import FileManager


class TestFrameNames:
    def test_frame_name(self):
        assert FileManager.frame_name(1, 2) == "frames/cam01_f002.ppm"
        assert FileManager.frame_name(12, 345, "png") == "frames/cam12_f345.png"

    def test_format_from_suffix(self, tmp_path):
        assert FileManager.image_format_for(tmp_path / "a.PNG") == "png"
        assert FileManager.image_format_for(tmp_path / "a.ppm") == "ppm"
        assert FileManager.image_format_for(tmp_path / "a") == "ppm"


class TestImages:
    def test_quantize(self):
        quantized = FileManager.quantize(np.array([0.0, 0.5, 1.0, 1.2, -1.0]))
        assert quantized.tolist() == [0, 128, 255, 255, 0]
        assert quantized.dtype == np.uint8

    def test_ppm_header(self, rng):
        image = rng.uniform(size=(3, 5, 3))
        data = FileManager.encode_image(image, "ppm")
        assert data.startswith(b"P6")
        assert data.endswith(FileManager.quantize(image).tobytes())

    @pytest.mark.parametrize("suffix", [".ppm", ".png"])
    def test_save_and_load(self, rng, tmp_path, suffix):
        image = rng.uniform(size=(6, 4, 3))
        path = asyncio.run(FileManager.save_image(tmp_path / "out" / f"img{suffix}", image))
        loaded = asyncio.run(FileManager.load_image(path))
        assert loaded.shape == (6, 4, 3)
        np.testing.assert_array_equal(loaded, FileManager.quantize(image) / 255.0)

    def test_missing_image(self, tmp_path):
        with pytest.raises(MissingFileError):
            asyncio.run(FileManager.load_image(tmp_path / "absent.ppm"))

    def test_corrupt_image(self, tmp_path):
        (tmp_path / "bad.ppm").write_bytes(b"definitely not an image")
        with pytest.raises(DatasetError):
            asyncio.run(FileManager.load_image(tmp_path / "bad.ppm"))
