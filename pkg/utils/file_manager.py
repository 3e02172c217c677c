"""File management utilities for dataset frames and rendered images."""

import asyncio
import io
from pathlib import Path
from typing import Literal

import aiofiles
import numpy as np
from PIL import Image

from utils.errors import DatasetError, MissingFileError

ImageFormat = Literal["ppm", "png"]

_PIL_FORMATS = {"ppm": "PPM", "png": "PNG"}


class FileManager:
    """Manages image files inside datasets and render outputs."""

    @staticmethod
    def frame_name(camera_index: int, frame: int, image_format: ImageFormat = "ppm") -> str:
        """Frame path relative to the dataset root, as stored in the manifest."""
        return f"frames/cam{camera_index:02d}_f{frame:03d}.{image_format}"

    @staticmethod
    def quantize(image: np.ndarray) -> np.ndarray:
        """8-bit quantization ``round(255 * clamp(v, 0, 1))``."""
        return np.round(255.0 * np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)).astype(np.uint8)

    @staticmethod
    def encode_image(image: np.ndarray, image_format: ImageFormat = "ppm") -> bytes:
        """Encode an (H, W, 3) float image as binary PPM (P6, maxval 255) or PNG."""
        buffer = io.BytesIO()
        Image.fromarray(FileManager.quantize(image), mode="RGB").save(buffer, format=_PIL_FORMATS[image_format])
        return buffer.getvalue()

    @staticmethod
    def decode_image(data: bytes) -> np.ndarray:
        """Decode PPM/PNG bytes into a float64 (H, W, 3) image in [0, 1]."""
        with Image.open(io.BytesIO(data)) as img:
            return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0

    @staticmethod
    def image_format_for(path: Path) -> ImageFormat:
        """Pick the encoding from a file suffix (PPM unless ``.png``)."""
        return "png" if Path(path).suffix.lower() == ".png" else "ppm"

    @staticmethod
    async def save_image(path: Path, image: np.ndarray) -> Path:
        """Save an image to disk.

        Args:
            path: Destination; the suffix selects PPM or PNG
            image: Float image in [0, 1]

        Returns:
            Path where the image was saved
        """
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        data = FileManager.encode_image(image, FileManager.image_format_for(path))

        async with aiofiles.open(path, "wb") as f:
            await f.write(data)

        return path

    @staticmethod
    async def load_image(path: Path) -> np.ndarray:
        """Load an image from disk as float64 in [0, 1].

        Raises:
            MissingFileError: If the file does not exist
            DatasetError: If the file is not a readable image
        """
        path = Path(path)
        if not path.exists():
            raise MissingFileError(f"image not found: {path}")

        async with aiofiles.open(path, "rb") as f:
            data = await f.read()

        try:
            return await asyncio.to_thread(FileManager.decode_image, data)
        except OSError as e:
            raise DatasetError(f"cannot decode image {path}: {e}") from e
