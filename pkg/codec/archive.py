"""Model files: compressed ``.meg4`` archives and full-precision ``.npz`` checkpoints.

Archive layout (all integers little-endian)::

    "MEG4" | version u16 | count u64 | DEFLATE(payload) | CRC32(payload) u32

The payload is raw DEFLATE (no zlib or zip wrapper) of::

    flags u8                      bit 0: deformation predictor, bit 1: colour predictor,
                                  bit 2: camera rig
    permutation u32 * count       original row of each Morton-sorted Gaussian
    attribute streams             mu4, q_l, q_r, s4, c_dc, o_logit; FP16 codes of the
                                  sorted rows, delta-coded per channel
    deformation section           u8 frequencies (mu, view, time), then 4 networks
    colour section                1 network
    rig section                   u32 length, then the cameras as UTF-8 JSON

Each network is ``u8 layer count`` followed per layer by
``u32 in | u32 out | u8 activation (0 none, 1 relu) | FP16 weights (in*out) | FP16 bias``.
"""

from __future__ import annotations

import io
import json
import struct
import zlib
from pathlib import Path
from typing import Optional, Union

import numpy as np
import structlog
from pydantic import ValidationError

from codec.delta import delta_decode, delta_encode, morton_order
from codec.fp16 import from_fp16, to_fp16
from gaussians.cloud import ATTRIBUTE_WIDTHS, ATTRIBUTES, GaussianCloud
from gaussians.color import ColorPredictor
from gaussians.deform import DeformationPredictor
from gaussians.mlp import DenseLayer, Mlp
from gaussians.model import SplatModel
from models.dataset import CameraSpec
from models.storage import SizeReport
from utils.errors import (
    ArchiveChecksumError,
    ArchiveFormatError,
    ArchiveMagicError,
    ArchiveVersionError,
    MissingFileError,
)

logger = structlog.get_logger(__name__)

MAGIC = b"MEG4"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sHQ")
CHECKSUM = struct.Struct("<I")
LAYER_HEADER = struct.Struct("<IIB")
DEFLATE_LEVEL = 9
NPZ_MAGIC = b"PK\x03\x04"

FLAG_DEFORMATION = 1
FLAG_COLOR = 2
FLAG_RIG = 4
RIG_LENGTH = struct.Struct("<I")
_ACTIVATIONS = {"none": 0, "relu": 1}
_ACTIVATION_NAMES = {code: name for name, code in _ACTIVATIONS.items()}

PathLike = Union[str, Path]


def _rig_json(rig: list[CameraSpec]) -> bytes:
    return json.dumps([camera.model_dump(mode="json") for camera in rig]).encode("utf-8")


def _rig_from_json(data: bytes) -> list[CameraSpec]:
    try:
        return [CameraSpec(**camera) for camera in json.loads(data.decode("utf-8"))]
    except (UnicodeDecodeError, json.JSONDecodeError, TypeError, ValidationError) as e:
        raise ArchiveFormatError(f"malformed camera rig: {e}") from e


def _encode_mlp(mlp: Mlp) -> bytes:
    out = bytearray(struct.pack("<B", len(mlp.layers)))
    for layer in mlp.layers:
        out += LAYER_HEADER.pack(layer.in_dim, layer.out_dim, _ACTIVATIONS[layer.activation])
        out += to_fp16(layer.weight).astype("<u2").tobytes()
        out += to_fp16(layer.bias).astype("<u2").tobytes()
    return bytes(out)


class _Reader:
    """Sequential reader over the decompressed payload."""

    def __init__(self, data: bytes) -> None:
        self.data = data
        self.offset = 0

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise ArchiveFormatError(
                f"payload truncated: need {size} bytes at offset {self.offset}, have {len(self.data) - self.offset}"
            )
        chunk = self.data[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: struct.Struct) -> tuple:
        return fmt.unpack(self.take(fmt.size))

    def u8(self) -> int:
        return self.take(1)[0]

    def fp16(self, count: int) -> np.ndarray:
        return from_fp16(np.frombuffer(self.take(2 * count), dtype="<u2"))

    def rig(self) -> list[CameraSpec]:
        (length,) = self.unpack(RIG_LENGTH)
        return _rig_from_json(self.take(length))

    def mlp(self) -> Mlp:
        layers = []
        for _ in range(self.u8()):
            in_dim, out_dim, activation = self.unpack(LAYER_HEADER)
            if activation not in _ACTIVATION_NAMES:
                raise ArchiveFormatError(f"unknown activation code {activation}")
            weight = self.fp16(in_dim * out_dim).reshape(in_dim, out_dim)
            bias = self.fp16(out_dim)
            layers.append(DenseLayer(weight, bias, _ACTIVATION_NAMES[activation]))
        try:
            return Mlp(layers)
        except Exception as e:
            raise ArchiveFormatError(f"inconsistent network section: {e}") from e


def _build_payload(model: SplatModel) -> tuple[bytes, dict[str, int], dict[str, int], int, int]:
    cloud = model.cloud
    flags = (
        (FLAG_DEFORMATION if model.deformation is not None else 0)
        | (FLAG_COLOR if model.color is not None else 0)
        | (FLAG_RIG if model.rig else 0)
    )
    order = morton_order(cloud.mu4) if cloud.count else np.zeros(0, dtype=np.int64)
    payload = bytearray(struct.pack("<B", flags))
    payload += order.astype("<u4").tobytes()
    permutation_bytes = 4 * cloud.count

    attribute_bytes = {}
    for name in ATTRIBUTES:
        values = getattr(cloud, name)[order].reshape(-1)
        stream = delta_encode(to_fp16(values), ATTRIBUTE_WIDTHS[name])
        attribute_bytes[name] = len(stream)
        payload += stream

    mlp_bytes = {}
    if model.deformation is not None:
        theta = model.deformation
        section = struct.pack("<BBB", theta.mu_frequencies, theta.view_frequencies, theta.time_frequencies)
        section += b"".join(_encode_mlp(net) for net in theta.networks)
        mlp_bytes["deformation"] = len(section)
        payload += section
    if model.color is not None:
        section = _encode_mlp(model.color.phi)
        mlp_bytes["color"] = len(section)
        payload += section
    rig_bytes = 0
    if model.rig:
        rig = _rig_json(model.rig)
        section = RIG_LENGTH.pack(len(rig)) + rig
        rig_bytes = len(section)
        payload += section
    return bytes(payload), attribute_bytes, mlp_bytes, permutation_bytes, rig_bytes


def encode_model(model: SplatModel) -> bytes:
    """Serialize a model to archive bytes (deterministic)."""
    payload, *_ = _build_payload(model)
    compressor = zlib.compressobj(DEFLATE_LEVEL, zlib.DEFLATED, -15)
    compressed = compressor.compress(payload) + compressor.flush()
    header = HEADER.pack(MAGIC, FORMAT_VERSION, model.cloud.count)
    return header + compressed + CHECKSUM.pack(zlib.crc32(payload) & 0xFFFFFFFF)


def _open_payload(data: bytes) -> tuple[int, bytes, int]:
    if len(data) < HEADER.size + CHECKSUM.size:
        if not data.startswith(MAGIC):
            raise ArchiveMagicError("file is too short to be a model archive")
        raise ArchiveFormatError(f"archive of {len(data)} bytes is truncated")
    magic, version, count = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ArchiveMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise ArchiveVersionError(f"unsupported archive version {version} (supported: {FORMAT_VERSION})")
    body = data[HEADER.size : -CHECKSUM.size]
    (expected_crc,) = CHECKSUM.unpack(data[-CHECKSUM.size :])
    try:
        decompressor = zlib.decompressobj(-15)
        payload = decompressor.decompress(body) + decompressor.flush()
    except zlib.error as e:
        raise ArchiveFormatError(f"payload does not inflate: {e}") from e
    if not decompressor.eof:
        raise ArchiveFormatError("payload stream is truncated")
    if zlib.crc32(payload) & 0xFFFFFFFF != expected_crc:
        raise ArchiveChecksumError("payload CRC32 does not match")
    return count, payload, len(body)


def decode_model(data: bytes) -> SplatModel:
    """Parse archive bytes.

    Raises:
        ArchiveMagicError, ArchiveVersionError, ArchiveChecksumError, ArchiveFormatError
    """
    count, payload, _ = _open_payload(data)
    reader = _Reader(payload)
    flags = reader.u8()
    order = np.frombuffer(reader.take(4 * count), dtype="<u4").astype(np.int64)
    if count and not np.array_equal(np.sort(order), np.arange(count)):
        raise ArchiveFormatError("permutation is not a permutation of the Gaussian rows")

    arrays = {}
    for name in ATTRIBUTES:
        width = ATTRIBUTE_WIDTHS[name]
        codes = delta_decode(reader.take(2 * width * count), width)
        restored = np.empty((count, width))
        restored[order] = from_fp16(codes).reshape(count, width)
        arrays[name] = restored
    cloud = GaussianCloud(**arrays)

    deformation: Optional[DeformationPredictor] = None
    if flags & FLAG_DEFORMATION:
        mu_f, view_f, time_f = reader.unpack(struct.Struct("<BBB"))
        networks = [reader.mlp() for _ in range(4)]
        try:
            deformation = DeformationPredictor(
                mu_frequencies=mu_f, view_frequencies=view_f, time_frequencies=time_f, networks=networks
            )
        except Exception as e:
            raise ArchiveFormatError(f"inconsistent deformation section: {e}") from e
    color: Optional[ColorPredictor] = None
    if flags & FLAG_COLOR:
        phi = reader.mlp()
        try:
            color = ColorPredictor(phi=phi)
        except Exception as e:
            raise ArchiveFormatError(f"inconsistent colour section: {e}") from e
    rig = reader.rig() if flags & FLAG_RIG else []
    if reader.offset != len(payload):
        raise ArchiveFormatError(f"{len(payload) - reader.offset} trailing bytes after the last section")
    return SplatModel(cloud=cloud, deformation=deformation, color=color, rig=rig)


def _read_bytes(path: PathLike) -> bytes:
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"model file not found: {path}")
    return path.read_bytes()


def save_model(model: SplatModel, path: PathLike) -> bytes:
    """Write a ``.meg4`` archive and return its bytes."""
    data = encode_model(model)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)
    logger.info("archive_saved", path=str(path), count=model.count, bytes=len(data))
    return data


def load_model(path: PathLike) -> SplatModel:
    """Read a ``.meg4`` archive."""
    return decode_model(_read_bytes(path))


def size_report(archive: Union[bytes, PathLike]) -> SizeReport:
    """Per-section byte breakdown of an archive.

    Raises:
        ArchiveError: If the archive is corrupt
    """
    data = archive if isinstance(archive, bytes) else _read_bytes(archive)
    model = decode_model(data)
    payload, attribute_bytes, mlp_bytes, permutation_bytes, rig_bytes = _build_payload(model)
    _, stored_payload, compressed = _open_payload(data)
    if len(payload) != len(stored_payload):
        raise ArchiveFormatError("payload layout does not match its sections")
    return SizeReport(
        count=model.count,
        header_bytes=HEADER.size,
        flags_bytes=1,
        permutation_bytes=permutation_bytes,
        attribute_bytes=attribute_bytes,
        mlp_bytes=mlp_bytes,
        rig_bytes=rig_bytes,
        payload_bytes=len(stored_payload),
        compressed_bytes=compressed,
        checksum_bytes=CHECKSUM.size,
        total_bytes=len(data),
    )


def quantize_model(model: SplatModel) -> SplatModel:
    """The model exactly as an archive round trip would return it."""
    return decode_model(encode_model(model))


def _mlp_arrays(prefix: str, mlp: Mlp) -> dict[str, np.ndarray]:
    arrays = {f"{prefix}_activations": np.array([_ACTIVATIONS[layer.activation] for layer in mlp.layers])}
    for i, layer in enumerate(mlp.layers):
        arrays[f"{prefix}_w{i}"] = layer.weight
        arrays[f"{prefix}_b{i}"] = layer.bias
    return arrays


def _mlp_from_arrays(prefix: str, arrays) -> Mlp:
    activations = arrays[f"{prefix}_activations"]
    return Mlp(
        [
            DenseLayer(
                np.array(arrays[f"{prefix}_w{i}"]), np.array(arrays[f"{prefix}_b{i}"]), _ACTIVATION_NAMES[int(code)]
            )
            for i, code in enumerate(activations)
        ]
    )


def save_checkpoint(model: SplatModel, path: PathLike) -> None:
    """Write every parameter at full precision to an ``.npz`` file."""
    arrays: dict[str, np.ndarray] = dict(model.cloud.arrays())
    if model.deformation is not None:
        theta = model.deformation
        arrays["theta_frequencies"] = np.array(
            [theta.mu_frequencies, theta.view_frequencies, theta.time_frequencies]
        )
        for k, net in enumerate(theta.networks):
            arrays.update(_mlp_arrays(f"theta{k}", net))
    if model.color is not None:
        arrays.update(_mlp_arrays("phi", model.color.phi))
    if model.rig:
        arrays["rig"] = np.frombuffer(_rig_json(model.rig), dtype=np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buffer = io.BytesIO()
    np.savez(buffer, **arrays)
    path.write_bytes(buffer.getvalue())
    logger.info("checkpoint_saved", path=str(path), count=model.count)


def load_checkpoint(path: PathLike) -> SplatModel:
    """Read an ``.npz`` checkpoint.

    Raises:
        ArchiveFormatError: If required arrays are missing or inconsistent
    """
    data = _read_bytes(path)
    try:
        with np.load(io.BytesIO(data), allow_pickle=False) as arrays:
            cloud = GaussianCloud(**{name: np.array(arrays[name]) for name in ATTRIBUTES})
            deformation = None
            if "theta_frequencies" in arrays.files:
                mu_f, view_f, time_f = (int(v) for v in arrays["theta_frequencies"])
                deformation = DeformationPredictor(
                    mu_frequencies=mu_f,
                    view_frequencies=view_f,
                    time_frequencies=time_f,
                    networks=[_mlp_from_arrays(f"theta{k}", arrays) for k in range(4)],
                )
            color = ColorPredictor(phi=_mlp_from_arrays("phi", arrays)) if "phi_activations" in arrays.files else None
            rig = _rig_from_json(arrays["rig"].tobytes()) if "rig" in arrays.files else []
    except (KeyError, ValueError, OSError) as e:
        raise ArchiveFormatError(f"malformed checkpoint {path}: {e}") from e
    return SplatModel(cloud=cloud, deformation=deformation, color=color, rig=rig)


def load_any(path: PathLike) -> SplatModel:
    """Load either format, chosen by the leading magic bytes.

    Raises:
        ArchiveMagicError: If the file is neither an archive nor a checkpoint
    """
    data = _read_bytes(path)
    if data.startswith(MAGIC):
        return decode_model(data)
    if data.startswith(NPZ_MAGIC):
        return load_checkpoint(path)
    raise ArchiveMagicError(f"{path} is neither a .meg4 archive nor an .npz checkpoint")
