import struct

import numpy as np
import pytest

from codec.archive import (
    HEADER,
    MAGIC,
    decode_model,
    encode_model,
    load_any,
    load_checkpoint,
    load_model,
    quantize_model,
    save_checkpoint,
    save_model,
    size_report,
)
from codec.fp16 import round_fp16
from gaussians.cloud import ATTRIBUTES, GaussianCloud
from gaussians.color import ColorPredictor
from gaussians.deform import DeformationPredictor
from gaussians.mlp import Mlp
from gaussians.model import SplatModel
from render.camera import look_at
from utils.errors import (
    ArchiveChecksumError,
    ArchiveFormatError,
    ArchiveMagicError,
    ArchiveVersionError,
    InvalidParameterError,
    MissingFileError,
)


def full_model(rng, count: int = 20) -> SplatModel:
    deformation = DeformationPredictor(rng, hidden=8, mu_frequencies=2, view_frequencies=3, time_frequencies=4)
    color = ColorPredictor(phi=Mlp.build([10, 8, 3], rng, zero_last=False))
    return SplatModel(cloud=GaussianCloud.random(count, rng), deformation=deformation, color=color)


def assert_cloud_is_fp16_of(decoded: GaussianCloud, original: GaussianCloud) -> None:
    for name in ATTRIBUTES:
        np.testing.assert_array_equal(getattr(decoded, name), round_fp16(getattr(original, name)))


class TestArchiveRoundTrip:
    def test_empty_model(self):
        decoded = decode_model(encode_model(SplatModel()))
        assert decoded.count == 0
        assert decoded.deformation is None and decoded.color is None

    def test_thousand_gaussians_bit_exact(self, rng):
        cloud = GaussianCloud.random(1000, rng)
        assert_cloud_is_fp16_of(decode_model(encode_model(SplatModel(cloud=cloud))).cloud, cloud)

    def test_many_small_clouds(self, rng):
        for _ in range(100):
            cloud = GaussianCloud.random(int(rng.integers(0, 12)), rng)
            assert_cloud_is_fp16_of(decode_model(encode_model(SplatModel(cloud=cloud))).cloud, cloud)

    def test_predictors(self, rng):
        model = full_model(rng)
        decoded = decode_model(encode_model(model))
        assert (decoded.deformation.mu_frequencies, decoded.deformation.view_frequencies) == (2, 3)
        assert decoded.deformation.time_frequencies == 4
        for a, b in zip(decoded.deformation.parameters(), model.deformation.parameters()):
            np.testing.assert_array_equal(a, round_fp16(b))
        for a, b in zip(decoded.color.parameters(), model.color.parameters()):
            np.testing.assert_array_equal(a, round_fp16(b))
        assert [layer.activation for layer in decoded.deformation.fusion.layers] == ["relu", "relu", "none"]

    def test_deterministic(self, rng):
        model = full_model(rng)
        assert encode_model(model) == encode_model(model.copy())

    def test_quantize_is_idempotent(self, rng):
        once = quantize_model(full_model(rng))
        assert encode_model(quantize_model(once)) == encode_model(once)

    def test_nan_cannot_be_stored(self, rng):
        cloud = GaussianCloud.random(3, rng)
        cloud.s4[1, 2] = np.nan
        with pytest.raises(InvalidParameterError):
            encode_model(SplatModel(cloud=cloud))


class TestArchiveErrors:
    @pytest.fixture
    def data(self, rng) -> bytes:
        return encode_model(SplatModel(cloud=GaussianCloud.random(10, rng)))

    def test_bad_magic(self, data):
        with pytest.raises(ArchiveMagicError):
            decode_model(b"NOPE" + data[4:])

    def test_short_garbage(self):
        with pytest.raises(ArchiveMagicError):
            decode_model(b"abc")

    def test_bad_version(self, data):
        with pytest.raises(ArchiveVersionError):
            decode_model(MAGIC + struct.pack("<H", 2) + data[6:])

    def test_corrupt_checksum(self, data):
        corrupted = data[:-4] + bytes(b ^ 0xFF for b in data[-4:])
        with pytest.raises(ArchiveChecksumError):
            decode_model(corrupted)

    def test_truncated(self, data):
        with pytest.raises(ArchiveFormatError):
            decode_model(data[: HEADER.size + 8] + data[-4:])


class TestSizeReport:
    def test_forty_bytes_per_gaussian(self, rng):
        data = encode_model(SplatModel(cloud=GaussianCloud.random(500, rng)))
        report = size_report(data)
        assert report.count == 500
        assert report.bytes_per_gaussian == 40.0
        assert report.attribute_bytes["mu4"] == 500 * 8
        assert report.permutation_bytes == 2000
        assert report.total_bytes == len(data)
        assert report.header_bytes + report.compressed_bytes + report.checksum_bytes == len(data)
        assert report.payload_bytes == 1 + 2000 + 500 * 40

    def test_summary_against_reference_layout(self, rng):
        report = size_report(encode_model(SplatModel(cloud=GaussianCloud.random(100, rng))))
        summary = report.summary(baseline_params=161)
        assert summary["baseline_bytes_per_gaussian"] == 644
        assert summary["attribute_ratio_vs_baseline"] == pytest.approx(644 / 40)

    def test_network_sections(self, rng):
        report = size_report(encode_model(full_model(rng)))
        assert set(report.mlp_bytes) == {"deformation", "color"}
        # 1 layer-count byte, then 9-byte header, 10x8 + 8 weights, 9-byte header, 8x3 + 3 weights
        assert report.mlp_bytes["color"] == 1 + 9 + 2 * 88 + 9 + 2 * 27


class TestFiles:
    def test_save_and_load_archive(self, rng, tmp_path):
        model = full_model(rng)
        path = tmp_path / "nested" / "model.meg4"
        data = save_model(model, path)
        assert path.read_bytes() == data
        assert_cloud_is_fp16_of(load_model(path).cloud, model.cloud)

    def test_checkpoint_is_full_precision(self, rng, tmp_path):
        model = full_model(rng)
        save_checkpoint(model, tmp_path / "model.npz")
        loaded = load_checkpoint(tmp_path / "model.npz")
        for name in ATTRIBUTES:
            np.testing.assert_array_equal(getattr(loaded.cloud, name), getattr(model.cloud, name))
        for a, b in zip(loaded.deformation.parameters(), model.deformation.parameters()):
            np.testing.assert_array_equal(a, b)
        assert loaded.color.phi.shapes == model.color.phi.shapes

    def test_load_any_sniffs_format(self, rng, tmp_path):
        model = SplatModel(cloud=GaussianCloud.random(4, rng))
        save_model(model, tmp_path / "a.bin")
        save_checkpoint(model, tmp_path / "b.bin")
        assert load_any(tmp_path / "a.bin").count == 4
        np.testing.assert_array_equal(load_any(tmp_path / "b.bin").cloud.mu4, model.cloud.mu4)
        (tmp_path / "c.bin").write_bytes(b"not a model at all")
        with pytest.raises(ArchiveMagicError):
            load_any(tmp_path / "c.bin")

    def test_missing_file(self, tmp_path):
        with pytest.raises(MissingFileError):
            load_model(tmp_path / "absent.meg4")


class TestCameraRig:
    @pytest.fixture
    def rigged(self, rng) -> SplatModel:
        cameras = [
            look_at(np.array([4.0 * np.cos(a), 4.0 * np.sin(a), 1.0]), np.zeros(3), 24, 16, fx=20.0)
            for a in (0.0, 2.0)
        ]
        model = full_model(rng)
        model.rig = [camera.to_spec() for camera in cameras]
        return model

    def test_archive_keeps_rig(self, rigged):
        data = encode_model(rigged)
        assert decode_model(data).rig == rigged.rig
        report = size_report(data)
        assert report.rig_bytes > 4
        assert report.payload_bytes == (
            report.flags_bytes + report.permutation_bytes + report.attributes_total
            + sum(report.mlp_bytes.values()) + report.rig_bytes
        )

    def test_checkpoint_keeps_rig(self, rigged, tmp_path):
        save_checkpoint(rigged, tmp_path / "model.npz")
        assert load_checkpoint(tmp_path / "model.npz").rig == rigged.rig

    def test_no_rig_by_default(self, rng):
        model = SplatModel(cloud=GaussianCloud.random(3, rng))
        assert decode_model(encode_model(model)).rig == []
        assert size_report(encode_model(model)).rig_bytes == 0

    def test_malformed_rig(self, rng, tmp_path):
        arrays = GaussianCloud.random(2, rng).arrays()
        np.savez(tmp_path / "bad.npz", rig=np.frombuffer(b"[{\"fx\": 1}]", dtype=np.uint8), **arrays)
        with pytest.raises(ArchiveFormatError):
            load_checkpoint(tmp_path / "bad.npz")
