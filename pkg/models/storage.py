"""Archive storage accounting."""

from pydantic import BaseModel, Field


class SizeReport(BaseModel):
    """Byte breakdown of a ``.meg4`` archive.

    Section sizes refer to the uncompressed payload and add up to ``payload_bytes``.
    """

    count: int = Field(..., ge=0, description="Gaussians in the archive")
    header_bytes: int = Field(..., ge=0, description="Magic, version and count")
    flags_bytes: int = Field(..., ge=0)
    permutation_bytes: int = Field(..., ge=0, description="Morton permutation, u32 per Gaussian")
    attribute_bytes: dict[str, int] = Field(default_factory=dict, description="FP16 stream size per attribute")
    mlp_bytes: dict[str, int] = Field(default_factory=dict, description="Network section sizes")
    rig_bytes: int = Field(default=0, ge=0, description="Camera rig section")
    payload_bytes: int = Field(..., ge=0, description="Uncompressed payload")
    compressed_bytes: int = Field(..., ge=0, description="DEFLATE-compressed payload")
    checksum_bytes: int = Field(default=4, ge=0)
    total_bytes: int = Field(..., ge=0, description="File size")

    @property
    def attributes_total(self) -> int:
        return sum(self.attribute_bytes.values())

    @property
    def bytes_per_gaussian(self) -> float:
        """FP16 attribute bytes per Gaussian before DEFLATE."""
        return self.attributes_total / self.count if self.count else 0.0

    @property
    def deflate_savings(self) -> float:
        """Fraction of the payload removed by DEFLATE."""
        return 1.0 - self.compressed_bytes / self.payload_bytes if self.payload_bytes else 0.0

    def baseline_bytes(self, params_per_gaussian: int = 161) -> int:
        """FP32 size of the same Gaussians stored with 4D spherical harmonics."""
        return self.count * params_per_gaussian * 4

    def summary(self, baseline_params: int = 161) -> dict:
        baseline = self.baseline_bytes(baseline_params)
        return {
            "count": self.count,
            "total_bytes": self.total_bytes,
            "payload_bytes": self.payload_bytes,
            "compressed_bytes": self.compressed_bytes,
            "attribute_bytes": self.attributes_total,
            "bytes_per_gaussian": self.bytes_per_gaussian,
            "baseline_bytes_per_gaussian": baseline_params * 4,
            "attribute_ratio_vs_baseline": (baseline / self.attributes_total) if self.attributes_total else None,
            "file_ratio_vs_baseline": (baseline / self.total_bytes) if self.total_bytes else None,
            "deflate_savings": self.deflate_savings,
            "mlp_bytes": sum(self.mlp_bytes.values()),
            "rig_bytes": self.rig_bytes,
        }
