import numpy as np
import pytest

from codec.fp16 import FP16_MAX, encode_fp16, from_fp16, round_fp16, to_fp16
from utils.errors import InvalidParameterError


class TestFp16:
    def test_known_codes(self):
        assert int(to_fp16(1.0)) == 0x3C00
        assert int(to_fp16(-0.0)) == 0x8000
        assert int(to_fp16(0.0)) == 0x0000
        assert int(to_fp16(-2.0)) == 0xC000

    def test_saturates_instead_of_overflowing(self):
        codes, saturated = encode_fp16(np.array([70000.0, -1e9, 1.0]))
        assert codes.tolist() == [0x7BFF, 0xFBFF, 0x3C00]
        assert saturated == 2
        assert from_fp16(0x7BFF) == FP16_MAX

    def test_nan_rejected(self):
        with pytest.raises(InvalidParameterError) as err:
            to_fp16(np.array([0.0, np.nan]))
        assert err.value.index == 1

    def test_representable_values_are_exact(self):
        values = np.array([0.5, -0.25, 1024.0, 2.0**-14, 65504.0])
        np.testing.assert_array_equal(round_fp16(values), values)

    def test_relative_rounding_error(self, rng):
        values = rng.uniform(-100.0, 100.0, size=1000)
        values = values[np.abs(values) > 1e-3]
        error = np.abs(round_fp16(values) - values) / np.abs(values)
        assert error.max() <= 2.0**-11

    def test_keeps_shape(self, rng):
        assert to_fp16(rng.normal(size=(3, 4))).shape == (3, 4)
