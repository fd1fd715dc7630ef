import zlib

import pytest
from hypothesis import given
from hypothesis import strategies as st

from mvdr.hashing import crc32, crc64, derive_seed, stable_hash64


class TestStableHash64:
    # frozen snapshots: checkpoint and index formats depend on these
    SNAPSHOTS = {
        "": 13020603013274838756,
        "a": 3405396810240292928,
        "what is": 18313223905901516257,
        "doc-0017": 8415821972639571992,
    }

    def test_snapshots(self):
        for key, expected in self.SNAPSHOTS.items():
            assert stable_hash64(key) == expected

    @given(st.text(max_size=64))
    def test_range(self, key):
        assert 0 <= stable_hash64(key) < 2**64

    def test_distinct_keys_differ(self):
        seen = {stable_hash64(f"tok{i}") for i in range(1000)}
        assert len(seen) == 1000


class TestDeriveSeed:
    def test_is_xor_with_label_hash(self):
        assert derive_seed(123, "init") == 123 ^ stable_hash64("init")

    def test_involution(self):
        s = derive_seed(987654321, "train")
        assert derive_seed(s, "train") == 987654321

    def test_labels_decorrelate(self):
        assert derive_seed(0, "a") != derive_seed(0, "b")

    @given(st.integers(min_value=0, max_value=2**64 - 1), st.text(max_size=32))
    def test_range(self, seed, label):
        assert 0 <= derive_seed(seed, label) < 2**64


class TestCrc64:
    def test_catalog_check_value(self):
        # standard check input for the XZ polynomial
        assert crc64(b"123456789") == 0x995DC9BBDF1939FA

    def test_empty(self):
        assert crc64(b"") == 0

    @given(st.binary(max_size=256), st.integers(min_value=0, max_value=256))
    def test_incremental_equals_one_shot(self, data, cut):
        cut = min(cut, len(data))
        assert crc64(data[cut:], crc64(data[:cut])) == crc64(data)

    def test_detects_single_bit_flip(self):
        data = bytearray(b"multi view index payload")
        reference = crc64(bytes(data))
        data[5] ^= 0x20
        assert crc64(bytes(data)) != reference


class TestCrc32:
    @given(st.binary(max_size=256))
    def test_matches_zlib(self, data):
        assert crc32(data) == zlib.crc32(data)

    def test_incremental(self):
        data = b"model checkpoint bytes"
        assert crc32(data[8:], crc32(data[:8])) == crc32(data)


@pytest.mark.parametrize("bad", [b"12345678", b"1234567890"])
def test_catalog_value_is_input_specific(bad):
    assert crc64(bad) != 0x995DC9BBDF1939FA
