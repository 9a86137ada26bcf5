import hashlib

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gpconsist.rng import RngContract, as_generator


class TestRngContract:
    def test_same_path_same_stream(self):
        a = RngContract(5).child("x", 1).generator().random(4)
        b = RngContract(5).child("x", 1).generator().random(4)
        np.testing.assert_array_equal(a, b)

    def test_distinct_paths(self):
        a = RngContract(5).child("x", 1).generator().random(4)
        b = RngContract(5).child("x", 2).generator().random(4)
        c = RngContract(5).child("y", 1).generator().random(4)
        assert not np.array_equal(a, b) and not np.array_equal(a, c)

    def test_distinct_seeds(self):
        assert RngContract(1).generator().random() != RngContract(2).generator().random()

    def test_child_is_nested_path(self):
        assert RngContract(3).child("a").child(2) == RngContract(3, ("a", 2))

    @given(st.integers(0, 2**64 - 1))
    def test_any_u64_seed(self, seed):
        RngContract(seed).generator()

    def test_rejects_negative_seed(self):
        with pytest.raises(ValueError):
            RngContract(-1)

    def test_string_keys_stable_across_processes(self):
        # sha256-based keys, not the salted builtin hash
        digest = hashlib.sha256(b"posterior").digest()
        expected = int.from_bytes(digest[:4], "little") | (1 << 32)
        assert RngContract(0, ("posterior",)).seed_sequence().spawn_key == (expected,)

    def test_as_generator(self):
        g = np.random.default_rng(0)
        assert as_generator(g) is g
        assert isinstance(as_generator(RngContract(1)), np.random.Generator)
        assert as_generator(7).random() == RngContract(7).generator().random()
        with pytest.raises(ValueError):
            as_generator(None)
