from enum import Enum
from typing import Any

import numpy as np
import pytest

from wedgenet.hash import array_checksum, file_checksum, get_digest, get_hash
from wedgenet.seeding import make_generator, split_counts


def test_hash_order():
    assert get_hash([1, 2, 3]) != get_hash([3, 2, 1])


class TestObject:
    def __init__(self, foo: Any):
        self.foo = foo


class OtherTestObject:
    def __init__(self, foo: Any):
        self.foo = foo


class Color(Enum):
    RED = 1
    BLUE = 2


@pytest.mark.parametrize('test_obj_1, test_obj_2, test_obj_3',
                         [
                             [dict(a=1, b=2), dict(b=2, a=1), dict(a=2, b=1)],
                             [TestObject(1), TestObject(1), OtherTestObject(1)],
                             [TestObject(None), TestObject(None), TestObject('None')],
                             [np.arange(4.0), np.arange(4.0), np.arange(4.0).reshape(2, 2)],
                             [np.arange(4.0), np.arange(4.0), np.arange(4)],
                             [np.float64(0.5), 0.5, np.float64(0.25)],
                             [Color.RED, Color.RED, Color.BLUE],
                         ])
def test_hash_invariants(test_obj_1, test_obj_2, test_obj_3):
    hash_1 = get_hash([test_obj_1])
    hash_2 = get_hash([test_obj_2])
    hash_3 = get_hash([test_obj_3])
    assert hash_1 == hash_2 != hash_3


def test_array_checksum_sees_values():
    x = np.zeros(5)
    y = x.copy()
    y[3] = 1e-300
    assert array_checksum(x) != array_checksum(y)


def test_digest_is_fixed_length():
    assert len(get_digest(['a'])) == len(get_digest([list(range(100))])) == 64


def test_file_checksum(tmp_path):
    a, b = tmp_path / 'a.txt', tmp_path / 'b.txt'
    a.write_text('1,2\n')
    b.write_text('1,2\n')
    assert file_checksum(a) == file_checksum(b)
    b.write_text('1,3\n')
    assert file_checksum(a) != file_checksum(b)


def test_streams_are_reproducible_and_distinct():
    first = make_generator(7, 'probes', 0).standard_normal(4)
    again = make_generator(7, 'probes', 0).standard_normal(4)
    other_key = make_generator(7, 'probes', 1).standard_normal(4)
    other_stream = make_generator(7, 'restarts', 0).standard_normal(4)
    assert np.array_equal(first, again)
    assert not np.array_equal(first, other_key)
    assert not np.array_equal(first, other_stream)


@pytest.mark.parametrize('total, parts, expected', [
    (10, 3, [4, 3, 3]),
    (2, 4, [1, 1]),
    (0, 4, [0]),
])
def test_split_counts(total, parts, expected):
    assert list(split_counts(total, parts)) == expected
