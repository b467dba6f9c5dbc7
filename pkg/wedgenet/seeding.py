""" Seeded random streams.

A master seed is expanded with ``numpy.random.SeedSequence`` and every consumer gets its own
counter-based ``Philox`` stream, addressed by a tuple of integer keys. Streams with the same
(seed, keys) are identical regardless of which thread draws from them.
"""
from __future__ import annotations

import zlib
from typing import Sequence

import numpy as np

# stable integer tags for named consumers
_STREAM_TAGS = {
    'subsample': 1,
    'probes': 2,
    'restarts': 3,
    'arrangement': 4,
    'isometry': 5,
    'data': 6,
}


def _tag(name: str) -> int:
    if name in _STREAM_TAGS:
        return _STREAM_TAGS[name]
    return zlib.crc32(name.encode('utf-8'))


def make_generator(seed: int | None, stream: str, *keys: int) -> np.random.Generator:
    seed_seq = np.random.SeedSequence(entropy=0 if seed is None else int(seed),
                                      spawn_key=(_tag(stream), *(int(k) for k in keys)))
    return np.random.Generator(np.random.Philox(seed_seq))


def spawn_generators(seed: int | None, stream: str, count: int) -> list[np.random.Generator]:
    return [make_generator(seed, stream, i) for i in range(count)]


def split_counts(total: int, parts: int) -> Sequence[int]:
    """ Splits ``total`` draws into ``parts`` nearly equal chunks, larger chunks first. """
    parts = max(1, min(parts, total)) if total > 0 else 1
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]
