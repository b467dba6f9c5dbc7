from __future__ import annotations

import hashlib
import json
import os
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

_CHUNK_SIZE = 1 << 20


def get_hash(objects: Sequence[object]) -> str:
    return _json_dumps(tuple(objects))


def get_digest(objects: Sequence[object]) -> str:
    """ Short fixed-length form of ``get_hash``, suitable for file names and manifests. """
    return hashlib.sha256(get_hash(objects).encode('utf-8')).hexdigest()


def array_checksum(array: np.ndarray) -> str:
    array = np.ascontiguousarray(array)
    digest = hashlib.sha256()
    digest.update(str(array.dtype.str).encode('ascii'))
    digest.update(str(array.shape).encode('ascii'))
    digest.update(array.tobytes())
    return digest.hexdigest()


def file_checksum(file_path: os.PathLike | str) -> str:
    digest = hashlib.sha256()
    with open(file_path, 'rb') as f:
        for chunk in iter(lambda: f.read(_CHUNK_SIZE), b''):
            digest.update(chunk)
    return digest.hexdigest()


def _json_dumps(obj: object) -> str:
    return json.dumps(
        obj,
        default=_json_default,
        # force formatting-related options to known values
        ensure_ascii=False,
        sort_keys=True,
        indent=None,
        separators=(',', ':'),
    )


def _json_default(obj: object):
    if isinstance(obj, np.ndarray):
        return dict(__ndarray__=array_checksum(obj))
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Enum):
        return '.'.join((obj.__class__.__name__, obj.name))
    if isinstance(obj, Path):
        return obj.as_posix()
    if isinstance(obj, Iterable):
        return list(obj)

    obj_class = obj.__class__
    class_path = '.'.join((obj_class.__module__, obj_class.__name__))
    vars_dict = vars(obj) if hasattr(obj, '__dict__') else {}
    return _json_dumps(dict(__class_path__=class_path, **vars_dict))
