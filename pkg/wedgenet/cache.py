from __future__ import annotations

import logging
import os
import pickle
from collections import defaultdict
from pathlib import Path
from typing import Any, Callable, Hashable, Literal

from wedgenet.config import config
from wedgenet.dict_builder import DataMatrix, Dictionary, build_dictionary
from wedgenet.hash import array_checksum, get_hash

CacheAccess = Literal['r', 're', 'ew', 'rew', 'e']

logger = logging.getLogger(__file__)

DICTIONARY_CACHE_FILE_NAME = '_dictionary_cache.pkl'


class NoCache:
    def __bool__(self):
        return False

    def __eq__(self, other) -> bool:
        return isinstance(other, NoCache)

    def __hash__(self):
        return hash(NoCache)

    def __repr__(self):
        return '<NoCache object>'


class CacheEntries(defaultdict):
    """ ``defaultdict`` that also returns the default value on ``get()``. """

    def get(self, __key):
        return self.__getitem__(__key)

    def __repr__(self):
        return dict.__repr__(self)


def _resolve_filepath(file_path: os.PathLike | str) -> Path:
    file_path = Path(file_path)
    if not file_path.is_absolute():
        file_path = config.get_cache_dir() / file_path
    return file_path


def _load_entries(file_path: Path) -> CacheEntries:
    try:
        logger.info(f'Loading cache file "{file_path}"...')
        with open(file_path, 'rb') as f:
            entries = pickle.load(f)
    except FileNotFoundError:
        logger.info(f'File "{file_path}" not found, creating a new dictionary cache.')
        return CacheEntries(NoCache)
    if not isinstance(entries, CacheEntries):
        raise ValueError(f'File "{file_path}" contains value of type "{type(entries)}", not a dictionary cache.'
                         ' Rename or delete it beforehand.')
    return entries


def _write_entries(entries: CacheEntries, file_path: Path):
    logger.info(f'Writing cache file "{file_path}"...')
    file_path.parent.mkdir(parents=True, exist_ok=True)
    with open(file_path, 'wb') as f:
        pickle.dump(entries, f)


def dictionary_key(variant: str, data: DataMatrix, seed: int | None, max_features: int | None) -> str:
    max_features = config.get_max_features() if max_features is None else max_features
    return get_hash(['dictionary', variant, array_checksum(data.X), data.augmented, data.n_samples,
                     seed, max_features, config.get_dependence_rtol()])


class DictionaryCache:
    """ Pickle-backed store of built dictionaries.

    If used as a context, provides the entries dict to read and put values in; it is written back once on
    exit when write access is granted. ``get_or_build`` and ``build`` look an entry up and run the builder
    on a miss.

    Args:

        file_path - a path to an existing or non-existent pickle file.
            If a relative path or a filename is given, puts it into the framework cache directory.

        access - cache access indicators. The string may include the following indicators:
            - ``r`` - read - grants access to read the cache file content
            - ``e`` - execute - grants access to run the builder on a miss
            - ``w`` - write - grants access to modify the cache file content

    Example:

    >>> with DictionaryCache('spiral.pkl') as entries:
    ...     dictionary = entries['l2-bias']
    ...     if isinstance(dictionary, NoCache):
    ...         dictionary = build_dictionary('l2-bias', data)
    ...     entries['l2-bias'] = dictionary
    """

    def __init__(self, file_path: os.PathLike | str | None = None, access: CacheAccess = 'rew'):
        self.file_path = Path(file_path or DICTIONARY_CACHE_FILE_NAME)
        self.access = access
        self.entries: CacheEntries | None = None

    def __enter__(self) -> CacheEntries:
        self.file_path = _resolve_filepath(self.file_path)
        if 'r' in self.access:
            self.entries = _load_entries(self.file_path)
        else:
            self.entries = CacheEntries(NoCache)
        return self.entries

    def __exit__(self, exc_type, exc_val, exc_tb):
        if 'w' in self.access and exc_type is None:
            _write_entries(self.entries, self.file_path)
        self.entries = None

    def get(self, key: Hashable | None = None) -> NoCache | CacheEntries | Any:
        entries = _load_entries(_resolve_filepath(self.file_path))
        if key is None:
            return entries
        return entries[key]

    def get_or_build(self, key: Hashable, builder: Callable[[], Any]) -> Any:
        if self.access == 'e':
            logger.info('Building without the cache, since no access to it is provided...')
            return builder()

        with self as entries:
            value = NoCache()
            if 'r' in self.access:
                logger.info(f'Getting cache for the key "{key}"...')
                value = entries[key]
            if not isinstance(value, NoCache):
                logger.info(f'Found the cache for the key "{key}".')
                return value
            if 'e' not in self.access:
                raise ValueError(f'No cache found for the key "{key}" in "{self.file_path}", '
                                 f'but building is not allowed (access="{self.access}").')
            logger.info(f'Building the value for the key "{key}"...')
            value = builder()
            if 'w' in self.access:
                entries[key] = value
        return value

    def build(self, variant: str, data: DataMatrix, seed: int | None = None,
              max_features: int | None = None) -> Dictionary:
        """ ``build_dictionary`` through the cache, keyed by the variant, data checksum and build settings. """
        key = dictionary_key(variant, data, seed, max_features)
        return self.get_or_build(key, lambda: build_dictionary(variant, data, seed=seed, max_features=max_features))
