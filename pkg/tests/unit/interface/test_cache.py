import pickle

import numpy as np
import pytest

from wedgenet import DictionaryCache, NoCache
from wedgenet.cache import dictionary_key
from wedgenet.datasets import gaussian
from tests.conftest import get_cache_dir, set_cache_dir  # noqa


class CountingBuilder:
    def __init__(self, value):
        self.value = value
        self.counter = 0

    def __call__(self):
        self.counter += 1
        return self.value


def test_context_manager(get_cache_dir):
    key, val = 'key', 'val'
    with DictionaryCache() as entries:
        entries[key] = val

    with DictionaryCache() as entries:
        val_other = entries[key]
        missing = entries['other']
    assert val == val_other
    assert isinstance(missing, NoCache)
    assert set(get_cache_dir.iterdir())


def test_build_runs_once(get_cache_dir):
    data = gaussian(6, 2)
    cache = DictionaryCache('dictionaries.pkl')
    first = cache.build('l2-bias', data)
    cache_files = set(get_cache_dir.iterdir())
    second = cache.build('l2-bias', data)

    assert cache_files == set(get_cache_dir.iterdir())
    assert first.features == second.features
    assert np.array_equal(first.K, second.K)
    key = dictionary_key('l2-bias', data, None, None)
    assert cache.get(key).features == first.features


def test_keys_follow_data_and_settings():
    data = gaussian(6, 2)
    key = dictionary_key('l2-bias', data, None, None)
    assert key == dictionary_key('l2-bias', gaussian(6, 2), None, None)
    assert key != dictionary_key('l2-nobias', data, None, None)
    assert key != dictionary_key('l2-bias', gaussian(6, 2, seed=1), None, None)
    assert key != dictionary_key('l2-bias', data, 3, 10)


@pytest.mark.parametrize('access, builds, written', [
    ('rew', 1, True),
    ('ew', 2, True),
    ('re', 2, False),
    ('e', 2, False),
])
def test_access_indicators(access, builds, written, get_cache_dir):
    builder = CountingBuilder('value')
    cache = DictionaryCache('access.pkl', access=access)
    assert cache.get_or_build('key', builder) == 'value'
    assert cache.get_or_build('key', builder) == 'value'
    assert builder.counter == builds
    assert (get_cache_dir / 'access.pkl').exists() == written


def test_read_only_miss_is_an_error():
    with pytest.raises(ValueError):
        DictionaryCache('read_only.pkl', access='r').get_or_build('key', CountingBuilder('value'))


def test_foreign_pickle_is_rejected(get_cache_dir):
    get_cache_dir.mkdir(parents=True, exist_ok=True)
    with open(get_cache_dir / 'foreign.pkl', 'wb') as f:
        pickle.dump(['not', 'a', 'cache'], f)
    with pytest.raises(ValueError):
        DictionaryCache('foreign.pkl').get()


def test_no_cache():
    assert not NoCache()
    assert NoCache() == NoCache()
    assert len({NoCache(), NoCache()}) == 1
