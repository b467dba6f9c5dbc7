from __future__ import annotations

import logging
import os
import tempfile
from pathlib import Path

logger = logging.getLogger(__file__)

DEFAULT_CACHE_DIR = Path(tempfile.gettempdir()) / 'wedgenet'
DEFAULT_MAX_FEATURES = 200_000
DEFAULT_DEPENDENCE_RTOL = 1e-10
THREADS_ENV_VAR = 'WEDGENET_THREADS'


def _threads_from_env() -> int:
    default = min(4, os.cpu_count() or 1)
    raw = os.environ.get(THREADS_ENV_VAR)
    if raw is None:
        return default
    try:
        threads = int(raw)
    except ValueError:
        threads = 0
    if threads < 1:
        logger.warning(f'Ignoring {THREADS_ENV_VAR}="{raw}", expected a positive integer.')
        return default
    return threads


class Config:
    def __init__(self):
        self.cache_dir = DEFAULT_CACHE_DIR
        self.threads = _threads_from_env()
        self.max_features = DEFAULT_MAX_FEATURES
        self.dependence_rtol = DEFAULT_DEPENDENCE_RTOL

    def set_cache_dir(self, cache_dir: str | os.PathLike):
        self.cache_dir = Path(cache_dir)

    def get_cache_dir(self) -> Path:
        return self.cache_dir

    def set_threads(self, threads: int):
        if threads < 1:
            raise ValueError(f'Worker count should be positive, got {threads}.')
        self.threads = int(threads)

    def get_threads(self) -> int:
        return self.threads

    def set_max_features(self, max_features: int):
        if max_features < 1:
            raise ValueError(f'Feature cap should be positive, got {max_features}.')
        self.max_features = int(max_features)

    def get_max_features(self) -> int:
        return self.max_features

    def set_dependence_rtol(self, rtol: float):
        if not 0 < rtol < 1:
            raise ValueError(f'Dependence threshold should lie in (0, 1), got {rtol}.')
        self.dependence_rtol = float(rtol)

    def get_dependence_rtol(self) -> float:
        return self.dependence_rtol


config = Config()
