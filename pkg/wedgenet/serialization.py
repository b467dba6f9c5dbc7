""" File formats: network JSON, dictionary exports, data CSV and JSON reports.

JSON is written with sorted keys and Python's shortest round-trip float representation, so identical
inputs give byte-identical files and every 64-bit float reads back exactly.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
import struct
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np

from wedgenet.dict_builder import DataMatrix, Dictionary
from wedgenet.errors import FormatError
from wedgenet.lasso_solver import LassoSolution
from wedgenet.net_builder import Layer, Provenance, ReluNetwork

logger = logging.getLogger(__file__)

DICTIONARY_MAGIC = b'WEDGEK01'
_PROVENANCE_FIELDS = tuple(f.name for f in dataclasses.fields(Provenance))


def to_jsonable(obj: Any) -> Any:
    """ Plain JSON value of dataclasses, enums, numpy values and containers; NaN and inf become null. """
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, dict):
        return {str(key): to_jsonable(value) for key, value in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(value) for value in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return to_jsonable(obj.item())
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, Path):
        return obj.as_posix()
    return obj


def dumps(obj: Any) -> str:
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=1, ensure_ascii=False, allow_nan=False) + '\n'


def write_json(obj: Any, file_path: os.PathLike | str) -> Path:
    file_path = Path(file_path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    file_path.write_text(dumps(obj), encoding='utf-8')
    logger.info(f'Wrote "{file_path}".')
    return file_path


def _read_json(file_path: os.PathLike | str, what: str) -> Any:
    try:
        return json.loads(Path(file_path).read_text(encoding='utf-8'))
    except json.JSONDecodeError as e:
        raise FormatError(f'File "{file_path}" is not a valid {what} JSON: {e}.') from e


def network_to_dict(net: ReluNetwork) -> dict:
    return {
        'p': net.p,
        'layers': [{'W': layer.W.tolist(), 'b': None if layer.b is None else layer.b.tolist()}
                   for layer in net.layers],
        'provenance': [to_jsonable(entry) for entry in net.provenance],
    }


def network_from_dict(payload: Any) -> ReluNetwork:
    try:
        layers = []
        for raw in payload['layers']:
            W = np.array(raw['W'], dtype=float)
            if W.ndim != 2:
                raise FormatError(f'Layer weights should be a nested list of rows, got shape {W.shape}.')
            layers.append(Layer(W, raw.get('b')))
        provenance = []
        for raw in payload.get('provenance') or []:
            entry = {name: raw.get(name) for name in _PROVENANCE_FIELDS if name in raw}
            entry['samples'] = tuple(entry.get('samples') or ())
            entry['labels'] = tuple(entry.get('labels') or ())
            provenance.append(Provenance(**entry))
        return ReluNetwork(tuple(layers), p=int(payload.get('p', 2)), provenance=tuple(provenance))
    except (KeyError, TypeError) as e:
        raise FormatError(f'Network description is missing or mistypes a field: {e!r}.') from e
    except FormatError:
        raise
    except ValueError as e:
        raise FormatError(f'Network description is inconsistent: {e}') from e


def save_network(net: ReluNetwork, file_path: os.PathLike | str) -> Path:
    return write_json(network_to_dict(net), file_path)


def load_network(file_path: os.PathLike | str) -> ReluNetwork:
    return network_from_dict(_read_json(file_path, 'network'))


def solution_to_dict(solution: LassoSolution, dictionary: Dictionary | None = None) -> dict:
    payload = {
        'z': solution.z,
        't': solution.t,
        'objective': solution.objective,
        'dual_residual': solution.dual_residual,
        'intercept_residual': solution.intercept_residual,
        'support': solution.support,
        'iterations': solution.iterations,
        'lambda_eff': solution.lambda_eff,
        'converged': solution.converged,
    }
    if dictionary is not None:
        payload['support_ids'] = [dictionary.features[j].id for j in solution.support]
    return to_jsonable(payload)


def _trailer(dictionary: Dictionary) -> dict:
    return to_jsonable({
        'variant': dictionary.variant,
        'p': dictionary.p,
        'intercept': dictionary.intercept,
        'depth': dictionary.depth,
        'features': [{'id': f.id, 'variant': f.variant, 'indices': f.indices, 'sign': f.sign, 'norm': f.norm_value,
                      'anchor_j0': f.anchor_j0, 'anchor_ell': f.anchor_ell, 'branch': f.branch}
                     for f in dictionary.features],
        'build_stats': dictionary.build_stats,
    })


def save_dictionary_binary(dictionary: Dictionary, file_path: os.PathLike | str) -> Path:
    """ ``WEDGEK01``, n and P as little-endian uint64, K column-major as little-endian float64, then a UTF-8
    JSON trailer followed by its byte length as uint64.
    """
    file_path = Path(file_path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    n, P = dictionary.K.shape
    trailer = json.dumps(_trailer(dictionary), sort_keys=True, separators=(',', ':')).encode('utf-8')
    with open(file_path, 'wb') as f:
        f.write(DICTIONARY_MAGIC)
        f.write(struct.pack('<QQ', n, P))
        f.write(np.asfortranarray(dictionary.K, dtype='<f8').tobytes(order='F'))
        f.write(trailer)
        f.write(struct.pack('<Q', len(trailer)))
    logger.info(f'Wrote dictionary of shape {(n, P)} to "{file_path}".')
    return file_path


def load_dictionary_binary(file_path: os.PathLike | str) -> tuple[np.ndarray, dict]:
    raw = Path(file_path).read_bytes()
    header = len(DICTIONARY_MAGIC) + 16
    if len(raw) < header + 8 or raw[:len(DICTIONARY_MAGIC)] != DICTIONARY_MAGIC:
        raise FormatError(f'File "{file_path}" is not a dictionary export.')
    n, P = struct.unpack('<QQ', raw[len(DICTIONARY_MAGIC):header])
    (trailer_length,) = struct.unpack('<Q', raw[-8:])
    body = header + 8 * n * P
    if body + trailer_length + 8 != len(raw):
        raise FormatError(f'File "{file_path}" is truncated or has extra bytes.')
    K = np.frombuffer(raw[header:body], dtype='<f8').reshape((n, P), order='F').astype(float)
    trailer = json.loads(raw[body:body + trailer_length].decode('utf-8'))
    return K, trailer


def save_dictionary_csv(dictionary: Dictionary, file_path: os.PathLike | str) -> Path:
    file_path = Path(file_path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    header = ','.join(feature.id for feature in dictionary.features)
    np.savetxt(file_path, dictionary.K, delimiter=',', header=header, comments='', fmt='%.17g')
    return file_path


def load_data_csv(file_path: os.PathLike | str, label_cols: int = 1) -> DataMatrix:
    """ Reads a CSV with a header row; the last ``label_cols`` columns are labels. """
    if label_cols < 0:
        raise ValueError(f'Label column count should be non-negative, got {label_cols}.')
    try:
        table = np.loadtxt(file_path, delimiter=',', skiprows=1, ndmin=2)
    except ValueError as e:
        raise FormatError(f'File "{file_path}" is not a numeric CSV with a header row: {e}') from e
    if table.shape[1] <= label_cols:
        raise FormatError(f'File "{file_path}" has {table.shape[1]} columns, '
                          f'but {label_cols} label columns and at least one feature are expected.')
    if label_cols == 0:
        return DataMatrix(table)
    X, y = table[:, :-label_cols], table[:, -label_cols:]
    return DataMatrix(X, y[:, 0] if label_cols == 1 else y)


def save_data_csv(data: DataMatrix, file_path: os.PathLike | str) -> Path:
    file_path = Path(file_path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    columns = [data.samples]
    names = [f'x{k}' for k in range(data.dim)]
    if data.y is not None:
        y = data.y.reshape(data.n_samples, -1)
        columns.append(y)
        names += ['y'] if y.shape[1] == 1 else [f'y{k}' for k in range(y.shape[1])]
    np.savetxt(file_path, np.hstack(columns), delimiter=',', header=','.join(names), comments='', fmt='%.17g')
    return file_path
