import json

import numpy as np
import pytest

from wedgenet.cli import EXIT_DATA, EXIT_NONCONVERGED, EXIT_OK, EXIT_USAGE, main
from wedgenet.datasets import gaussian, spiral, uniform_1d
from wedgenet.dict_builder import DataMatrix
from wedgenet.serialization import load_dictionary_binary, load_network, save_data_csv


@pytest.fixture
def spiral_csv(tmp_path):
    return str(save_data_csv(spiral(n=12), tmp_path / 'spiral.csv'))


def _read(path):
    return json.loads(path.read_text(encoding='utf-8'))


def _train(csv, out, *extra):
    return main(['train-convex', csv, '--variant', 'l2-bias', '--lambda', '0.1', '--no-plot', '--out', str(out),
                 *extra])


def test_train_convex(tmp_path, spiral_csv):
    out = tmp_path / 'run'
    assert _train(spiral_csv, out) == EXIT_OK
    solution = _read(out / 'solution.json')
    assert solution['converged']
    assert solution['variant'] == 'l2-bias'
    assert solution['nonconvex']['total'] == pytest.approx(solution['objective'], rel=1e-8)
    assert len(solution['neurons']) == len(solution['support'])
    assert solution['accuracy'] is not None
    net = load_network(out / 'network.json')
    assert net.input_dim == 2 and net.layers[0].width == len(solution['support'])

    manifest = _read(out / 'manifest.json')
    assert manifest['command'] == 'train-convex'
    assert manifest['seed'] == 0
    assert set(manifest['input_checksums']) == {'spiral.csv'}
    assert manifest['output_paths'] == ['network.json', 'solution.json', 'manifest.json']
    assert 'timings' not in manifest


def test_reruns_are_byte_identical(tmp_path, spiral_csv):
    out = tmp_path / 'run'
    assert _train(spiral_csv, out, '--export-dictionary', 'bin') == EXIT_OK
    first = {path.name: path.read_bytes() for path in out.iterdir()}
    assert _train(spiral_csv, out, '--export-dictionary', 'bin') == EXIT_OK
    assert {path.name: path.read_bytes() for path in out.iterdir()} == first
    assert _train(spiral_csv, tmp_path / 'other', '--export-dictionary', 'bin', '--lambda', '0.2') == EXIT_OK
    assert _read(tmp_path / 'other' / 'manifest.json')['config_hash'] != _read(out / 'manifest.json')['config_hash']


def test_dictionary_exports_and_plot(tmp_path, spiral_csv):
    out = tmp_path / 'run'
    assert main(['train-convex', spiral_csv, '--variant', '2d-l1-bias', '--export-dictionary', 'bin',
                 '--out', str(out)]) == EXIT_OK
    K, trailer = load_dictionary_binary(out / 'dictionary.bin')
    assert K.shape == (12, len(trailer['features']))
    assert (out / 'partition.svg').exists()
    assert main(['train-convex', spiral_csv, '--variant', '2d-l1-bias', '--export-dictionary', 'csv', '--no-plot',
                 '--out', str(out / 'csv')]) == EXIT_OK
    assert (out / 'csv' / 'dictionary.csv').exists()
    assert not (out / 'csv' / 'partition.svg').exists()


def test_one_dimensional_and_vector_outputs(tmp_path):
    csv = str(save_data_csv(uniform_1d(6), tmp_path / 'line.csv'))
    assert main(['train-convex', csv, '--variant', '1d', '--out', str(tmp_path / 'line')]) == EXIT_OK
    assert _read(tmp_path / 'line' / 'solution.json')['neurons'][0].startswith('(x')

    data = gaussian(8, 2, outputs=2)
    csv = str(save_data_csv(data, tmp_path / 'vector.csv'))
    assert main(['train-convex', csv, '--variant', 'l1-nobias', '--label-cols', '2', '--no-plot',
                 '--out', str(tmp_path / 'vector')]) == EXIT_OK
    assert load_network(tmp_path / 'vector' / 'network.json').output_dim == 2


def test_rank_deficient_data_is_reduced(tmp_path, rng):
    X = rng.standard_normal((8, 2)) @ rng.standard_normal((2, 3))
    csv = str(save_data_csv(DataMatrix(X, rng.standard_normal(8)), tmp_path / 'flat.csv'))
    assert main(['train-convex', csv, '--variant', 'l2-nobias', '--out', str(tmp_path / 'run')]) == EXIT_OK
    assert load_network(tmp_path / 'run' / 'network.json').input_dim == 3
    solution = _read(tmp_path / 'run' / 'solution.json')
    assert solution['rank_reduction'] == {'rank': 2, 'input_dim': 3, 'cost_equals_objective': True}
    assert solution['nonconvex']['total'] == pytest.approx(solution['objective'], rel=1e-8)

    assert main(['train-convex', csv, '--variant', 'l1-nobias', '--out', str(tmp_path / 'l1')]) == EXIT_OK
    solution = _read(tmp_path / 'l1' / 'solution.json')
    assert not solution['rank_reduction']['cost_equals_objective']
    assert load_network(tmp_path / 'l1' / 'network.json').input_dim == 3


def test_interpolation_and_bounds(tmp_path, spiral_csv):
    out = tmp_path / 'run'
    assert _train(spiral_csv, out, '--interpolate') == EXIT_OK
    assert _read(out / 'solution.json')['interpolation_residual'] <= 1e-4
    assert _train(spiral_csv, out, '--epsilon', '0.2') == EXIT_OK
    bounds = _read(out / 'solution.json')['approximation_bounds']
    assert bounds['lower'] <= bounds['upper']


def test_non_convergence_still_writes_artifacts(tmp_path, spiral_csv):
    config_path = tmp_path / 'config.json'
    config_path.write_text(json.dumps({'solver': {'max_iter': 1}}), encoding='utf-8')
    out = tmp_path / 'run'
    assert _train(spiral_csv, out, '--config', str(config_path)) == EXIT_NONCONVERGED
    assert not _read(out / 'solution.json')['converged']
    assert (out / 'network.json').exists()


@pytest.mark.parametrize('argv', [
    [],
    ['train-convex'],
    ['train-convex', '{data}', '--variant', 'nonsense'],
    ['train-convex', '{data}', '--variant', 'l2-bias', '--p', '1'],
    ['train-convex', '{data}', '--variant', 'l2-bias', '--threads', '0'],
    ['train-convex', '{data}', '--variant', 'l2-bias', '--config', '{missing}'],
    ['train-convex', '{data}', '--variant', 'l2-bias', '--config', '{unknown}'],
    ['eval', '{broken}', '{data}'],
    ['polish', '{broken}', '{data}'],
])
def test_usage_errors(tmp_path, spiral_csv, argv):
    broken = tmp_path / 'broken.json'
    broken.write_text('{"layers": [', encoding='utf-8')
    unknown = tmp_path / 'unknown.json'
    unknown.write_text(json.dumps({'solver': {'speed': 'fast'}}), encoding='utf-8')
    paths = dict(data=spiral_csv, broken=str(broken), unknown=str(unknown), missing=str(tmp_path / 'missing.json'))
    argv = [arg.format(**paths) for arg in argv] + ['--out', str(tmp_path / 'run')] * bool(argv)
    assert main(argv) == EXIT_USAGE


def test_data_errors(tmp_path):
    malformed = tmp_path / 'malformed.csv'
    malformed.write_text('x0,x1,y\n1,2,oops\n', encoding='utf-8')
    cube = str(save_data_csv(gaussian(5, 3), tmp_path / 'cube.csv'))
    out = str(tmp_path / 'run')
    assert main(['train-convex', str(tmp_path / 'missing.csv'), '--variant', 'l2-bias', '--out', out]) == EXIT_DATA
    assert main(['train-convex', str(malformed), '--variant', 'l2-bias', '--out', out]) == EXIT_DATA
    assert main(['train-convex', cube, '--variant', '2d-l2-bias', '--out', out]) == EXIT_DATA


def test_polish_eval_diagnose_baseline(tmp_path, spiral_csv):
    run = tmp_path / 'run'
    assert _train(spiral_csv, run) == EXIT_OK

    assert main(['polish', str(run / 'network.json'), spiral_csv, '--out', str(run)]) == EXIT_OK
    report = _read(run / 'polish_report.json')
    assert [layer['layer'] for layer in report['layers']] == [0]
    assert all(neuron['residual_after'] <= 1e-8 for neuron in report['layers'][0]['neurons'])
    polished = load_network(run / 'polished_network.json')
    assert all(entry.variant == 'polished' for entry in polished.provenance)

    assert main(['eval', str(run / 'polished_network.json'), spiral_csv, '--out', str(run)]) == EXIT_OK
    evaluation = _read(run / 'eval.json')
    assert evaluation['n'] == 12
    assert evaluation['objective'] == pytest.approx(evaluation['loss'])
    assert evaluation['mean_squared_error'] == pytest.approx(2.0 * evaluation['loss'] / 12)

    assert main(['diagnose', spiral_csv, '--probes', '500', '--out', str(run)]) == EXIT_OK
    dispersion = _read(run / 'dispersion.json')
    assert dispersion['exact']
    assert 0.0 <= dispersion['chamber_diameter_estimate'] <= 2.0

    assert main(['baseline', spiral_csv, '--m', '8', '--steps', '200', '--restarts', '2',
                 '--out', str(run)]) == EXIT_OK
    baseline = _read(run / 'baseline.json')
    assert baseline['failed_restarts'] == 0
    assert len(baseline['restarts']) == 2
    assert np.isfinite(baseline['objective'])
    assert main(['baseline', spiral_csv, '--depth', '3', '--m', '4', '--steps', '100', '--restarts', '1',
                 '--out', str(run / 'deep')]) == EXIT_OK
    assert load_network(run / 'deep' / 'baseline_network.json').depth == 3
