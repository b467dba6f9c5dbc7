""" Command-line interface.

Exit codes: 0 success, 1 solver did not converge (artifacts are still written from the best iterate),
2 usage or malformed network/config file, 3 data error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from wedgenet import diagnostics, ref_trainer
from wedgenet.cache import DictionaryCache
from wedgenet.config import config
from wedgenet.dict_builder import BUILDERS, DataMatrix, build_dictionary
from wedgenet.errors import (DegenerateFeature, DimensionError, FormatError, NonConverged, ProvenanceError, RankError,
                             SizeError, VariantError)
from wedgenet.hash import file_checksum, get_digest
from wedgenet.lasso_solver import (Loss, SolverConfig, approximation_bounds, problem_for, solve,
                                   solve_min_norm_interpolation)
from wedgenet.net_builder import (accuracy, balance_scaling, describe_neurons, forward, nonconvex_cost, rank_reduce,
                                  reconstruct)
from wedgenet.polisher import PolishConfig, Refit, polish_network
from wedgenet.serialization import (load_data_csv, load_network, save_dictionary_binary, save_dictionary_csv,
                                    save_network, solution_to_dict, write_json)

logger = logging.getLogger(__file__)

EXIT_OK = 0
EXIT_NONCONVERGED = 1
EXIT_USAGE = 2
EXIT_DATA = 3

_DATA_ERRORS = (DimensionError, RankError, VariantError, ProvenanceError, SizeError, DegenerateFeature)


class CommandFailure(Exception):
    def __init__(self, message: str, exit_code: int):
        super().__init__(message)
        self.exit_code = exit_code


@dataclass
class RunManifest:
    """ What a command read and wrote. ``timings`` are logged but kept out of the JSON file. """
    command: str
    config_hash: str
    seed: int | None
    input_checksums: dict[str, str] = field(default_factory=dict)
    output_paths: list[str] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            'command': self.command,
            'config_hash': self.config_hash,
            'seed': self.seed,
            'input_checksums': dict(sorted(self.input_checksums.items())),
            'output_paths': list(self.output_paths),
        }


class _Timer:
    def __init__(self, manifest: RunManifest, name: str):
        self.manifest = manifest
        self.name = name

    def __enter__(self):
        self.start = time.perf_counter()

    def __exit__(self, exc_type, exc_val, exc_tb):
        elapsed = time.perf_counter() - self.start
        self.manifest.timings[self.name] = elapsed
        logger.info(f'{self.name} took {elapsed:.3f} s.')


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        payload = json.loads(Path(path).read_text(encoding='utf-8'))
    except (OSError, json.JSONDecodeError) as e:
        raise CommandFailure(f'Cannot read config file "{path}": {e}', EXIT_USAGE) from e
    if not isinstance(payload, dict):
        raise CommandFailure(f'Config file "{path}" should hold a JSON object.', EXIT_USAGE)
    return payload


def _config_section(payload: dict, section: str, cls: type, overrides: dict) -> Any:
    values = dict(payload.get(section) or {})
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise CommandFailure(f'Unknown "{section}" settings in config file: {unknown}.', EXIT_USAGE)
    values.update({key: value for key, value in overrides.items() if value is not None})
    try:
        return cls(**values)
    except (TypeError, ValueError) as e:
        raise CommandFailure(f'Invalid "{section}" settings: {e}', EXIT_USAGE) from e


def _load_data(path: str, label_cols: int, manifest: RunManifest) -> DataMatrix:
    try:
        data = load_data_csv(path, label_cols)
        manifest.input_checksums[Path(path).name] = file_checksum(path)
    except (OSError, FormatError, ValueError) as e:
        raise CommandFailure(f'Cannot read data file "{path}": {e}', EXIT_DATA) from e
    return data


def _load_network(path: str, manifest: RunManifest):
    try:
        net = load_network(path)
        manifest.input_checksums[Path(path).name] = file_checksum(path)
    except (OSError, FormatError) as e:
        raise CommandFailure(f'Cannot read network file "{path}": {e}', EXIT_USAGE) from e
    return net


def _write(obj_writer: Callable[[Path], Path], out_dir: Path, name: str, manifest: RunManifest) -> Path:
    path = obj_writer(out_dir / name)
    manifest.output_paths.append(name)
    return path


def _new_manifest(args: argparse.Namespace, settings: dict) -> RunManifest:
    arguments = {key: value for key, value in sorted(vars(args).items()) if key not in ('func', 'verbose')}
    return RunManifest(command=args.command, config_hash=get_digest([arguments, settings]), seed=args.seed)


def _finish(manifest: RunManifest, out_dir: Path):
    manifest.output_paths.append('manifest.json')
    write_json(manifest.to_dict(), out_dir / 'manifest.json')


def cmd_train_convex(args: argparse.Namespace) -> int:
    settings = _load_config_file(args.config)
    manifest = _new_manifest(args, settings)
    solver_config = _config_section(settings, 'solver', SolverConfig, {})
    out_dir = Path(args.out)
    data = _load_data(args.data, args.label_cols, manifest)
    if data.y is None:
        raise CommandFailure('Training needs labels, use --label-cols >= 1.', EXIT_USAGE)
    loss = Loss(args.loss)

    reduction = None
    with _Timer(manifest, 'dictionary'):
        working = data
        if args.variant not in ('1d', '2d-l1-bias') and data.effective_rank < data.dim:
            reduction = rank_reduce(data)
            working = reduction.reduced
            logger.warning(f'Data has rank {reduction.r} < d={data.dim}; training on the reduced data.')
        max_features = args.max_features or settings.get('max_features')
        if args.cache is not None:
            dictionary = DictionaryCache(args.cache).build(args.variant, working, args.seed, max_features)
        else:
            dictionary = build_dictionary(args.variant, working, seed=args.seed, max_features=max_features)
    if args.p is not None and args.p != dictionary.p:
        raise CommandFailure(f'Variant "{args.variant}" uses p={dictionary.p}, but --p {args.p} was given.',
                             EXIT_USAGE)

    exit_code = EXIT_OK
    with _Timer(manifest, 'solve'):
        interpolation = None
        try:
            if args.interpolate:
                interpolation = solve_min_norm_interpolation(dictionary.K, working.y, intercept=dictionary.intercept,
                                                             config=solver_config)
                solution = interpolation.solution
            else:
                solution = solve(problem_for(dictionary, working.y, args.lam, loss), solver_config)
        except NonConverged as e:
            logger.warning(str(e))
            solution = e.solution
            exit_code = EXIT_NONCONVERGED

    net = balance_scaling(reconstruct(dictionary, solution, working))
    if reduction is not None:
        # V has orthonormal columns, so only l2 norms survive the lift
        net = balance_scaling(reduction.lift(net))
        if dictionary.p != 2:
            logger.warning(f'Lifted p={dictionary.p} network: its cost in the original coordinates differs '
                           f'from the reduced objective.')
    cost = nonconvex_cost(net, data, args.lam, dictionary.p, loss)

    report = solution_to_dict(solution, dictionary)
    report['nonconvex'] = dataclasses.asdict(cost)
    report['variant'] = dictionary.variant
    report['n_features'] = dictionary.n_features
    report['neurons'] = [description.text for description in describe_neurons(net)]
    report['accuracy'] = accuracy(forward(net, data.samples), data.y)
    if reduction is not None:
        report['rank_reduction'] = {'rank': reduction.r, 'input_dim': data.dim,
                                    'cost_equals_objective': dictionary.p == 2}
    if interpolation is not None:
        report['interpolation_residual'] = interpolation.residual
    if args.epsilon is not None and dictionary.p == 2:
        report['approximation_bounds'] = approximation_bounds(solution.objective, args.epsilon, cost.reg_term,
                                                              args.lam)._asdict()

    _write(lambda path: save_network(net, path), out_dir, 'network.json', manifest)
    _write(lambda path: write_json(report, path), out_dir, 'solution.json', manifest)
    if args.export_dictionary == 'bin':
        _write(lambda path: save_dictionary_binary(dictionary, path), out_dir, 'dictionary.bin', manifest)
    elif args.export_dictionary == 'csv':
        _write(lambda path: save_dictionary_csv(dictionary, path), out_dir, 'dictionary.csv', manifest)
    if data.dim == 2 and not args.no_plot:
        from wedgenet.plotting import plot_partition
        _write(lambda path: plot_partition(net, data, path), out_dir, 'partition.svg', manifest)
    _finish(manifest, out_dir)
    return exit_code


def cmd_polish(args: argparse.Namespace) -> int:
    settings = _load_config_file(args.config)
    manifest = _new_manifest(args, settings)
    overrides = {
        'include_bias': False if args.no_bias else None,
        'rank_override': args.rank,
        'refit': args.refit,
        'refit_reg': args.refit_reg,
        'layers_to_polish': None if args.layers is None else tuple(int(i) for i in args.layers.split(',')),
        'lam': args.lam,
    }
    polish_config = _config_section(settings, 'polish', PolishConfig, overrides)
    out_dir = Path(args.out)
    net = _load_network(args.network, manifest)
    data = _load_data(args.data, args.label_cols, manifest)
    with _Timer(manifest, 'polish'):
        polished, report = polish_network(net, data, polish_config)
    _write(lambda path: save_network(polished, path), out_dir, 'polished_network.json', manifest)
    _write(lambda path: write_json(report, path), out_dir, 'polish_report.json', manifest)
    _finish(manifest, out_dir)
    return EXIT_OK


def cmd_diagnose(args: argparse.Namespace) -> int:
    settings = _load_config_file(args.config)
    manifest = _new_manifest(args, settings)
    out_dir = Path(args.out)
    data = _load_data(args.data, args.label_cols, manifest)
    mode = None if args.mode == 'auto' else args.mode
    with _Timer(manifest, 'diagnose'):
        report = diagnostics.diagnose(data.samples, mode=mode, probes=args.probes, seed=args.seed)
    _write(lambda path: write_json(report, path), out_dir, 'dispersion.json', manifest)
    _finish(manifest, out_dir)
    return EXIT_OK


def cmd_baseline(args: argparse.Namespace) -> int:
    settings = _load_config_file(args.config)
    manifest = _new_manifest(args, settings)
    overrides = {
        'm': args.m,
        'lam': args.lam,
        'p': args.p,
        'steps': args.steps,
        'lr': args.lr,
        'restarts': args.restarts,
        'batch_size': args.batch_size,
        'seed': args.seed,
        'optimizer': args.optimizer,
        'loss': args.loss,
        'bias': False if args.no_bias else None,
    }
    train_config = _config_section(settings, 'train', ref_trainer.TrainConfig, overrides)
    out_dir = Path(args.out)
    data = _load_data(args.data, args.label_cols, manifest)
    train = ref_trainer.train_three_layer if args.depth == 3 else ref_trainer.train_two_layer
    with _Timer(manifest, 'train'):
        result = train(data, train_config)
    summary = {
        'objective': result.objective,
        'failed_restarts': result.failed,
        'restarts': result.restarts,
        'accuracy': accuracy(forward(result.net, data.samples), data.y),
    }
    _write(lambda path: save_network(result.net, path), out_dir, 'baseline_network.json', manifest)
    _write(lambda path: write_json(summary, path), out_dir, 'baseline.json', manifest)
    _finish(manifest, out_dir)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    settings = _load_config_file(args.config)
    manifest = _new_manifest(args, settings)
    out_dir = Path(args.out)
    net = _load_network(args.network, manifest)
    data = _load_data(args.data, args.label_cols, manifest)
    if data.y is None:
        raise CommandFailure('Evaluation needs labels, use --label-cols >= 1.', EXIT_USAGE)
    outputs = forward(net, data.samples)
    cost = nonconvex_cost(net, data, args.lam, None, Loss(args.loss))
    summary = {
        'n': data.n_samples,
        'loss': cost.loss_term,
        'reg_term': cost.reg_term,
        'objective': cost.total,
        'accuracy': accuracy(outputs, data.y),
        'mean_squared_error': float(np.mean((outputs - data.y.reshape(outputs.shape)) ** 2)),
    }
    _write(lambda path: write_json(summary, path), out_dir, 'eval.json', manifest)
    _finish(manifest, out_dir)
    return EXIT_OK


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument('--out', default='.', help='output directory (default: current directory)')
    parser.add_argument('--seed', type=int, default=0, help='master seed for every random stream (default: 0)')
    parser.add_argument('--config', default=None, help='JSON file with "solver", "train" and "polish" sections')
    parser.add_argument('--label-cols', type=int, default=1,
                        help='number of trailing label columns in the data CSV (default: 1)')
    parser.add_argument('--threads', type=int, default=None,
                        help='worker pool size (default: $WEDGENET_THREADS or up to 4)')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='wedgenet',
                                     description='Convex training, polishing and diagnostics of ReLU networks '
                                                 'built from wedge-product features of the training data.')
    parser.add_argument('-v', '--verbose', action='store_true', help='log progress at INFO level')
    commands = parser.add_subparsers(dest='command', required=True)

    train = commands.add_parser('train-convex', help='build a dictionary, solve the Lasso, reconstruct the network')
    train.add_argument('data', help='CSV file with a header row, features first and labels last')
    train.add_argument('--variant', required=True, choices=sorted(BUILDERS), help='dictionary variant')
    train.add_argument('--lambda', dest='lam', type=float, default=0.1, help='weight decay (default: 0.1)')
    train.add_argument('--p', type=int, choices=(1, 2), default=None, help='norm of the variant, checked if given')
    train.add_argument('--loss', choices=[loss.value for loss in Loss], default=Loss.SQUARED.value)
    train.add_argument('--max-features', type=int, default=None, help='cap on dictionary columns')
    train.add_argument('--cache', nargs='?', const='_dictionary_cache.pkl', default=None,
                       help='reuse dictionaries from a pickle cache file')
    train.add_argument('--interpolate', action='store_true',
                       help='minimum-norm interpolation instead of the penalized problem')
    train.add_argument('--epsilon', type=float, default=None,
                       help='dispersion estimate for the approximation bounds of p=2 variants')
    train.add_argument('--export-dictionary', choices=('bin', 'csv'), default=None)
    train.add_argument('--no-plot', action='store_true', help='skip the partition SVG for planar data')
    _add_common(train)
    train.set_defaults(func=cmd_train_convex)

    polish = commands.add_parser('polish', help='replace trained neurons by their closed forms')
    polish.add_argument('network', help='network JSON')
    polish.add_argument('data', help='CSV training data')
    polish.add_argument('--layers', default=None, help='comma separated hidden layers to polish (default: 0)')
    polish.add_argument('--refit', choices=[refit.value for refit in Refit], default=None)
    polish.add_argument('--refit-reg', type=float, default=None, help='ridge penalty of the head refit')
    polish.add_argument('--rank', type=int, default=None, help='override the effective rank of the layer inputs')
    polish.add_argument('--no-bias', action='store_true', help='do not lift samples with a constant 1')
    polish.add_argument('--lambda', dest='lam', type=float, default=None,
                        help='weight decay of the reported objective (default: 0)')
    _add_common(polish)
    polish.set_defaults(func=cmd_polish)

    diagnose = commands.add_parser('diagnose', help='chamber diameter and dispersion estimates of the data')
    diagnose.add_argument('data', help='CSV data')
    diagnose.add_argument('--mode', choices=('auto', 'exact', 'sampled'), default='auto')
    diagnose.add_argument('--probes', type=int, default=10000, help='random unit probes (default: 10000)')
    _add_common(diagnose)
    diagnose.set_defaults(func=cmd_diagnose)

    baseline = commands.add_parser('baseline', help='train the non-convex objective by gradient descent')
    baseline.add_argument('data', help='CSV training data')
    baseline.add_argument('--depth', type=int, choices=(2, 3), default=2)
    baseline.add_argument('--m', type=int, default=None, help='hidden neurons (default: 50)')
    baseline.add_argument('--lambda', dest='lam', type=float, default=None, help='weight decay (default: 0.1)')
    baseline.add_argument('--p', type=int, choices=(1, 2), default=None)
    baseline.add_argument('--steps', type=int, default=None)
    baseline.add_argument('--lr', type=float, default=None)
    baseline.add_argument('--restarts', type=int, default=None)
    baseline.add_argument('--batch-size', type=int, default=None, help='minibatch size (default: full batch)')
    baseline.add_argument('--optimizer', choices=[o.value for o in ref_trainer.Optimizer], default=None)
    baseline.add_argument('--loss', choices=[loss.value for loss in Loss], default=None)
    baseline.add_argument('--no-bias', action='store_true')
    _add_common(baseline)
    baseline.set_defaults(func=cmd_baseline)

    evaluate = commands.add_parser('eval', help='loss and accuracy of a network on a data file')
    evaluate.add_argument('network', help='network JSON')
    evaluate.add_argument('data', help='CSV data')
    evaluate.add_argument('--lambda', dest='lam', type=float, default=0.0)
    evaluate.add_argument('--loss', choices=[loss.value for loss in Loss], default=Loss.SQUARED.value)
    _add_common(evaluate)
    evaluate.set_defaults(func=cmd_eval)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    if args.threads is not None:
        if args.threads < 1:
            parser.print_usage(sys.stderr)
            print(f'wedgenet: error: --threads should be positive, got {args.threads}', file=sys.stderr)
            return EXIT_USAGE
        config.set_threads(args.threads)
    try:
        return args.func(args)
    except CommandFailure as e:
        print(f'wedgenet: error: {e}', file=sys.stderr)
        return e.exit_code
    except _DATA_ERRORS as e:
        print(f'wedgenet: data error: {e}', file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        print(f'wedgenet: error: {e}', file=sys.stderr)
        return EXIT_USAGE
