# Copyright (c) Microsoft Corporation.
# Licensed under the MIT license.

'''
This is the main script of DERCAL. It runs one of four commands:
:code:`simulate` synthesizes measurement data from a der_a truth model,
:code:`observe` checks which augmented entries are locally observable,
:code:`calibrate` runs the EKF and/or UKF over measurement data and
:code:`compare` replays the truth inputs through calibrated and guideline
parameters. Every run writes a manifest next to its outputs that can be
fed back through :code:`--replay`.
'''

import argparse
import logging
import os
import shutil
import sys

from easydict import EasyDict as edict
from psutil import virtual_memory

from core import __version__
from core.config import FilterConfig, ScenarioConfig, SpecConfig, load_parameters, validate_document
from core.dataset import TRUTH_COLUMNS, read_measurements, read_truth, write_measurements, write_truth
from core.exceptions import ContractError, RankDeficiencyError, exit_code_for
from core.filters import select_runner
from core.model import DeraInputs, DeraParameters
from core.observability import select_estimable, analyze_spec
from core.augmented import THRESHOLD_PARAMETERS
from core.report import (agreement, comparison, write_calibration, write_comparison,
                         write_observability_report)
from core.scenario import replay, simulate_scenario, synthesize
from utils import init_logging, print_rank, read_yaml, write_yaml

COMMANDS = ('simulate', 'observe', 'calibrate', 'compare')


def log_run_properties(config, props):
    """Log system memory and selected configuration values.

    Args:
        config (Config): configuration to read values from.
        props (list): (dotted key, default) pairs.
    """

    properties = {}

    mem = virtual_memory()
    properties["System memory (GB)"] = float(mem.total) / (1024**3)

    for (key, default) in props:
        properties[key] = config.lookup(key, default)

    for k in properties:
        print_rank(f'{k}: {properties[k]}')
    return properties


def copy_config(path, out_dir, kind):
    '''Make a copy of a config file into the output folder, for future reference.'''
    if path is None:
        return None
    target = os.path.join(out_dir, f'{kind}_{os.path.basename(path)}')
    if os.path.abspath(path) != os.path.abspath(target):
        shutil.copyfile(path, target)
    return target


def _require(args, *names):
    missing = [n for n in names if getattr(args, n, None) is None]
    if missing:
        raise ContractError(f'{args.command} needs ' + ', '.join('--' + n.replace('_', '-') for n in missing))


def _scenario(args):
    cfg = ScenarioConfig.from_file(args.scenario)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def cmd_simulate(args, manifest):
    '''Truth simulation of a scenario plus noisy measurements.'''
    _require(args, 'scenario')
    cfg = _scenario(args)
    log_run_properties(cfg, [('flags', 'CASE1'), ('duration', 3.0), ('sample_rate', 30.0),
                             ('profile.a', 0.8), ('profile.b', 60.0), ('noise', {}), ('seed', 0)])
    result = synthesize(cfg)
    outputs = {
        'measurements': os.path.join(args.out, 'measurements.csv'),
        'truth': os.path.join(args.out, 'truth.csv'),
    }
    write_measurements(outputs['measurements'], result.records)
    write_truth(outputs['truth'], result.times, result.states.detach().numpy(), result.truth)
    manifest['parameters'] = result.params.to_dict()
    manifest['seed'] = cfg.seed
    manifest['config_paths']['scenario'] = copy_config(args.scenario, args.out, 'scenario')
    return outputs


def cmd_observe(args, manifest):
    '''Rank verdict, spectrum, weights and estimable-set audit of an augmentation.'''
    _require(args, 'scenario', 'spec')
    cfg = _scenario(args)
    spec_cfg = SpecConfig.from_file(args.spec)
    spec = spec_cfg.to_spec(args.measurement_set)
    if spec.flags != cfg.flag_config:
        raise ContractError(f'spec {spec.name} uses flags {spec.flags.as_tuple()}, '
                            f'scenario {cfg.name} uses {cfg.flag_config.as_tuple()}')
    settings = spec_cfg.analysis_settings()
    log_run_properties(spec_cfg, [('preset', None), ('measurement_set', 'vpq'), ('analysis.max_order', None),
                                  ('analysis.scheme', 'taylor'), ('analysis.points', 12)])
    trajectory = simulate_scenario(cfg).trajectory()
    report = analyze_spec(spec, trajectory, settings)

    audit, reduced, failure = [], None, None
    selection = spec_cfg.selection
    if not report.is_full_rank and selection.enabled:
        try:
            reduced = select_estimable(spec, report, selection.weight_threshold, pinned=selection.pinned,
                                       pre_exclude=THRESHOLD_PARAMETERS if selection.pre_exclude else (),
                                       state_exclusions=tuple(selection.state_exclusions), audit=audit)
        except RankDeficiencyError as e:
            failure = e
    outputs = write_observability_report(args.out, report, audit, reduced)
    manifest['parameters'] = trajectory.params.to_dict()
    manifest['seed'] = settings.seed
    manifest['config_paths']['scenario'] = copy_config(args.scenario, args.out, 'scenario')
    manifest['config_paths']['spec'] = copy_config(args.spec, args.out, 'spec')
    if failure is not None:
        manifest['outputs'] = outputs
        raise failure
    return outputs


def _check_channels(spec, records):
    missing = [c for c in spec.channels if not any(r.is_valid(c) for r in records)]
    if missing:
        raise ContractError(f'measurement set {spec.measurement_set} needs channels {missing} '
                            f'that the measurement file does not carry')


def cmd_calibrate(args, manifest):
    '''Joint state and parameter estimation with the EKF, the UKF or both.'''
    _require(args, 'measurements', 'spec')
    spec_cfg = SpecConfig.from_file(args.spec)
    spec = spec_cfg.to_spec(args.measurement_set)
    filter_cfg = FilterConfig.from_file(args.filter_config) if args.filter_config else FilterConfig()
    if args.seed is not None:
        filter_cfg.seed = args.seed
    records = read_measurements(args.measurements)
    _check_channels(spec, records)

    params, references = DeraParameters(), DeraInputs()
    if args.scenario:
        cfg = _scenario(args)
        if spec.flags != cfg.flag_config:
            raise ContractError(f'spec {spec.name} uses flags {spec.flags.as_tuple()}, '
                                f'scenario {cfg.name} uses {cfg.flag_config.as_tuple()}')
        params, references = cfg.load_parameters(), cfg.inputs_template()
        manifest['config_paths']['scenario'] = copy_config(args.scenario, args.out, 'scenario')
    truth = load_parameters(args.truth).to_dict() if args.truth else None

    log_run_properties(filter_cfg, [('jacobian', 'ad'), ('eps', 1e-6), ('substeps', 32),
                                    ('parameter_process_noise', 1e-10), ('seed', 0)])
    filters = ('ekf', 'ukf') if args.filter == 'both' else (args.filter,)
    outputs, results = {}, {}
    for name in filters:
        result = select_runner(name)(spec, filter_cfg, records, params=params, references=references,
                                     k=spec_cfg.analysis.k)
        calibrated = result.final_parameters(filter_cfg.load_initial_parameters(base=params))
        paths = write_calibration(args.out, result, truth, parameters=calibrated)
        outputs.update({f'{name}_{k}': v for k, v in paths.items()})
        results[name] = result
        manifest['parameters'][name] = result.final
    if len(results) == 2:
        outputs['agreement'] = os.path.join(args.out, 'agreement.csv')
        agreement(results['ekf'], results['ukf']).to_csv(outputs['agreement'], index=False, encoding='utf-8')
    manifest['seed'] = filter_cfg.seed
    manifest['config_paths']['spec'] = copy_config(args.spec, args.out, 'spec')
    manifest['config_paths']['filter'] = copy_config(args.filter_config, args.out, 'filter')
    return outputs


def _read_reference(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f'truth file not found: {path}')
    with open(path, 'r', encoding='utf-8') as f:
        header = f.readline().strip().split(',')
    if all(c in header for c in TRUTH_COLUMNS):
        return read_truth(path)[2]
    return read_measurements(path)


def cmd_compare(args, manifest):
    '''P and Q of the truth against replays with calibrated and guideline parameters.'''
    _require(args, 'truth', 'calibrated', 'guideline', 'scenario')
    truth = _read_reference(args.truth)
    cfg = _scenario(args)
    calibrated = load_parameters(args.calibrated)
    guideline = load_parameters(args.guideline)
    template = cfg.inputs_template()
    series, scores = comparison(
        truth,
        replay(truth, calibrated, cfg.flag_config, template, cfg.substeps, cfg.sharpness),
        replay(truth, guideline, cfg.flag_config, template, cfg.substeps, cfg.sharpness),
    )
    manifest['parameters'] = {'calibrated': calibrated.to_dict(), 'guideline': guideline.to_dict()}
    manifest['config_paths'].update({
        'scenario': copy_config(args.scenario, args.out, 'scenario'),
        'calibrated': copy_config(args.calibrated, args.out, 'calibrated'),
        'guideline': copy_config(args.guideline, args.out, 'guideline'),
    })
    return write_comparison(args.out, series, scores)


def select_command(name):
    if name == 'simulate':
        return cmd_simulate
    elif name == 'observe':
        return cmd_observe
    elif name == 'calibrate':
        return cmd_calibrate
    elif name == 'compare':
        return cmd_compare
    else:
        raise ValueError(f'cannot use command {name}')


def build_parser():
    parser = argparse.ArgumentParser(description='der_a observability analysis and EKF/UKF calibration')
    parser.add_argument('command', nargs='?', choices=COMMANDS)
    parser.add_argument('--out', help='output folder')
    parser.add_argument('--scenario', default=None, help='scenario YAML')
    parser.add_argument('--spec', default=None, help='augmented-state spec YAML')
    parser.add_argument('--filter', default='ekf', choices=['ekf', 'ukf', 'both'])
    parser.add_argument('--filter-config', dest='filter_config', default=None, help='filter settings YAML')
    parser.add_argument('--measurements', default=None, help='measurement CSV')
    parser.add_argument('--measurement-set', dest='measurement_set', default=None,
                        choices=['vpq', 'vidiq', 'vidiqpq'])
    parser.add_argument('--truth', default=None,
                        help='calibrate: truth parameter YAML; compare: truth or measurement CSV')
    parser.add_argument('--calibrated', default=None, help='calibrated parameter YAML')
    parser.add_argument('--guideline', default=None, help='guideline parameter YAML')
    parser.add_argument('--seed', default=None, type=int)
    parser.add_argument('--replay', default=None, help='manifest of an earlier run to re-execute')
    parser.add_argument('--loglevel', default='INFO', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
    return parser


def load_manifest(path, out=None):
    '''Arguments of an earlier run, with the output folder optionally redirected.'''
    if not os.path.exists(path):
        raise FileNotFoundError(f'manifest not found: {path}')
    manifest = validate_document(read_yaml(path), 'manifest', path)
    args = edict(manifest['arguments'])
    args.command = manifest['command']
    if out is not None:
        args.out = out
    args.replay = None
    return args


def run(args):
    manifest = {
        'command': args.command,
        'arguments': {k: v for k, v in dict(args).items() if k != 'replay'},
        'config_paths': {},
        'parameters': {},
        'seed': args.seed,
        'version': __version__,
        'outputs': {},
    }
    manifest_path = os.path.join(args.out, 'manifest.yaml')
    try:
        manifest['outputs'] = select_command(args.command)(args, manifest)
    finally:
        manifest['outputs'] = {k: v for k, v in manifest['outputs'].items() if v is not None}
        manifest['outputs']['manifest'] = manifest_path
        manifest['config_paths'] = {k: v for k, v in manifest['config_paths'].items() if v is not None}
        write_yaml(manifest_path, manifest)
    return manifest


def main(argv=None):
    parser = build_parser()
    cli = parser.parse_args(argv)
    if cli.replay is None and (cli.command is None or cli.out is None):
        parser.error('give a command and --out, or --replay')

    out = cli.out
    try:
        args = load_manifest(cli.replay, out) if cli.replay else edict(vars(cli))
    except Exception as e:
        print(f'{type(e).__name__}: {e}', file=sys.stderr)
        return exit_code_for(e)

    os.makedirs(args.out, exist_ok=True)
    init_logging(os.path.join(args.out, 'log'), loglevel=getattr(logging, cli.loglevel))
    print_rank(f'DERCAL {__version__}: {args.command}' + (f' (replay of {cli.replay})' if cli.replay else ''))
    try:
        run(args)
    except Exception as e:
        code = exit_code_for(e)
        print_rank(f'{args.command} failed with exit code {code}: {type(e).__name__}: {e}', loglevel=logging.ERROR)
        if code == 1:
            logging.exception(e)
        return code
    print_rank(f'{args.command} finished, outputs in {args.out}')
    return 0


if __name__ == "__main__":
    sys.exit(main())
