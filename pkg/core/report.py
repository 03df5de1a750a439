# Copyright (c) Microsoft Corporation.
# Licensed under the MIT license.
'''
Export of observability reports, calibration summaries and the
truth/calibrated/guideline comparison. Tables are written with pandas,
structured documents as YAML; floats keep their round-trip repr.
'''

import logging
import os
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from core.dataset import MeasurementRecord, records_to_frame
from core.exceptions import InvalidArgument
from core.metrics import Metrics, rmse
from core.observability import ObservabilityReport
from utils import print_rank, try_except_save, update_json_log, write_yaml


def observability_document(report: ObservabilityReport, audit: Sequence = (), reduced=None):
    '''Verdict, spectrum and weights of an analysis as a plain mapping.'''
    document = {
        'spec': getattr(report.spec, 'name', None),
        'measurement_set': report.measurement_set,
        'verdict': report.verdict,
        'rank': int(report.rank),
        'n_aug': int(report.n_aug),
        'is_full_rank': bool(report.is_full_rank),
        'max_order': int(report.max_order),
        'tolerance': float(report.tolerance),
        'scaling': report.scaling,
        'scheme': report.scheme,
        'sigma_min_mean': float(report.sigma_min_mean),
        'sigma_min_std': float(report.sigma_min_std),
        'sigma_min_scaled_mean': float(report.sigma_min_scaled_mean),
        'sigma_min_scaled_std': float(report.sigma_min_scaled_std),
        'point_ranks': [int(r) for r in report.point_ranks],
        'singular_values': [float(s) for s in report.singular_values],
        'top_parameters': report.top_parameters(),
        'audit': [r.to_dict() for r in audit],
    }
    if reduced is not None:
        document['reduced'] = {
            'name': reduced.name,
            'active_states': list(reduced.active_states),
            'parameters': list(reduced.parameters),
        }
    return document


def weight_table(report: ObservabilityReport) -> pd.DataFrame:
    '''Share of every augmented entry in the weakest singular direction, largest first.'''
    frame = pd.DataFrame({
        'entry': list(report.entry_weights),
        'weight': [float(w) for w in report.entry_weights.values()],
    })
    frame['is_parameter'] = frame['entry'].isin(report.parameters)
    return frame.sort_values('weight', ascending=False, kind='stable').reset_index(drop=True)


def write_observability_report(out_dir, report: ObservabilityReport, audit: Sequence = (), reduced=None):
    '''Writes report.yaml, weights.csv and spectrum.csv under :code:`out_dir`.

    Returns:
        dict of output name to path.
    '''
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        'report': os.path.join(out_dir, 'report.yaml'),
        'weights': os.path.join(out_dir, 'weights.csv'),
        'spectrum': os.path.join(out_dir, 'spectrum.csv'),
    }
    try_except_save(write_yaml, save_path=paths['report'], config=observability_document(report, audit, reduced))
    weight_table(report).to_csv(paths['weights'], index=False, encoding='utf-8')
    pd.DataFrame({'index': np.arange(len(report.singular_values)),
                  'singular_value': [float(s) for s in report.singular_values]}
                 ).to_csv(paths['spectrum'], index=False, encoding='utf-8')
    print_rank(f'Observability report written to {out_dir}')
    return paths


def calibration_summary(result, truth: Mapping = None) -> pd.DataFrame:
    '''One row per estimated parameter: initialization, estimate, tail CoV and, with a truth map, the relative error.'''
    final, cov = result.final, result.cov
    rows = []
    for q in result.parameters:
        row = {'parameter': q, 'initialization': result.initial[q], 'estimate': final[q], 'cov': cov[q]}
        if truth is not None and q in truth:
            row['truth'] = float(truth[q])
            row['relative_error'] = abs(final[q] - row['truth']) / abs(row['truth'])
        rows.append(row)
    return pd.DataFrame(rows)


def estimates_frame(result) -> pd.DataFrame:
    frame = pd.DataFrame(np.asarray(result.estimates, dtype=float), columns=list(result.parameters))
    frame.insert(0, 't', np.asarray(result.times, dtype=float))
    # the history spans every pass; the rows are the last one
    frame['trace_P'] = np.asarray(result.trace_history, dtype=float)[-len(frame):]
    return frame


def innovations_frame(result) -> pd.DataFrame:
    frame = pd.DataFrame(np.asarray(result.innovations, dtype=float), columns=list(result.channels))
    frame.insert(0, 't', np.asarray(result.times, dtype=float))
    return frame


def write_calibration(out_dir, result, truth: Mapping = None, parameters=None):
    '''Writes the summary, per-step estimates, innovations, metrics and
    (when given) the full calibrated parameter file.'''
    os.makedirs(out_dir, exist_ok=True)
    tag = result.filter
    paths = {
        'summary': os.path.join(out_dir, f'{tag}_summary.csv'),
        'estimates': os.path.join(out_dir, f'{tag}_estimates.csv'),
        'innovations': os.path.join(out_dir, f'{tag}_innovations.csv'),
        'metrics': os.path.join(out_dir, f'{tag}_metrics.json'),
    }
    calibration_summary(result, truth).to_csv(paths['summary'], index=False, encoding='utf-8')
    estimates_frame(result).to_csv(paths['estimates'], index=False, encoding='utf-8')
    innovations_frame(result).to_csv(paths['innovations'], index=False, encoding='utf-8')
    metrics = Metrics(tail=result.cov_tail).compute_metrics(result, truth)
    update_json_log(paths['metrics'], {name: m['value'] for name, m in metrics.items()})
    if parameters is not None:
        paths['parameters'] = os.path.join(out_dir, f'{tag}_parameters.yaml')
        try_except_save(write_yaml, save_path=paths['parameters'], config=parameters.to_dict())
    print_rank(f'Calibration outputs written to {out_dir}')
    return paths


def agreement(first, second) -> pd.DataFrame:
    '''Per-parameter relative difference between the final estimates of two filter runs.'''
    a, b = first.final, second.final
    common = [q for q in first.parameters if q in b]
    if len(common) < len(first.parameters):
        print_rank(f'Filters disagree on the estimated set: {sorted(set(a) ^ set(b))}', loglevel=logging.WARNING)
    return pd.DataFrame({
        'parameter': common,
        first.filter: [a[q] for q in common],
        second.filter: [b[q] for q in common],
        'relative_difference': [abs(a[q] - b[q]) / max(abs(a[q]), abs(b[q])) if a[q] or b[q] else 0.0
                                for q in common],
    })


def comparison(truth: Sequence[MeasurementRecord], calibrated: Sequence[MeasurementRecord],
               guideline: Sequence[MeasurementRecord]):
    '''Time series of P and Q from the three sources, and their RMSE against the truth.

    Returns:
        (pd.DataFrame series, dict of RMSE values)
    '''
    sources = {'truth': records_to_frame(truth), 'calibrated': records_to_frame(calibrated),
               'guideline': records_to_frame(guideline)}
    lengths = {name: len(frame) for name, frame in sources.items()}
    if len(set(lengths.values())) != 1:
        raise InvalidArgument(f'series lengths differ: {lengths}')
    series = pd.DataFrame({'t': pd.to_numeric(sources['truth']['t'])})
    for name, frame in sources.items():
        for channel in ('P', 'Q'):
            series[f'{channel}_{name}'] = pd.to_numeric(frame[channel], errors='coerce').to_numpy()
    scores = {}
    for name in ('calibrated', 'guideline'):
        for channel in ('P', 'Q'):
            valid = series[[f'{channel}_truth', f'{channel}_{name}']].dropna()
            scores[f'rmse_{channel}_{name}'] = rmse(valid.iloc[:, 1].to_numpy(), valid.iloc[:, 0].to_numpy())
    return series, scores


def write_comparison(out_dir, series: pd.DataFrame, scores: Mapping):
    os.makedirs(out_dir, exist_ok=True)
    paths = {'comparison': os.path.join(out_dir, 'comparison.csv'), 'rmse': os.path.join(out_dir, 'rmse.yaml')}
    series.to_csv(paths['comparison'], index=False, encoding='utf-8')
    try_except_save(write_yaml, save_path=paths['rmse'], config={k: float(v) for k, v in scores.items()})
    print_rank('RMSE ' + ', '.join(f'{k}={v:.4e}' for k, v in scores.items()))
    return paths
