# Copyright (c) Microsoft Corporation.
# Licensed under the MIT license.

import json
import os

import numpy as np
import pandas as pd
import pytest
import torch
import yaml

from core.augmented import AugmentedSpec
from core.dataset import MeasurementRecord
from core.exceptions import InvalidArgument
from core.filters import CalibrationResult
from core.model import DeraParameters
from core.observability import EvaluationPoint, LinearSystem, analyze
from core.report import (agreement, calibration_summary, comparison, estimates_frame, weight_table, write_calibration,
                         write_comparison, write_observability_report)


def make_result(name='ekf', final=(0.21, 4.9)):
    n = 40
    estimates = torch.stack([torch.linspace(0.05, final[0], n), torch.linspace(4.0, final[1], n)], dim=-1)
    estimates[-30:] = torch.tensor(final)
    return CalibrationResult(
        filter=name,
        spec=AugmentedSpec.preset('CASE1_REDUCED'),
        parameters=('T_rv', 'k_qv'),
        times=np.arange(n) / 30.0,
        estimates=estimates,
        states=torch.zeros(n, 5),
        innovations=torch.zeros(n, 2),
        channels=('P', 'Q'),
        covariance=torch.eye(7),
        trace_history=np.linspace(2.0, 1.0, n),
        initial={'T_rv': 0.05, 'k_qv': 4.0},
    )


def test_calibration_summary():
    summary = calibration_summary(make_result(), truth={'T_rv': 0.2})
    row = summary.set_index('parameter').loc['T_rv']
    assert row['estimate'] == pytest.approx(0.21)
    assert row['initialization'] == 0.05
    assert row['cov'] == pytest.approx(0.0)
    assert row['relative_error'] == pytest.approx(0.05)
    assert np.isnan(summary.set_index('parameter').loc['k_qv', 'relative_error'])


def test_write_calibration(tmp_path):
    paths = write_calibration(str(tmp_path), make_result(), truth={'T_rv': 0.2},
                              parameters=DeraParameters(T_rv=0.21))
    estimates = pd.read_csv(paths['estimates'])
    assert list(estimates.columns) == ['t', 'T_rv', 'k_qv', 'trace_P']
    assert len(estimates) == 40
    with open(paths['metrics']) as f:
        metrics = json.load(f)
    assert metrics['rel_error/T_rv'] == pytest.approx(0.05)
    with open(paths['parameters']) as f:
        assert yaml.safe_load(f)['T_rv'] == 0.21
    assert os.path.basename(paths['summary']) == 'ekf_summary.csv'


def test_estimates_keep_last_pass_trace():
    result = make_result()
    result.trace_history = np.concatenate([np.full(40, 5.0), np.linspace(2.0, 1.0, 40)])
    frame = estimates_frame(result)
    assert len(frame) == 40
    assert frame['trace_P'].iloc[0] == pytest.approx(2.0)


def test_agreement():
    frame = agreement(make_result('ekf'), make_result('ukf', final=(0.2, 4.9)))
    row = frame.set_index('parameter').loc['T_rv']
    assert row['relative_difference'] == pytest.approx(0.01 / 0.21)
    assert frame.set_index('parameter').loc['k_qv', 'relative_difference'] == 0.0


def test_observability_outputs(tmp_path):
    system = LinearSystem([[-1.0, 0.0], [0.0, -2.0]], [[1.0, 0.0]])
    report = analyze([EvaluationPoint(system, torch.tensor([0.5, 0.3]))], parameters=('x2',))
    table = weight_table(report)
    assert table.loc[0, 'entry'] == 'x2' and table.loc[0, 'is_parameter']
    paths = write_observability_report(str(tmp_path), report)
    with open(paths['report']) as f:
        document = yaml.safe_load(f)
    assert document['rank'] == 1 and not document['is_full_rank']
    assert document['top_parameters'] == ['x2']
    assert len(pd.read_csv(paths['spectrum'])) == 2


def records(P, Q):
    return [MeasurementRecord(t=i / 30, V=1.0, freq=1.0, P=p, Q=q, I_d=p, I_q=q) for i, (p, q) in enumerate(zip(P, Q))]


def test_comparison(tmp_path):
    truth = records([0.5, 0.5, 0.5], [0.2, 0.2, 0.2])
    calibrated = records([0.5, 0.5, 0.5], [0.2, 0.2, None])
    guideline = records([0.6, 0.4, 0.5], [0.2, 0.2, 0.2])
    series, scores = comparison(truth, calibrated, guideline)
    assert scores['rmse_P_calibrated'] == 0.0
    assert scores['rmse_Q_calibrated'] == 0.0
    assert scores['rmse_P_guideline'] == pytest.approx(np.sqrt(0.02 / 3))
    assert list(series.columns[:3]) == ['t', 'P_truth', 'Q_truth']
    paths = write_comparison(str(tmp_path), series, scores)
    with open(paths['rmse']) as f:
        assert yaml.safe_load(f)['rmse_P_calibrated'] == 0.0
    with pytest.raises(InvalidArgument):
        comparison(truth, calibrated[:2], guideline)
