# Copyright (c) Microsoft Corporation.
# Licensed under the MIT license.

import numpy as np
import pytest
import torch

from core.exceptions import InvalidArgument
from core.metrics import Metrics, coefficient_of_variation, lag1_autocorrelation, relative_error, rmse


def test_coefficient_of_variation():
    series = np.concatenate([np.linspace(0.0, 5.0, 50), np.full(30, 2.0)])
    assert coefficient_of_variation(series) == pytest.approx(0.0)
    tail = np.array([1.0, 3.0])
    assert coefficient_of_variation(tail, tail=2) == pytest.approx(0.5)
    columns = coefficient_of_variation(torch.tensor([[1.0, 0.0], [3.0, 0.0]]), tail=2)
    assert columns.tolist() == pytest.approx([0.5, 0.0])
    with pytest.raises(InvalidArgument):
        coefficient_of_variation([])


def test_errors():
    assert relative_error(0.21, 0.2) == pytest.approx(0.05)
    assert rmse([1.0, 2.0], [1.0, 4.0]) == pytest.approx(np.sqrt(2.0))
    with pytest.raises(InvalidArgument):
        rmse([1.0], [1.0, 2.0])


def test_lag1_autocorrelation():
    alternating = np.array([1.0, -1.0] * 10)
    assert lag1_autocorrelation(alternating) < -0.9
    assert lag1_autocorrelation(np.array([1.0, np.nan, 1.0, 1.0])) == 0.0
    assert np.isnan(lag1_autocorrelation([1.0, 2.0]))


class FakeResult:
    parameters = ('T_rv', 'k_qv')
    channels = ('P', 'Q')
    estimates = torch.tensor([[0.1, 4.0], [0.2, 5.0], [0.2, 5.0]])
    innovations = torch.tensor([[0.1, 0.0], [-0.1, float('nan')], [0.1, 0.0], [-0.1, 0.0]])
    trace_history = np.array([3.0, 2.0, 1.0])

    @property
    def final(self):
        return {'T_rv': 0.2, 'k_qv': 5.0}


def test_compute_metrics():
    metrics = Metrics(tail=2).compute_metrics(FakeResult(), truth={'T_rv': 0.25})
    assert metrics['cov/T_rv']['value'] == pytest.approx(0.0)
    assert metrics['rel_error/T_rv']['value'] == pytest.approx(0.2)
    assert 'rel_error/k_qv' not in metrics
    assert metrics['final_trace']['value'] == 1.0
    assert set(metrics) >= {'innovation_lag1/P', 'innovation_lag1/Q'}
    assert not metrics['cov/k_qv']['higher_is_better']
