# Copyright (c) Microsoft Corporation.
# Licensed under the MIT license.
'''
In this file we define the convergence and fit metrics
reported after a calibration run.
'''
import logging

import numpy as np
import torch

from core.exceptions import InvalidArgument
from utils import print_rank


def _array(x):
    if isinstance(x, torch.Tensor):
        return x.detach().cpu().numpy()
    return np.asarray(x, dtype=float)


def coefficient_of_variation(series, tail=30):
    '''std / |mean| over the last :code:`tail` samples (population std).'''
    values = _array(series)[-tail:]
    if values.size == 0:
        raise InvalidArgument('empty series')
    mean = np.mean(values, axis=0)
    std = np.std(values, axis=0)
    with np.errstate(divide='ignore', invalid='ignore'):
        cov = np.where(mean != 0, std / np.abs(mean), np.where(std == 0, 0.0, np.inf))
    return cov


def relative_error(estimate, truth):
    truth = _array(truth)
    return np.abs(_array(estimate) - truth) / np.abs(truth)


def rmse(a, b):
    a, b = _array(a), _array(b)
    if a.shape != b.shape:
        raise InvalidArgument(f'shape mismatch {a.shape} vs {b.shape}')
    return float(np.sqrt(np.mean((a - b) ** 2)))


def lag1_autocorrelation(series):
    '''Sample lag-1 autocorrelation, NaN entries dropped.'''
    x = _array(series)
    x = x[np.isfinite(x)]
    if x.size < 3:
        return float('nan')
    x = x - x.mean()
    denom = float(np.dot(x, x))
    if denom == 0:
        return 0.0
    return float(np.dot(x[:-1], x[1:]) / denom)


class Metrics():
    '''Diagnostics of a calibration result, in the
    :code:`{'value': ..., 'higher_is_better': ...}` layout used by the reports.'''

    def __init__(self, tail=30):
        super().__init__()
        self.tail = tail

    def compute_metrics(self, result, truth=None):
        '''Per-parameter CoV and, when :code:`truth` maps names to values,
        relative errors, plus innovation whiteness per channel.'''
        print_rank("Computing metrics", loglevel=logging.DEBUG)
        metrics = {}
        cov = coefficient_of_variation(result.estimates, self.tail)
        for name, value in zip(result.parameters, np.atleast_1d(cov)):
            metrics[f'cov/{name}'] = {'value': float(value), 'higher_is_better': False}
        if truth is not None:
            for name in result.parameters:
                if name in truth:
                    err = relative_error(result.final[name], truth[name])
                    metrics[f'rel_error/{name}'] = {'value': float(err), 'higher_is_better': False}
        innovations = _array(result.innovations)[-self.tail:]
        for j, channel in enumerate(result.channels):
            metrics[f'innovation_lag1/{channel}'] = {
                'value': lag1_autocorrelation(innovations[:, j]),
                'higher_is_better': False,
            }
        metrics['final_trace'] = {'value': float(result.trace_history[-1]), 'higher_is_better': False}
        return metrics
