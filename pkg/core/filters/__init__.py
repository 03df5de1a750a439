# Copyright (c) Microsoft Corporation.
# Licensed under the MIT license.

from .base import (AugmentedState, BaseFilter, CalibrationProblem, CalibrationResult, DeraFilterModel,
                   FilterModel, LinearGaussianModel, Observation, prepare, repair_covariance)
from .ekf import EKF, ekf_run
from .ukf import UKF, MerweScaledSigmaPoints, ukf_run
from .jacobian import analytic_jacobian, check_supported


def select_filter(name):
    if name.lower() == 'ekf':
        return EKF
    elif name.lower() == 'ukf':
        return UKF
    else:
        raise ValueError(f'cannot use filter {name}')


def select_runner(name):
    if name.lower() == 'ekf':
        return ekf_run
    elif name.lower() == 'ukf':
        return ukf_run
    else:
        raise ValueError(f'cannot use filter {name}')
