# Copyright (c) Microsoft Corporation.
# Licensed under the MIT license.

import torch

from core.filters.base import BaseFilter, CalibrationResult, prepare


class EKF(BaseFilter):
    '''Extended Kalman filter on the augmented vector.

    The transition Jacobian comes from the RK4 frame propagation; smooth
    operator slopes inside it are floored at :code:`cfg.eps`. The update
    uses the Joseph form.
    '''
    name = 'ekf'

    def predict(self, x, P, u, frame, step):
        result = self.model.propagate_with_jacobian(x, u, frame)
        F = result.transition_jacobian
        return result.next_state, F @ P @ F.T + self.W

    def update(self, x, P, obs, step):
        index, y, R = self._select(obs)
        H = self.model.measure_jacobian(x, obs.u)[index]
        innovation = y - self.model.measure(x, obs.u)[index]
        S = H @ P @ H.T + R
        K = torch.linalg.solve(S, H @ P).T
        x = x + K @ innovation
        A = torch.eye(P.shape[0], dtype=P.dtype) - K @ H
        P = A @ P @ A.T + K @ R @ K.T
        return x, P, innovation


def ekf_run(spec, cfg, data, init=None, params=None, references=None, k=12) -> CalibrationResult:
    '''Joint state and parameter estimation with the EKF.

    Args:
        spec (AugmentedSpec): estimated entries and measurement set.
        cfg (FilterConfig): noise, bounds and Jacobian settings.
        data (sequence of MeasurementRecord): uniformly sampled records.
        init (AugmentedState): starting point, equilibrium of the initial parameters by default.
        params (DeraParameters): values of the parameters that are not estimated.
        references (DeraInputs): V_ref0, Q_ref, P_ref and f_ref.

    Returns:
        CalibrationResult with one row per record.

    Raises:
        DivergenceError: covariance beyond repair, with the step index.
        DataFault: non-finite innovation.
    '''
    problem = prepare(spec, cfg, data, init, params, references, k=k)
    return EKF(problem.model, cfg).calibrate(problem)
