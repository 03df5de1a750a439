# Copyright (c) Microsoft Corporation.
# Licensed under the MIT license.

import logging

import torch

from core.exceptions import DivergenceError
from core.filters.base import JITTERS, BaseFilter, CalibrationResult, prepare
from utils import print_rank


class MerweScaledSigmaPoints:
    '''Scaled unscented transform with 2n + 1 points.

    Args:
        n (int): state dimension.
        alpha (float): spread of the points, in (0, 1].
        beta (float): prior knowledge of the distribution, 2 for Gaussians.
        kappa (float): secondary scaling.
    '''

    def __init__(self, n, alpha=0.1, beta=2.0, kappa=0.0):
        self.n = n
        self.lam = alpha ** 2 * (n + kappa) - n
        c = 0.5 / (n + self.lam)
        self.Wm = torch.full((2 * n + 1,), c, dtype=torch.float64)
        self.Wc = self.Wm.clone()
        self.Wm[0] = self.lam / (n + self.lam)
        self.Wc[0] = self.lam / (n + self.lam) + (1.0 - alpha ** 2 + beta)

    def sigma_points(self, x, P, step=None):
        '''Rows of the returned [2n + 1, n] tensor are the points.

        Raises:
            DivergenceError: Cholesky factorization fails even at the largest jitter.
        '''
        scaled = (self.n + self.lam) * P
        L, info = torch.linalg.cholesky_ex(scaled)
        if int(info) != 0:
            eye = torch.eye(self.n, dtype=P.dtype)
            for jitter in JITTERS:
                L, info = torch.linalg.cholesky_ex(scaled + jitter * eye)
                if int(info) == 0:
                    print_rank(f'Step {step}: sigma points need jitter {jitter:.0e}', loglevel=logging.WARNING)
                    break
            else:
                raise DivergenceError('Cholesky factorization failed', index=step)
        return torch.cat([x.unsqueeze(0), x + L.T, x - L.T], dim=0)

    def mean(self, points):
        return self.Wm @ points

    def covariance(self, a, a_mean, b=None, b_mean=None):
        da = a - a_mean
        db = da if b is None else b - b_mean
        return (self.Wc.unsqueeze(-1) * da).T @ db


class UKF(BaseFilter):
    '''Unscented Kalman filter on the augmented vector; sigma points are
    clipped into the box constraints before propagation.'''
    name = 'ukf'

    def __init__(self, model, cfg=None):
        super().__init__(model, cfg)
        self.points = MerweScaledSigmaPoints(model.n, self.cfg.ukf_alpha, self.cfg.ukf_beta, self.cfg.ukf_kappa)

    def predict(self, x, P, u, frame, step):
        chi = self.model.project(self.points.sigma_points(x, P, step))
        chi = self.model.propagate(chi, u, frame)
        x_pred = self.points.mean(chi)
        P_pred = self.points.covariance(chi, x_pred) + self.W
        return x_pred, P_pred

    def update(self, x, P, obs, step):
        index, y, R = self._select(obs)
        chi = self.model.project(self.points.sigma_points(x, P, step))
        Y = self.model.measure(chi, obs.u)[:, index]
        y_pred = self.points.mean(Y)
        Pyy = self.points.covariance(Y, y_pred) + R
        Pxy = self.points.covariance(chi, self.points.mean(chi), Y, y_pred)
        K = torch.linalg.solve(Pyy, Pxy.T).T
        innovation = y - y_pred
        x = x + K @ innovation
        P = P - K @ Pyy @ K.T
        return x, P, innovation


def ukf_run(spec, cfg, data, init=None, params=None, references=None, k=12) -> CalibrationResult:
    '''Joint state and parameter estimation with the UKF; same contract as :code:`ekf_run`.'''
    problem = prepare(spec, cfg, data, init, params, references, k=k)
    return UKF(problem.model, cfg).calibrate(problem)
