# Copyright (c) Microsoft Corporation.
# Licensed under the MIT license.
'''
Shared pieces of the augmented-state Kalman filters: the model interface
the filters run on, the der_a instance of it, covariance repair and the
calibration result.
'''

from __future__ import annotations

import logging
import math
from abc import abstractmethod
from dataclasses import dataclass, field
from typing import List, Mapping, Sequence

import numpy as np
import torch

from core.augmented import AugmentedModel, AugmentedSpec
from core.config import FilterConfig
from core.dataset import MeasurementRecord, sample_period
from core.exceptions import ContractError, DataFault, DivergenceError
from core.filters.jacobian import analytic_jacobian, check_supported
from core.integrator import StepResult, propagate, propagate_with_jacobian
from core.metrics import coefficient_of_variation, relative_error
from core.model import GAINS, STATE_NAMES, TIME_CONSTANTS, DeraInputs, DeraParameters, active_states, equilibrium
from core.scenario import TripTimer
from utils import print_rank

JITTERS = (1e-12, 1e-11, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
PARAMETER_FLOOR = 1e-4
PARAMETER_CEILING = 1e4


@dataclass
class Observation:
    '''Inputs held from this sample on, and the measured channels (NaN where masked).'''
    t: float
    u: object
    y: torch.Tensor
    mask: torch.Tensor


class FilterModel:
    '''What a filter needs from a plant: frame propagation, its Jacobian,
    the measurement map and box constraints on the state.'''

    names: tuple = ()
    channels: tuple = ()

    @property
    def n(self):
        return len(self.names)

    @abstractmethod
    def propagate(self, x, u, frame):
        pass

    @abstractmethod
    def propagate_with_jacobian(self, x, u, frame) -> StepResult:
        pass

    @abstractmethod
    def measure(self, x, u):
        pass

    @abstractmethod
    def measure_jacobian(self, x, u):
        pass

    def project(self, x):
        lower = getattr(self, 'lower', None)
        upper = getattr(self, 'upper', None)
        if lower is None:
            return x
        return torch.maximum(torch.minimum(x, upper), lower)


class LinearGaussianModel(FilterModel):
    ''':math:`x_{k+1} = A x_k`, :math:`y_k = C x_k`, one frame per step.'''

    def __init__(self, A, C, names=None, channels=None):
        self.A = torch.as_tensor(A, dtype=torch.float64)
        self.C = torch.as_tensor(C, dtype=torch.float64)
        self.names = tuple(names or (f'x{i + 1}' for i in range(self.A.shape[0])))
        self.channels = tuple(channels or (f'y{i + 1}' for i in range(self.C.shape[0])))

    def propagate(self, x, u, frame):
        return x @ self.A.T

    def propagate_with_jacobian(self, x, u, frame):
        return StepResult(self.propagate(x, u, frame), self.A)

    def measure(self, x, u):
        return x @ self.C.T

    def measure_jacobian(self, x, u):
        return self.C


def filter_spec(spec: AugmentedSpec) -> AugmentedSpec:
    '''The spec the filter runs on: every state active under the flags, then the spec's parameters.'''
    return spec.with_states(active_states(spec.flags))


class DeraFilterModel(FilterModel):
    '''der_a on the augmented vector of :code:`filter_spec(spec)`.

    With :code:`cfg.log_parameters` the time constants and gains are
    filtered as their logarithms; :code:`to_model` and :code:`from_model`
    convert between the filtered vector and the one der_a runs on.

    Args:
        spec (AugmentedSpec): estimated entries.
        params (DeraParameters): values of every parameter not estimated.
        carried (sequence): ten state values read for frozen states.
        cfg (FilterConfig): substeps, slope floor, Jacobian and stage modes, bounds.
        k (int): smoothing sharpness.
        frame (float): sampling interval (s), sets the time-constant floor.
    '''

    def __init__(self, spec: AugmentedSpec, params: DeraParameters, carried, cfg: FilterConfig, k=12, frame=1 / 30):
        self.user_spec = spec
        self.spec = filter_spec(spec)
        self.params = params
        self.cfg = cfg
        self.k = k
        self.substeps = cfg.substeps
        self.mode = cfg.stage_mode
        self.model = AugmentedModel(self.spec, params, carried=carried, k=k, eps=cfg.eps)
        self.forward_model = AugmentedModel(self.spec, params, carried=carried, k=k, eps=None)
        self.names = self.spec.names
        self.channels = tuple(c for c in self.spec.channels if c != 'V')
        self.log_names = tuple(q for q in self.spec.parameters
                               if cfg.log_parameters and (q in TIME_CONSTANTS or q in GAINS))
        self.log_index = torch.tensor([self.spec.index(q) for q in self.log_names], dtype=torch.long)
        if cfg.jacobian == 'analytic':
            check_supported(self.spec)
            self._jacobian = lambda x, u: analytic_jacobian(self.spec, x, u, params, k=k, eps=cfg.eps)
        else:
            self._jacobian = self.model.jacobian
        self.lower, self.upper = self._bounds(frame / cfg.substeps)

    def _bounds(self, dt_sub):
        lower = torch.full((len(self.names),), -torch.inf, dtype=torch.float64)
        upper = torch.full((len(self.names),), torch.inf, dtype=torch.float64)
        for q in self.spec.parameters:
            i = self.spec.index(q)
            if q in TIME_CONSTANTS:
                lower[i] = max(PARAMETER_FLOOR, dt_sub / 2)
            elif q in GAINS:
                lower[i] = PARAMETER_FLOOR
            if q in self.cfg.parameter_bounds:
                lo, hi = self.cfg.parameter_bounds[q]
                lower[i] = max(float(lower[i]), lo)
                upper[i] = hi
            if q in self.log_names:
                lower[i] = math.log(float(lower[i]))
                upper[i] = math.log(min(float(upper[i]), PARAMETER_CEILING))
        return lower, upper

    def to_model(self, z):
        '''der_a vector of a filtered vector.'''
        if not len(self.log_index):
            return z
        x = z.clone()
        x[..., self.log_index] = torch.exp(z[..., self.log_index])
        return x

    def from_model(self, x):
        '''Filtered vector of a der_a vector.'''
        if not len(self.log_index):
            return x
        z = x.clone()
        z[..., self.log_index] = torch.log(x[..., self.log_index])
        return z

    def scale(self, z):
        '''Diagonal of d(to_model)/dz at :code:`z`.'''
        d = torch.ones(z.shape[-1], dtype=z.dtype)
        if len(self.log_index):
            d[self.log_index] = torch.exp(z[self.log_index])
        return d

    def _f(self, x, u):
        return self.forward_model.vector_field(x, u)

    def _f_clamped(self, x, u):
        return self.model.vector_field(x, u)

    def _keep_parameters(self, z, z_next):
        # parameters have no dynamics; keep the filtered values bit for bit
        if len(self.log_index):
            z_next[..., self.log_index] = z[..., self.log_index]
        return z_next

    def propagate(self, x, u, frame):
        x_next = propagate(self.to_model(x), u, frame, self.substeps, self._f, check=False)
        return self._keep_parameters(x, self.from_model(x_next))

    def propagate_with_jacobian(self, x, u, frame):
        result = propagate_with_jacobian(self.to_model(x), u, frame, self.substeps, self._f_clamped, self._jacobian,
                                         mode=self.mode, check=False)
        if not len(self.log_index):
            return result
        d = self.scale(x)
        F = result.transition_jacobian * d.unsqueeze(0) / d.unsqueeze(1)
        return StepResult(self._keep_parameters(x, self.from_model(result.next_state)), F)

    def measure(self, x, u):
        return self.forward_model.output(self.to_model(x), u, self.channels)

    def measure_jacobian(self, x, u):
        H = self.model.output_jacobian(self.to_model(x), u, self.channels)
        return H * self.scale(x).unsqueeze(0) if len(self.log_index) else H

    def observations(self, records: Sequence[MeasurementRecord], template: DeraInputs, frame) -> List[Observation]:
        '''Held inputs and measured channels per record; a masked V or freq keeps the previous value.'''
        timer = TripTimer(self.params)
        V, freq = template.V, template.freq
        out = []
        for r in records:
            V = r.V if r.V is not None else V
            freq = r.freq if r.freq is not None else freq
            u = template.replace(V=V, freq=freq, dt=frame, t_trip=timer.update(V, r.t))
            y = torch.tensor([r.value(c) for c in self.channels], dtype=torch.float64)
            mask = torch.tensor([r.is_valid(c) for c in self.channels])
            out.append(Observation(r.t, u, y, mask))
        return out


@dataclass
class AugmentedState:
    '''Dynamic states and parameters of one augmented vector.'''
    x: torch.Tensor
    theta: torch.Tensor
    spec: AugmentedSpec = None

    def vector(self):
        return torch.cat([self.x, self.theta])

    @staticmethod
    def at_equilibrium(spec: AugmentedSpec, params: DeraParameters, u: DeraInputs, k=12) -> AugmentedState:
        x_full = equilibrium(u, params, spec.flags, k=k)
        values = params.to_dict()
        x = torch.stack([x_full[STATE_NAMES.index(s)] for s in spec.active_states]) if spec.active_states \
            else torch.zeros(0, dtype=torch.float64)
        theta = torch.tensor([values[q] for q in spec.parameters], dtype=torch.float64)
        return AugmentedState(x, theta, spec)


@dataclass
class CalibrationResult:
    '''Outcome of a filter run. Rows of :code:`estimates`, :code:`states`
    and :code:`innovations` follow the measurement records.'''
    filter: str
    spec: AugmentedSpec
    parameters: tuple
    times: np.ndarray
    estimates: torch.Tensor
    states: torch.Tensor
    innovations: torch.Tensor
    channels: tuple
    covariance: torch.Tensor
    trace_history: np.ndarray
    initial: dict
    cov_tail: int = 30
    settings: dict = field(default_factory=dict)

    @property
    def final(self):
        return {q: float(v) for q, v in zip(self.parameters, self.estimates[-1])}

    @property
    def cov(self):
        values = np.atleast_1d(coefficient_of_variation(self.estimates, self.cov_tail))
        return {q: float(v) for q, v in zip(self.parameters, values)}

    def relative_errors(self, truth: Mapping):
        return {q: float(relative_error(self.final[q], truth[q])) for q in self.parameters if q in truth}

    def final_parameters(self, base: DeraParameters) -> DeraParameters:
        return base.replace(**self.final)


def symmetrize(P):
    return 0.5 * (P + P.T)


def repair_covariance(P, step):
    '''Symmetrize and, if needed, add escalating diagonal jitter until P is positive definite.

    Raises:
        DivergenceError: P stays indefinite at the largest jitter.
    '''
    P = symmetrize(P)
    if not bool(torch.isfinite(P).all()):
        raise DivergenceError('non-finite covariance', index=step)
    _, info = torch.linalg.cholesky_ex(P)
    if int(info) == 0:
        return P
    eye = torch.eye(P.shape[0], dtype=P.dtype)
    for jitter in JITTERS:
        candidate = P + jitter * eye
        _, info = torch.linalg.cholesky_ex(candidate)
        if int(info) == 0:
            print_rank(f'Step {step}: covariance repaired with jitter {jitter:.0e}', loglevel=logging.WARNING)
            return candidate
    raise DivergenceError('covariance lost positive definiteness', index=step)


class BaseFilter:
    '''Predict/update recursion over a sequence of observations.

    Subclasses implement :code:`predict` and :code:`update`; the run loop,
    projection onto the box constraints, the NaN checks and the
    bookkeeping live here.
    '''
    name = 'base'

    def __init__(self, model: FilterModel, cfg: FilterConfig = None):
        self.model = model
        self.cfg = cfg or FilterConfig()

    @abstractmethod
    def predict(self, x, P, u, frame, step):
        pass

    @abstractmethod
    def update(self, x, P, obs: Observation, step):
        pass

    def _select(self, obs: Observation):
        index = obs.mask.nonzero().flatten()
        return index, obs.y[index], self.R[index][:, index]

    def _check_innovation(self, innovation, step):
        if not bool(torch.isfinite(innovation).all()):
            raise DataFault(f'non-finite innovation at step {step}')

    def run(self, observations: Sequence[Observation], x0, P0, W, R):
        '''Filter the observations. The first one is only used for an update.

        Returns:
            (states [N, n], innovations [N, m], covariance traces [N], final covariance)
        '''
        self.W = torch.as_tensor(W, dtype=torch.float64)
        self.R = torch.as_tensor(R, dtype=torch.float64)
        x = self.model.project(torch.as_tensor(x0, dtype=torch.float64).clone())
        P = torch.as_tensor(P0, dtype=torch.float64).clone()
        m = self.R.shape[0]
        xs, innovations, traces = [], [], []
        for step, obs in enumerate(observations):
            if step > 0:
                prev = observations[step - 1]
                x, P = self.predict(x, P, prev.u, obs.t - prev.t, step)
                x = self.model.project(x)
                P = repair_covariance(P, step)
            full = torch.full((m,), torch.nan, dtype=torch.float64)
            if bool(obs.mask.any()):
                x, P, innovation = self.update(x, P, obs, step)
                self._check_innovation(innovation, step)
                full[obs.mask.nonzero().flatten()] = innovation
                x = self.model.project(x)
                P = repair_covariance(P, step)
            xs.append(x)
            innovations.append(full)
            traces.append(float(torch.trace(P)))
            print_rank(f'{self.name} step {step}: trace(P) {traces[-1]:.4e}', loglevel=logging.DEBUG)
        return torch.stack(xs), torch.stack(innovations), np.asarray(traces), P

    def calibrate(self, problem: CalibrationProblem) -> CalibrationResult:
        '''Filter the records :code:`cfg.passes` times.

        Pass j of J runs with R scaled by :code:`noise_annealing ** (J - 1 - j)`;
        each later pass starts from the parameters and parameter covariance
        the previous one ended with. Estimates, states and innovations come
        from the last pass; the trace history spans all of them.
        '''
        cfg = self.cfg
        print_rank(f'Running {self.name.upper()} on {problem.spec.name}: {len(problem.observations)} records, '
                   f'{len(problem.spec.parameters)} parameters, {cfg.passes} pass(es)')
        x0, P0 = problem.x0, problem.P0
        histories = []
        for j in range(cfg.passes):
            scale = cfg.noise_annealing ** (cfg.passes - 1 - j)
            xs, innovations, traces, P = self.run(problem.observations, x0, P0, problem.W, problem.R * scale)
            histories.append(traces)
            if cfg.passes > 1:
                print_rank(f'{self.name.upper()} pass {j + 1}: R x {scale:.3g}, trace(P) {traces[-1]:.4e}')
            if j + 1 < cfg.passes:
                x0, P0 = problem.restart(xs[-1], P)

        model = problem.model
        spec = problem.spec
        names = model.names
        p_idx = [names.index(q) for q in spec.parameters]
        s_idx = [names.index(s) for s in spec.active_states]
        keep = s_idx + p_idx
        natural = model.to_model(xs) if isinstance(model, DeraFilterModel) else xs
        if isinstance(model, DeraFilterModel):
            d = model.scale(xs[-1])
            P = P * d.unsqueeze(0) * d.unsqueeze(1)
        result = CalibrationResult(
            filter=self.name,
            spec=spec,
            parameters=spec.parameters,
            times=np.asarray([o.t for o in problem.observations]),
            estimates=natural[:, p_idx],
            states=natural[:, s_idx],
            innovations=innovations,
            channels=model.channels,
            covariance=P[keep][:, keep],
            trace_history=np.concatenate(histories),
            initial=dict(problem.initial),
            cov_tail=cfg.cov_tail,
            settings={'seed': cfg.seed, 'eps': cfg.eps, 'jacobian': cfg.jacobian, 'substeps': cfg.substeps,
                      'stage_mode': cfg.stage_mode, 'passes': cfg.passes, 'noise_annealing': cfg.noise_annealing,
                      'log_parameters': cfg.log_parameters},
        )
        print_rank(f'{self.name.upper()} finished: ' + ', '.join(f'{q}={v:.5g}' for q, v in result.final.items()))
        return result


@dataclass
class CalibrationProblem:
    spec: AugmentedSpec
    model: DeraFilterModel
    observations: List[Observation]
    x0: torch.Tensor
    P0: torch.Tensor
    W: torch.Tensor
    R: torch.Tensor
    initial: dict
    u0: DeraInputs = None

    def restart(self, z, P):
        '''Starting point of the next pass from the end of this one.

        Parameters and their covariance block carry over; the states go back
        to the equilibrium of the new parameters at the first record with
        their initial variances.
        '''
        model = self.model
        names = model.names
        p_idx = [names.index(q) for q in self.spec.parameters]
        natural = model.to_model(z)
        values = {q: float(natural[names.index(q)]) for q in self.spec.parameters}
        x_full = equilibrium(self.u0, model.params.replace(**values), self.spec.flags, k=model.k)
        x0 = model.from_model(model.model.pack(x_full, {**model.model.base, **values}))
        x0[p_idx] = z[p_idx]
        idx = torch.tensor(p_idx)
        P0 = self.P0.clone()
        P0[idx.unsqueeze(1), idx] = symmetrize(P[idx][:, idx])
        return model.project(x0), P0


def prepare(spec: AugmentedSpec, cfg: FilterConfig, data: Sequence[MeasurementRecord], init: AugmentedState = None,
            params: DeraParameters = None, references: DeraInputs = None, k=12) -> CalibrationProblem:
    '''Assemble the filter model, observations and noise matrices of a der_a calibration.

    Args:
        spec (AugmentedSpec): entries to estimate.
        cfg (FilterConfig): filter settings; its initial parameters seed theta_0.
        data (sequence): measurement records at a uniform rate.
        init (AugmentedState): starting point; by default the equilibrium of theta_0 at the first record.
        params (DeraParameters): values of the parameters that are not estimated.
        references (DeraInputs): V_ref0, Q_ref, P_ref, f_ref.
    '''
    if len(data) < 2:
        raise DataFault('calibration needs at least two records')
    if 'V' not in spec.channels:
        raise ContractError(f'measurement set {spec.measurement_set} lacks the V input channel')
    frame = sample_period(data)
    params = cfg.load_initial_parameters(base=params)
    references = (references or DeraInputs()).replace(dt=frame)
    first = data[0]
    u0 = references.replace(V=first.value('V', references.V), freq=first.value('freq', references.freq))

    x_full = equilibrium(u0, params, spec.flags, k=k)
    model = DeraFilterModel(spec, params, x_full.tolist(), cfg, k=k, frame=frame)
    names = model.names
    x0 = model.model.pack(x_full)
    if init is not None:
        if init.theta.shape[0] != len(spec.parameters) or init.x.shape[0] != len(spec.active_states):
            raise ContractError('initial state does not match the spec')
        for s, v in zip(spec.active_states, init.x):
            x0[names.index(s)] = v
        for q, v in zip(spec.parameters, init.theta):
            x0[names.index(q)] = v

    theta0 = {q: float(x0[names.index(q)]) for q in spec.parameters}
    p0, w = [], []
    for name in names:
        if name in model.log_names:
            p0.append(cfg.initial_covariance.get(name, cfg.parameter_log_std ** 2))
            w.append(cfg.process_noise.get(name, cfg.parameter_process_noise))
        elif name in spec.parameters:
            p0.append(cfg.initial_covariance.get(name, max(abs(theta0[name]), 0.1) ** 2))
            w.append(cfg.process_noise.get(name, cfg.parameter_process_noise))
        else:
            p0.append(cfg.initial_covariance.get(name, cfg.state_initial_variance))
            w.append(cfg.process_noise.get(name, cfg.state_process_noise))
    R = torch.diag(torch.tensor([cfg.channel_variance(c) for c in model.channels], dtype=torch.float64))
    observations = model.observations(data, references, frame)
    return CalibrationProblem(spec, model, observations, model.from_model(x0),
                              torch.diag(torch.tensor(p0, dtype=torch.float64)),
                              torch.diag(torch.tensor(w, dtype=torch.float64)), R, theta0, u0)
