# Copyright (c) Microsoft Corporation.
# Licensed under the MIT license.
'''
Local observability of parameter-augmented systems.

The observability matrix is the Jacobian of the stacked Lie derivatives
:math:`[h, L_f h, \\dots, L_f^K h]`. Its singular values give the rank
verdict and the right singular vector of the smallest nonzero singular
value gives the direction that the outputs see worst; entries with a
large share of that direction are the first candidates for removal.

Any object with :code:`vector_field(x, u)`, :code:`output(x, u)` and
:code:`names` can be analyzed; :code:`core.augmented.AugmentedModel` is
the der_a instance.
'''

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence

import numpy as np
import torch

from core import taylor
from core.augmented import THRESHOLD_PARAMETERS, AugmentedModel, AugmentedSpec
from core.exceptions import InvalidArgument, NumericalFault, ObservabilityFault, RankDeficiencyError
from core.model import STATE_NAMES, DeraInputs, DeraParameters
from core.smoothing import DEFAULT_SHARPNESS
from utils import print_rank

SCHEMES = ('taylor', 'jvp', 'fd')
SCALINGS = ('block', 'raw')
MACHINE_EPS = float(np.finfo(np.float64).eps)
METER_NOISE = {'V': 1e-4, 'P': 1e-4, 'Q': 1e-4}


@dataclass
class AnalysisSettings:
    '''Knobs of the observability analysis.

    Attributes:
        max_order (int): highest Lie derivative order, None for min(n_aug - 1, cap_order).
        cap_order (int): order cap applied when max_order is None.
        scaling (str): :code:`block` normalizes every Lie order block by its infinity norm.
        scheme (str): :code:`taylor` (exact), :code:`jvp` (nested forward mode) or :code:`fd`.
        safety (float): multiplier of the relative rank tolerance.
        points (int): trajectory samples used as evaluation points, None for all.
        jitter (float): relative seeded displacement of the dynamic states at each point.
        seed (int): seed of the jitter.
        k (int): smoothing sharpness.
        meter_noise (dict): standard deviation of the V, P and Q meters (pu), used to
            whiten the rows behind the singular value statistics.
    '''
    max_order: Optional[int] = None
    cap_order: int = 8
    scaling: str = 'block'
    scheme: str = 'taylor'
    safety: float = 1e3
    points: Optional[int] = 12
    jitter: float = 1e-2
    seed: int = 0
    k: int = DEFAULT_SHARPNESS
    meter_noise: dict = field(default_factory=lambda: dict(METER_NOISE))

    def __post_init__(self):
        self.meter_noise = {**METER_NOISE, **(self.meter_noise or {})}
        if any(not v > 0 for v in self.meter_noise.values()):
            raise InvalidArgument('meter noise must be positive')
        if self.scheme not in SCHEMES:
            raise InvalidArgument(f'unknown differentiation scheme {self.scheme!r}, choose from {SCHEMES}')
        if self.scaling not in SCALINGS:
            raise InvalidArgument(f'unknown row scaling {self.scaling!r}, choose from {SCALINGS}')
        if self.max_order is not None and self.max_order < 1:
            raise InvalidArgument('max_order must be at least 1')

    def order_for(self, n_aug):
        if self.max_order is not None:
            return self.max_order
        return max(1, min(n_aug - 1, self.cap_order))


@dataclass
class EvaluationPoint:
    system: object
    x: torch.Tensor
    u: object = None
    t: float = 0.0


@dataclass
class ObservabilityReport:
    '''Summary of the analysis along a set of evaluation points.

    :code:`weakest_direction_weights` is restricted to parameters;
    :code:`entry_weights` covers every augmented entry and sums to 1.
    '''
    names: tuple
    parameters: tuple
    rank: int
    n_aug: int
    is_full_rank: bool
    singular_values: list
    entry_weights: dict
    weakest_direction_weights: dict
    evaluation_point: list
    point_ranks: list
    sigma_min: list
    sigma_min_mean: float
    sigma_min_std: float
    sigma_min_scaled_mean: float
    sigma_min_scaled_std: float
    max_order: int
    tolerance: float
    scaling: str
    scheme: str
    measurement_set: str = ''
    spec: object = None
    trajectory: object = None
    settings: AnalysisSettings = None

    @property
    def verdict(self):
        if self.is_full_rank:
            return f'full rank ({self.rank})'
        return f'rank-deficient (rank {self.rank} < {self.n_aug})'

    def top_parameters(self, count=3):
        ranked = sorted(self.weakest_direction_weights.items(), key=lambda kv: kv[1], reverse=True)
        return [name for name, _ in ranked[:count]]


@dataclass
class EntrySpec:
    '''Plain list of augmented entries, for systems other than der_a.'''
    states: tuple
    parameters: tuple
    name: str = 'custom'

    @property
    def names(self):
        return tuple(self.states) + tuple(self.parameters)

    @property
    def active_states(self):
        return tuple(self.states)

    def without(self, *names) -> EntrySpec:
        return EntrySpec(tuple(s for s in self.states if s not in names),
                         tuple(p for p in self.parameters if p not in names), self.name)


class FunctionSystem:
    '''System given by two callables :code:`f(x, u)` and :code:`h(x, u)`.'''

    def __init__(self, f: Callable, h: Callable, names: Sequence[str]):
        self.f = f
        self.h = h
        self.names = tuple(names)

    def vector_field(self, x, u=None):
        return self.f(x, u)

    def output(self, x, u=None):
        return self.h(x, u)


class LinearSystem(FunctionSystem):
    ''':math:`\\dot{x} = Ax`, :math:`y = Cx`.'''

    def __init__(self, A, C, names=None):
        self.A = torch.as_tensor(A, dtype=torch.float64)
        self.C = torch.as_tensor(C, dtype=torch.float64)
        names = names or [f'x{i + 1}' for i in range(self.A.shape[0])]
        super().__init__(self._f, self._h, names)

    @staticmethod
    def _apply(M, x):
        if isinstance(x, taylor.Jet):
            return taylor.Jet(torch.einsum('ij,jk->ik', M, x.coeffs))
        return x @ M.T

    def _f(self, x, u=None):
        return self._apply(self.A, x)

    def _h(self, x, u=None):
        return self._apply(self.C, x)


def _check_stack(stack, order, outputs):
    finite = torch.isfinite(stack)
    if not bool(finite.all()):
        first = int((~finite).nonzero()[0])
        raise ObservabilityFault(f'non-finite Lie derivative of order {first // outputs} at output {first % outputs}',
                                 order=first // outputs, output=first % outputs)


def _nested_jvp_stack(system, u, order):
    fns = [lambda x: system.output(x, u)]
    for _ in range(order):
        prev = fns[-1]

        def nxt(x, prev=prev):
            return torch.func.jvp(prev, (x,), (system.vector_field(x, u),))[1]
        fns.append(nxt)
    return lambda x: torch.cat([fn(x) for fn in fns])


def _taylor_stack(system, u, order):
    def stack(x):
        rows = taylor.lie_derivatives(lambda j: system.vector_field(j, u), lambda j: system.output(j, u), x, order)
        return rows.reshape(-1)
    return stack


def _stack_function(system, u, order, scheme):
    if scheme == 'jvp':
        return _nested_jvp_stack(system, u, order)
    return _taylor_stack(system, u, order)


def lie_derivative_stack(system, x0, u=None, max_order=1, scheme='taylor'):
    '''Stacked Lie derivatives :math:`[h_1..h_p, L_f h_1, .., L_f^K h_p]` at :code:`x0`.

    Raises:
        ObservabilityFault: naming the order and output index of the first non-finite entry.
    '''
    if max_order < 1:
        raise InvalidArgument('max_order must be at least 1')
    if scheme not in SCHEMES:
        raise InvalidArgument(f'unknown differentiation scheme {scheme!r}')
    x0 = torch.as_tensor(x0, dtype=torch.float64)
    stack = _stack_function(system, u, max_order, 'taylor' if scheme == 'fd' else scheme)(x0)
    _check_stack(stack, max_order, stack.shape[0] // (max_order + 1))
    return stack


def _fd_jacobian(fn, x0):
    columns = []
    for j in range(x0.shape[0]):
        h = 1e-6 * (1.0 + abs(float(x0[j])))
        step = torch.zeros_like(x0)
        step[j] = h
        columns.append((fn(x0 + step) - fn(x0 - step)) / (2.0 * h))
    return torch.stack(columns, dim=-1)


def scale_blocks(O, outputs):
    '''Divide every Lie order block of rows by its own infinity norm.'''
    blocks = []
    for block in O.split(outputs, dim=0):
        norm = block.abs().max()
        blocks.append(block / norm if float(norm) > 0 else block)
    return torch.cat(blocks, dim=0)


def observability_matrix(system, x0, u=None, max_order=None, scaling='block', scheme='taylor', raw=False):
    '''Jacobian of the Lie derivative stack, shape (p (K + 1), n_aug).

    Args:
        system: object exposing :code:`vector_field`, :code:`output` and :code:`names`.
        x0 (torch.Tensor): evaluation point.
        u: inputs held constant.
        max_order (int): highest order K, defaults to min(n - 1, 8).
        scaling (str): :code:`block` or :code:`raw`.
        scheme (str): :code:`taylor`, :code:`jvp` or :code:`fd`.
        raw (bool): also return the unscaled matrix.
    '''
    x0 = torch.as_tensor(x0, dtype=torch.float64)
    order = max_order if max_order is not None else max(1, min(x0.shape[0] - 1, 8))
    stack_fn = _stack_function(system, u, order, 'taylor' if scheme == 'fd' else scheme)
    stack = stack_fn(x0)
    outputs = stack.shape[0] // (order + 1)
    _check_stack(stack, order, outputs)
    if scheme == 'fd':
        O = _fd_jacobian(stack_fn, x0)
    else:
        O = torch.func.jacfwd(stack_fn)(x0)
    if not bool(torch.isfinite(O).all()):
        raise ObservabilityFault('non-finite observability matrix entry')
    scaled = scale_blocks(O, outputs) if scaling == 'block' else O
    return (scaled, O) if raw else scaled


def rank_tolerance(singular_values, shape, safety=1e3):
    '''Relative cut: max(rows, cols) * sigma_max * machine eps * safety.'''
    sigma_max = float(singular_values[0]) if len(singular_values) else 0.0
    return max(shape) * sigma_max * MACHINE_EPS * safety


def _svd(O, index):
    try:
        _, s, vh = torch.linalg.svd(O, full_matrices=True)
    except RuntimeError as e:
        raise NumericalFault(f'SVD failed: {e}', index=index)
    return s, vh


def channel_noise(system, x, u, meter_noise=None):
    '''Noise standard deviation of every output channel at :code:`x`.

    V, P and Q are metered. The dq currents are derived as P / V and Q / V and
    carry the noise of both meters, to first order. Systems without der_a
    channels return None.
    '''
    spec = getattr(system, 'spec', None)
    if spec is None or u is None:
        return None
    meter_noise = {**METER_NOISE, **(meter_noise or {})}
    states = system.full_state(x)
    i_q, i_d = float(states[3]), float(states[9])
    v = float(u.V)
    std = {
        'V': meter_noise['V'],
        'P': meter_noise['P'],
        'Q': meter_noise['Q'],
        'I_d': math.hypot(meter_noise['P'], i_d * meter_noise['V']) / v,
        'I_q': math.hypot(meter_noise['Q'], i_q * meter_noise['V']) / v,
    }
    return torch.tensor([std[c] for c in spec.channels], dtype=torch.float64)


def whiten(O, noise, order):
    '''Divide the rows of every channel by its noise standard deviation.'''
    if noise is None:
        return O
    return O / noise.repeat(order + 1).unsqueeze(-1)


def analyze(points: Sequence[EvaluationPoint], names=None, parameters=(), settings: AnalysisSettings = None,
            measurement_set='') -> ObservabilityReport:
    '''Per-point SVD of the observability matrix and aggregate report.

    The reported rank is the largest pointwise rank; weights average the
    normalized right singular vectors of the smallest singular value over
    the points reaching it. Under a rank deficiency that vector spans part
    of the unobservable subspace.
    Singular value statistics use the unscaled matrix with every channel
    whitened by its noise, see :code:`channel_noise`.
    '''
    if not points:
        raise InvalidArgument('analysis needs at least one evaluation point')
    settings = settings or AnalysisSettings()
    names = tuple(names or points[0].system.names)
    n_aug = len(names)
    order = settings.order_for(n_aug)

    ranks, spectra, vectors, sigma_raw, sigma_scaled, tolerances = [], [], [], [], [], []
    for i, point in enumerate(points):
        scaled, O = observability_matrix(point.system, point.x, point.u, max_order=order,
                                         scaling=settings.scaling, scheme=settings.scheme, raw=True)
        s, vh = _svd(scaled, i)
        s_raw, _ = _svd(whiten(O, channel_noise(point.system, point.x, point.u, settings.meter_noise), order), i)
        tol = rank_tolerance(s, scaled.shape, settings.safety)
        rank = int((s > tol).sum())
        ranks.append(rank)
        spectra.append(s)
        vectors.append(vh[-1])
        tolerances.append(tol)
        sigma_raw.append(float(s_raw[-1]) if s_raw.shape[0] >= n_aug else 0.0)
        sigma_scaled.append(float(s[-1]) if s.shape[0] >= n_aug else 0.0)
        print_rank(f'Point {i} (t={point.t:.3f}): rank {rank}/{n_aug}, sigma_min {sigma_raw[-1]:.4e}',
                   loglevel=logging.DEBUG)

    best = max(ranks)
    chosen = [i for i, r in enumerate(ranks) if r == best]
    weights = torch.zeros(n_aug, dtype=torch.float64)
    for i in chosen:
        v = vectors[i].abs()
        total = v.sum()
        if float(total) > 0:
            weights = weights + v / total
    if float(weights.sum()) > 0:
        weights = weights / weights.sum()
    entry_weights = {n: float(w) for n, w in zip(names, weights)}
    reference = chosen[0]

    return ObservabilityReport(
        names=names,
        parameters=tuple(parameters),
        rank=best,
        n_aug=n_aug,
        is_full_rank=best == n_aug,
        singular_values=[float(v) for v in spectra[reference]],
        entry_weights=entry_weights,
        weakest_direction_weights={q: entry_weights[q] for q in parameters},
        evaluation_point=[float(v) for v in points[reference].x],
        point_ranks=ranks,
        sigma_min=sigma_raw,
        sigma_min_mean=float(np.mean(sigma_raw)),
        sigma_min_std=float(np.std(sigma_raw)),
        sigma_min_scaled_mean=float(np.mean(sigma_scaled)),
        sigma_min_scaled_std=float(np.std(sigma_scaled)),
        max_order=order,
        tolerance=float(tolerances[reference]),
        scaling=settings.scaling,
        scheme=settings.scheme,
        measurement_set=measurement_set,
        settings=settings,
    )


@dataclass
class Trajectory:
    '''Simulated der_a run used to place evaluation points.'''
    times: torch.Tensor
    states: torch.Tensor
    inputs: List[DeraInputs]
    params: DeraParameters
    flags: object = None


def evaluation_points(spec: AugmentedSpec, trajectory: Trajectory, settings: AnalysisSettings):
    count = len(trajectory.inputs)
    if settings.points is None or settings.points >= count:
        picks = list(range(count))
    else:
        picks = np.linspace(0, count - 1, settings.points).round().astype(int).tolist()
    generator = torch.Generator().manual_seed(settings.seed)
    points = []
    for i in picks:
        x = trajectory.states[i].clone()
        noise = torch.randn(x.shape, generator=generator, dtype=x.dtype)
        x = x + settings.jitter * torch.clamp(x.abs(), min=0.1) * noise
        model = AugmentedModel(spec, trajectory.params, carried=x.tolist(), k=settings.k)
        points.append(EvaluationPoint(model, model.pack(x), trajectory.inputs[i], float(trajectory.times[i])))
    return points


def analyze_spec(spec: AugmentedSpec, trajectory: Trajectory, settings: AnalysisSettings = None) -> ObservabilityReport:
    '''Observability of a der_a augmentation along a simulated trajectory.'''
    settings = settings or AnalysisSettings()
    print_rank(f'Observability of {spec.name} ({spec.n_aug} entries, {spec.measurement_set}), '
               f'order {settings.order_for(spec.n_aug)}, scheme {settings.scheme}')
    report = analyze(evaluation_points(spec, trajectory, settings), spec.names, spec.parameters, settings,
                     spec.measurement_set)
    report.spec = spec
    report.trajectory = trajectory
    print_rank(f'{spec.name}: {report.verdict}, mean sigma_min {report.sigma_min_mean:.4e}')
    return report


@dataclass
class Removal:
    step: int
    name: str
    weight: float
    rank_before: int
    n_before: int
    reason: str

    def to_dict(self):
        return self.__dict__.copy()


def select_estimable(spec, report: ObservabilityReport, weight_threshold=0.0, *, pinned=(),
                     pre_exclude=THRESHOLD_PARAMETERS, state_exclusions=('x8',),
                     builder: Callable = None, audit: list = None):
    '''Drop parameters until the augmentation is observable.

    Threshold-type parameters in :code:`pre_exclude` and the states in
    :code:`state_exclusions` are removed first. Then the parameter with the
    largest weakest-direction weight is removed, one at a time, until the
    rank is full. Parameters in :code:`pinned` are never removed.

    Args:
        spec: AugmentedSpec (or EntrySpec) analyzed by :code:`report`.
        report (ObservabilityReport): analysis of :code:`spec`.
        weight_threshold (float): a removal needs at least this weight.
        builder (callable): spec -> report, defaults to re-running :code:`analyze_spec`
            on the report's trajectory.
        audit (list): receives one :code:`Removal` per removed entry.

    Returns:
        the reduced spec.

    Raises:
        RankDeficiencyError: no admissible removal leads to full rank.
    '''
    audit = [] if audit is None else audit
    if report.is_full_rank:
        print_rank(f'{getattr(spec, "name", "spec")} already has full rank {report.rank}, nothing to remove')
        return spec
    if builder is None:
        if report.trajectory is None:
            raise InvalidArgument('select_estimable needs a builder when the report carries no trajectory')
        builder = lambda s: analyze_spec(s, report.trajectory, report.settings)

    pinned = set(pinned)
    step = 0
    current = spec
    forced = [q for q in current.parameters if q in pre_exclude and q not in pinned]
    forced += [s for s in current.active_states if s in state_exclusions]
    for name in forced:
        audit.append(Removal(step, name, report.entry_weights.get(name, 0.0), report.rank, report.n_aug, 'pre-excluded'))
        print_rank(f'Removing {name}: threshold-type entry excluded up front')
        step += 1
    if forced:
        current = current.without(*forced)
        report = builder(current)

    while not report.is_full_rank:
        candidates = {q: w for q, w in report.weakest_direction_weights.items() if q not in pinned}
        if not candidates:
            raise RankDeficiencyError(f'rank {report.rank} < {report.n_aug} with only pinned parameters left',
                                      audit=audit, spec=current)
        name, weight = max(candidates.items(), key=lambda kv: kv[1])
        if weight < weight_threshold:
            raise RankDeficiencyError(f'largest removable weight {weight:.3e} is below the threshold {weight_threshold}',
                                      audit=audit, spec=current)
        audit.append(Removal(step, name, weight, report.rank, report.n_aug, 'weakest direction'))
        print_rank(f'Removing {name}: weight {weight:.4f} in the weakest direction, rank {report.rank}/{report.n_aug}')
        step += 1
        current = current.without(name)
        report = builder(current)

    print_rank(f'Estimable set reached full rank {report.rank}: {list(current.names)}')
    return current
