# Copyright (c) Microsoft Corporation.
# Licensed under the MIT license.
'''
Excitation profiles and synthesis of measurement data from a der_a
truth simulation.
'''

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
import torch

from core.config import ScenarioConfig
from core.dataset import CHANNELS, MeasurementRecord, sample_period
from core.exceptions import InvalidArgument
from core.model import DeraInputs, DeraParameters, FlagConfig, equilibrium, outputs, simulate
from core.observability import Trajectory
from utils import print_rank

CYCLES_PER_SECOND = 60.0


@dataclass(frozen=True)
class VoltageProfileSpec:
    '''Sag, ramp and recovery of the terminal voltage.

    Attributes:
        a (float): sag voltage (pu).
        b (float): sag length in cycles of 60 Hz.
        c (float): end of the ramp measured from the onset (s).
        d (float): ramp start voltage (pu).
        t_event (float): sag onset (s).
    '''
    a: float = 0.80
    b: float = 60.0
    c: float = 0.90
    d: float = 0.90
    t_event: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.a <= self.d <= 1.0:
            raise InvalidArgument(f'profile needs 0 < a <= d <= 1, got a={self.a}, d={self.d}')
        if self.b <= 0 or self.c <= 0:
            raise InvalidArgument('profile durations b and c must be positive')
        if self.t_event < 0:
            raise InvalidArgument('t_event must be non-negative')

    @property
    def sag_end(self):
        return self.t_event + self.b / CYCLES_PER_SECOND

    @property
    def ramp_end(self):
        return self.t_event + self.c


def voltage_profile(t, spec: VoltageProfileSpec = VoltageProfileSpec()):
    '''Terminal voltage at time t (pu).

    The ramp slope is (d - a)/9 per second; the value reached at the end of
    the ramp is not forced back to 1 pu, so the profile may step there.
    '''
    if t < 0:
        raise InvalidArgument(f't must be non-negative, got {t}')
    if spec.t_event <= t < spec.sag_end:
        return spec.a
    if spec.sag_end <= t < spec.ramp_end:
        return (spec.d - spec.a) / 9.0 * (t - spec.sag_end) + spec.a
    return 1.0


class FrequencyRamp:
    '''Piecewise-linear frequency through the given knots, flat outside them.'''

    def __init__(self, times: Sequence[float], values: Sequence[float]):
        self.times = np.asarray(times, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.times.shape != self.values.shape or self.times.size < 2:
            raise InvalidArgument('frequency ramp needs matching times and values with at least two knots')
        if np.any(np.diff(self.times) <= 0):
            raise InvalidArgument('frequency ramp knots must be strictly increasing in time')

    def __call__(self, t):
        return float(np.interp(t, self.times, self.values))

    @staticmethod
    def default():
        return FrequencyRamp([1.5, 1.8, 2.4, 2.7], [1.0, 0.99, 1.01, 1.0])


class TripTimer:
    '''Time elapsed since V left the band (V_l1, V_h1); reset when it comes back.'''

    def __init__(self, params: DeraParameters):
        self.lower = params.V_l1
        self.upper = params.V_h1
        self.start = None

    def reset(self):
        self.start = None

    def update(self, V, t):
        if self.lower < V < self.upper:
            self.start = None
            return 0.0
        if self.start is None:
            self.start = t
        return t - self.start


def build_inputs(times, voltages, frequencies, template: DeraInputs, params: DeraParameters) -> List[DeraInputs]:
    '''Held inputs at each sample, with the trip timer advanced along V.'''
    timer = TripTimer(params)
    return [template.replace(V=float(v), freq=float(f), t_trip=timer.update(float(v), float(t)))
            for t, v, f in zip(times, voltages, frequencies)]


@dataclass
class SynthesisResult:
    times: np.ndarray
    states: torch.Tensor
    inputs: List[DeraInputs]
    records: List[MeasurementRecord]
    truth: List[MeasurementRecord]
    params: DeraParameters
    flags: FlagConfig
    config: ScenarioConfig = None

    def trajectory(self) -> Trajectory:
        return Trajectory(torch.as_tensor(self.times), self.states, self.inputs, self.params, self.flags)


def clean_records(times, states, inputs: Sequence[DeraInputs], params) -> List[MeasurementRecord]:
    records = []
    for t, x, u in zip(times, states, inputs):
        y = outputs(x, u, params)
        records.append(MeasurementRecord(t=float(t), V=float(u.V), freq=float(u.freq), P=float(y.P),
                                         Q=float(y.Q), I_d=float(y.I_d), I_q=float(y.I_q)))
    return records


def add_noise(records: Sequence[MeasurementRecord], std, seed) -> List[MeasurementRecord]:
    '''Independent zero-mean Gaussian noise per channel, drawn channel by channel from one seeded generator.'''
    generator = torch.Generator().manual_seed(int(seed))
    n = len(records)
    draws = {}
    for channel in CHANNELS:
        noise = torch.randn(n, generator=generator, dtype=torch.float64)
        draws[channel] = noise * float(std.get(channel, 0.0))
    noisy = []
    for i, r in enumerate(records):
        values = {c: (None if not r.is_valid(c) else r.value(c) + float(draws[c][i])) for c in CHANNELS}
        noisy.append(MeasurementRecord(t=r.t, **values))
    return noisy


def simulate_scenario(cfg: ScenarioConfig, params: DeraParameters = None) -> SynthesisResult:
    '''Clean der_a response to the scenario's excitation, started at equilibrium.'''
    params = params or cfg.load_parameters()
    flags = cfg.flag_config
    spec = VoltageProfileSpec(**{k: cfg.profile[k] for k in ('a', 'b', 'c', 'd', 't_event')})
    ramp = cfg.profile.frequency_ramp
    freq_fn = FrequencyRamp(ramp.times, ramp.values) if ramp is not None else (lambda t: 1.0)

    times = np.arange(cfg.samples + 1) / cfg.sample_rate
    voltages = [voltage_profile(t, spec) for t in times]
    frequencies = [freq_fn(t) for t in times]
    inputs = build_inputs(times, voltages, frequencies, cfg.inputs_template(), params)

    x0 = equilibrium(inputs[0], params, flags, k=cfg.sharpness)
    print_rank(f'Simulating {cfg.name}: flags {flags.as_tuple()}, {len(times)} samples, {cfg.substeps} substeps')
    states = simulate(x0, lambda i, t: inputs[i], params, flags, times, substeps=cfg.substeps, k=cfg.sharpness)
    truth = clean_records(times, states, inputs, params)
    return SynthesisResult(times, states, inputs, truth, truth, params, flags, cfg)


def synthesize(cfg: ScenarioConfig, params: DeraParameters = None) -> SynthesisResult:
    '''Truth simulation plus noisy measurement records.

    Raises:
        SimulationFault: with the time of the failing interval.
    '''
    result = simulate_scenario(cfg, params)
    result.records = add_noise(result.truth, cfg.noise, cfg.seed)
    print_rank(f'Synthesized {len(result.records)} records, noise std {cfg.noise}, seed {cfg.seed}')
    return result


def replay(records: Sequence[MeasurementRecord], params: DeraParameters, flags: FlagConfig, template: DeraInputs,
           substeps=32, k=12) -> List[MeasurementRecord]:
    '''Clean der_a response to the V and freq channels of recorded data, started at equilibrium.'''
    times = np.asarray([r.t for r in records], dtype=float)
    voltages, frequencies = [], []
    V, freq = template.V, template.freq
    for r in records:
        V = r.V if r.V is not None else V
        freq = r.freq if r.freq is not None else freq
        voltages.append(V)
        frequencies.append(freq)
    template = template.replace(dt=sample_period(records))
    inputs = build_inputs(times, voltages, frequencies, template, params)
    x0 = equilibrium(inputs[0], params, flags, k=k)
    states = simulate(x0, lambda i, t: inputs[i], params, flags, times, substeps=substeps, k=k)
    return clean_records(times, states, inputs, params)
