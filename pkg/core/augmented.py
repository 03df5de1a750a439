# Copyright (c) Microsoft Corporation.
# Licensed under the MIT license.
'''
Parameter-augmented der_a: which states and parameters are stacked
into one vector, and the vector field/output map on that vector.
Parameters follow :math:`\\dot{\\theta} = 0`.
'''

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Mapping, Sequence

import torch

from core import taylor
from core.exceptions import ContractError, InvalidArgument
from core.model import (
    STATE_NAMES, TRIP_PARAMETERS, DeraInputs, DeraParameters, FlagConfig,
    active_states, measure, measurement_set, vector_field,
)
from core.smoothing import DEFAULT_SHARPNESS

NON_AUGMENTABLE = ('pfaref',) + TRIP_PARAMETERS

SATURATION_PARAMETERS = ('P_max', 'P_min', 'I_dmax', 'I_dmin', 'I_qh', 'I_ql',
                         'I_qmax', 'I_qmin', 'dP_max', 'dP_min')
THRESHOLD_PARAMETERS = SATURATION_PARAMETERS + ('dbd1', 'dbd2', 'fbd1', 'fbd2', 'f_emax', 'f_emin')

CASE1_PARAMETERS = ('P_max', 'P_min', 'I_dmax', 'I_dmin', 'I_qh', 'I_ql', 'k_qv', 'T_iq', 'T_pord',
                    'T_rv', 'T_g', 'I_qmax', 'I_qmin', 'dbd1', 'dbd2', 'dP_max', 'dP_min')
CASE2_PARAMETERS = CASE1_PARAMETERS + ('fbd1', 'fbd2', 'k_ig', 'k_pg', 'D_dn', 'D_up',
                                       'T_p', 'T_rf', 'f_emax', 'f_emin')
CALIBRATION_PARAMETERS = ('T_rv', 'k_qv', 'T_g', 'T_iq', 'T_pord', 'T_p', 'k_pg', 'k_ig',
                          'T_rf', 'D_dn', 'D_up')


@dataclass(frozen=True)
class AugmentedSpec:
    '''Ordered list of states and parameters estimated together.

    Attributes:
        flags (FlagConfig): control modes of the plant.
        active_states (tuple): state names, a subset of the flags' active states.
        parameters (tuple): parameter names appended after the states.
        measurement_set (str): :code:`vpq`, :code:`vidiq` or :code:`vidiqpq`.
        name (str): label used in reports.
    '''
    flags: FlagConfig
    active_states: tuple
    parameters: tuple
    measurement_set: str = 'vpq'
    name: str = 'custom'

    def __post_init__(self):
        object.__setattr__(self, 'active_states', tuple(self.active_states))
        object.__setattr__(self, 'parameters', tuple(self.parameters))
        object.__setattr__(self, 'measurement_set', self.measurement_set.lower())
        names = self.names
        if len(set(names)) != len(names):
            raise InvalidArgument(f'duplicate entries in augmented spec: {names}')
        allowed_states = active_states(self.flags)
        for s in self.active_states:
            if s not in STATE_NAMES:
                raise InvalidArgument(f'unknown state {s!r}')
            if s not in allowed_states:
                raise InvalidArgument(f'state {s} is frozen under flags {self.flags.as_tuple()}')
        known = DeraParameters.names()
        for name in self.parameters:
            if name not in known:
                raise InvalidArgument(f'unknown parameter {name!r}')
            if name in NON_AUGMENTABLE:
                raise InvalidArgument(f'parameter {name} cannot be augmented')
        measurement_set(self.measurement_set)

    @property
    def names(self):
        return self.active_states + self.parameters

    @property
    def n_aug(self):
        return len(self.active_states) + len(self.parameters)

    @property
    def channels(self):
        return measurement_set(self.measurement_set)

    def index(self, name):
        return self.names.index(name)

    def without(self, *names) -> AugmentedSpec:
        return dataclasses.replace(
            self,
            active_states=tuple(s for s in self.active_states if s not in names),
            parameters=tuple(p for p in self.parameters if p not in names),
        )

    def with_measurement_set(self, name) -> AugmentedSpec:
        return dataclasses.replace(self, measurement_set=name)

    def with_states(self, states) -> AugmentedSpec:
        return dataclasses.replace(self, active_states=tuple(s for s in STATE_NAMES if s in states))

    @staticmethod
    def preset(name, measurement_set='vpq') -> AugmentedSpec:
        try:
            flags, states, parameters = SPEC_PRESETS[name.upper()]
        except KeyError:
            raise InvalidArgument(f'unknown spec preset {name!r}, choose from {sorted(SPEC_PRESETS)}')
        return AugmentedSpec(FlagConfig.preset(flags), states, parameters, measurement_set, name.upper())

    def to_dict(self):
        return {
            'name': self.name,
            'flags': list(self.flags.as_tuple()),
            'active_states': list(self.active_states),
            'parameters': list(self.parameters),
            'measurement_set': self.measurement_set,
        }


SPEC_PRESETS = {
    'CASE1_FULL': ('CASE1', ('x1', 'x3', 'x4', 'x8', 'x9', 'x10'), CASE1_PARAMETERS),
    'CASE1_REDUCED': ('CASE1', ('x1', 'x3', 'x4', 'x9', 'x10'), ('T_rv', 'k_qv', 'T_g', 'T_iq', 'T_pord')),
    'CASE2_FULL': ('CASE2', ('x1', 'x2', 'x3', 'x4', 'x6', 'x7', 'x8', 'x9', 'x10'), CASE2_PARAMETERS),
    'CASE2_REDUCED': ('CASE2', ('x1', 'x2', 'x3', 'x4', 'x6', 'x7', 'x9', 'x10'),
                      ('T_p', 'T_rf', 'k_pg', 'k_ig', 'D_dn', 'D_up')),
    'CASE2_CALIBRATION': ('CASE2', ('x1', 'x2', 'x3', 'x4', 'x6', 'x7', 'x9', 'x10'), CALIBRATION_PARAMETERS),
}


def _component(xa, i):
    return xa[i] if isinstance(xa, taylor.Jet) else xa[..., i]


class AugmentedModel:
    '''der_a written on an augmented vector.

    States outside the spec keep the values given in :code:`carried`; the
    remaining parameters keep the values in :code:`params`.

    Args:
        spec (AugmentedSpec): layout of the augmented vector.
        params (DeraParameters): values of every non-augmented parameter.
        carried (sequence): ten state values, read for states outside the spec.
        k (int): smoothing sharpness.
        eps (float): slope floor seen by differentiation, None for exact slopes.
    '''

    def __init__(self, spec: AugmentedSpec, params: DeraParameters, carried: Sequence = None,
                 k=DEFAULT_SHARPNESS, eps=None, smooth=True):
        self.spec = spec
        self.params = params
        self.base = params.to_dict()
        if carried is None:
            carried = [0.0] * len(STATE_NAMES)
        self.carried = [float(v) for v in carried]
        self.k = k
        self.eps = eps
        self.smooth = smooth
        self._state_slots = {s: spec.index(s) for s in spec.active_states}
        self._param_slots = {q: spec.index(q) for q in spec.parameters}

    @property
    def names(self):
        return self.spec.names

    def unpack(self, xa):
        states = [_component(xa, self._state_slots[s]) if s in self._state_slots else self.carried[i]
                  for i, s in enumerate(STATE_NAMES)]
        params = dict(self.base)
        for q, j in self._param_slots.items():
            params[q] = _component(xa, j)
        return states, params

    def pack(self, x_full, params: Mapping = None):
        '''Augmented vector from a ten-state tensor and parameter values.'''
        params = self.base if params is None else params
        entries = [x_full[..., STATE_NAMES.index(s)] for s in self.spec.active_states]
        entries += [torch.as_tensor(float(params[q]), dtype=x_full.dtype).expand(x_full.shape[:-1])
                    for q in self.spec.parameters]
        return torch.stack(entries, dim=-1)

    def full_state(self, xa):
        states, _ = self.unpack(xa)
        return taylor.stack(states)

    def vector_field(self, xa, u: DeraInputs):
        states, params = self.unpack(xa)
        rates = vector_field(states, u, params, self.spec.flags, k=self.k, eps=self.eps, smooth=self.smooth)
        out = [rates[STATE_NAMES.index(s)] for s in self.spec.active_states]
        out += [0.0] * len(self.spec.parameters)
        return self._stack_like(out, xa)

    def output(self, xa, u: DeraInputs, channels=None):
        states, _ = self.unpack(xa)
        values = measure(states, u, channels or self.spec.channels)
        return self._stack_like(values, xa)

    @staticmethod
    def _stack_like(values, xa):
        stacked = taylor.stack(values)
        if isinstance(xa, torch.Tensor) and stacked.shape[:-1] != xa.shape[:-1]:
            stacked = stacked.expand(xa.shape[:-1] + stacked.shape[-1:])
        return stacked

    def jacobian(self, xa, u: DeraInputs):
        '''Forward-mode Jacobian of the augmented vector field.'''
        return torch.func.jacfwd(lambda z: self.vector_field(z, u))(xa)

    def output_jacobian(self, xa, u: DeraInputs, channels=None):
        return torch.func.jacfwd(lambda z: self.output(z, u, channels))(xa)


def require_flags(spec: AugmentedSpec, allowed):
    if spec.flags.as_tuple() not in allowed:
        raise ContractError(f'spec {spec.name} uses flags {spec.flags.as_tuple()}, expected one of {allowed}')
