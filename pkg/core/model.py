# Copyright (c) Microsoft Corporation.
# Licensed under the MIT license.
'''
The der_a aggregated DER plant.

States are kept in the order x1..x10 whatever the flags are; states a
flag set does not use are carried with a zero derivative. All model
functions take a parameter mapping so that any entry can be replaced by
a tensor (augmented estimation) or a :code:`core.taylor.Jet` (Lie
derivatives).
'''

from __future__ import annotations

import dataclasses
import logging
import math
from collections import namedtuple
from dataclasses import dataclass, field
from typing import Mapping

import torch

from core import taylor
from core.exceptions import ConfigError, InvalidArgument, SimulationFault
from core.integrator import propagate
from core.smoothing import DEFAULT_SHARPNESS, _hard_db, _hard_sat, _sdbf, _ssf
from utils import print_rank

STATE_NAMES = ('x1', 'x2', 'x3', 'x4', 'x5', 'x6', 'x7', 'x8', 'x9', 'x10')
STATE_DESCRIPTIONS = {
    'x1': 'filtered terminal voltage',
    'x2': 'filtered generated active power',
    'x3': 'reactive current by Q or power factor control',
    'x4': 'total reactive current injected',
    'x5': 'trip voltage',
    'x6': 'filtered frequency',
    'x7': 'active power control effort',
    'x8': 'ramped active power order',
    'x9': 'generated active power',
    'x10': 'total active current injected',
}
VOLTAGE_FLOOR = 0.01
RADICAND_FLOOR = 1e-12

TIME_CONSTANTS = ('T_rv', 'T_p', 'T_iq', 'T_g', 'T_v', 'T_rf', 'T_pord')
GAINS = ('k_qv', 'k_pg', 'k_ig', 'k_w', 'D_dn', 'D_up')
SMOOTH_PAIRS = (('dbd1', 'dbd2'), ('fbd1', 'fbd2'), ('f_emin', 'f_emax'),
                ('P_min', 'P_max'), ('dP_min', 'dP_max'), ('I_ql', 'I_qh'))
TRIP_PARAMETERS = ('V_l0', 'V_l1', 'V_h0', 'V_h1', 'V_min', 'V_max',
                   't_l0', 't_l1', 't_h0', 't_h1', 'V_frac')


@dataclass(frozen=True)
class DeraParameters:
    '''Every constant of the plant. Defaults follow the NERC guideline values.

    Time constants are in s, currents and powers in pu, ramp limits in pu/s,
    angles in rad. :code:`t_l0` and :code:`t_h0` are kept for parameter files
    but the trip logic never reads them.
    '''
    T_rv: float = 0.02
    T_p: float = 0.02
    T_iq: float = 0.02
    T_g: float = 0.02
    T_v: float = 0.02
    T_rf: float = 0.02
    T_pord: float = 0.02
    k_qv: float = 5.0
    k_pg: float = 0.1
    k_ig: float = 10.0
    k_w: float = 1.0
    D_dn: float = 20.0
    D_up: float = 20.0
    dbd1: float = -0.05
    dbd2: float = 0.05
    fbd1: float = -0.0006
    fbd2: float = 0.0006
    f_emin: float = -99.0
    f_emax: float = 99.0
    P_min: float = 0.0
    P_max: float = 1.0
    dP_min: float = -99.0
    dP_max: float = 99.0
    I_max: float = 1.2
    I_qmax: float = 1.2
    I_qmin: float = -1.2
    I_dmax: float = 1.2
    I_dmin: float = 0.0
    I_qh: float = 1.0
    I_ql: float = -1.0
    rrpwr: float = 10.0
    V_l0: float = 0.44
    V_l1: float = 0.49
    V_h0: float = 1.2
    V_h1: float = 1.15
    V_min: float = 0.46
    V_max: float = 1.18
    t_l0: float = 0.16
    t_l1: float = 0.16
    t_h0: float = 0.16
    t_h1: float = 0.16
    V_frac: float = 0.7
    X_e: float = 0.25
    pfaref: float = 0.0

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in self.names():
            if not math.isfinite(getattr(self, name)):
                raise InvalidArgument(f'parameter {name} must be finite')
        for name in TIME_CONSTANTS:
            if getattr(self, name) <= 0:
                raise InvalidArgument(f'time constant {name} must be positive, got {getattr(self, name)}')
        if self.I_max <= 0 or self.rrpwr <= 0:
            raise InvalidArgument('I_max and rrpwr must be positive')
        for lower, upper in SMOOTH_PAIRS:
            if getattr(self, lower) >= getattr(self, upper):
                raise InvalidArgument(f'{lower} must be below {upper}')
        if not (self.V_l0 < self.V_l1 < self.V_h1 < self.V_h0):
            raise InvalidArgument('trip breakpoints must satisfy V_l0 < V_l1 < V_h1 < V_h0')
        if not (self.V_l0 <= self.V_min <= self.V_l1 and self.V_h1 <= self.V_max <= self.V_h0):
            raise InvalidArgument('V_min must lie in [V_l0, V_l1] and V_max in [V_h1, V_h0]')
        if not 0.0 <= self.V_frac <= 1.0:
            raise InvalidArgument(f'V_frac must lie in [0, 1], got {self.V_frac}')

    @classmethod
    def names(cls):
        return tuple(f.name for f in dataclasses.fields(cls))

    @classmethod
    def from_dict(cls, config: Mapping) -> DeraParameters:
        unknown = set(config) - set(cls.names())
        if unknown:
            raise ConfigError({k: ['unknown parameter'] for k in sorted(unknown)})
        missing = set(cls.names()) - set(config)
        if missing:
            print_rank(f'Assigning default values for: {sorted(missing)}', loglevel=logging.DEBUG)
        return cls(**{k: float(v) for k, v in config.items()})

    def to_dict(self):
        return dataclasses.asdict(self)

    def replace(self, **changes) -> DeraParameters:
        return dataclasses.replace(self, **{k: float(v) for k, v in changes.items()})


@dataclass(frozen=True)
class FlagConfig:
    '''The four binary switches: Pflag, Fflag, Vtripflag and PQflag.'''
    pflag: int = 0
    fflag: int = 0
    vtripflag: int = 0
    pqflag: int = 0

    def __post_init__(self):
        for name, value in dataclasses.asdict(self).items():
            if value not in (0, 1):
                raise InvalidArgument(f'flag {name} must be 0 or 1, got {value}')

    @staticmethod
    def preset(name) -> FlagConfig:
        try:
            return FLAG_PRESETS[name.upper()]
        except KeyError:
            raise InvalidArgument(f'unknown flag preset {name!r}, choose from {sorted(FLAG_PRESETS)}')

    def as_tuple(self):
        return (self.pflag, self.fflag, self.vtripflag, self.pqflag)


FLAG_PRESETS = {
    'CASE1': FlagConfig(0, 0, 0, 0),
    'CASE2': FlagConfig(1, 1, 0, 0),
}


@dataclass(frozen=True)
class DeraInputs:
    '''Exogenous signals held over one sampling interval.

    Attributes:
        V (float): terminal voltage magnitude (pu).
        freq (float): frequency (pu).
        V_ref0, Q_ref, P_ref, f_ref (float): references (pu).
        dt (float): input sampling time (s), used by the ramp-rate state.
        t_trip (float): time since V left the normal band, supplied by the trip timer (s).
    '''
    V: float = 1.0
    freq: float = 1.0
    V_ref0: float = 1.0
    Q_ref: float = 0.2
    P_ref: float = 0.5
    f_ref: float = 1.0
    dt: float = 1.0 / 30.0
    t_trip: float = 0.0

    def __post_init__(self):
        if self.V < 0:
            raise InvalidArgument(f'V must be non-negative, got {self.V}')
        if self.dt <= 0:
            raise InvalidArgument(f'dt must be positive, got {self.dt}')

    def replace(self, **changes) -> DeraInputs:
        return dataclasses.replace(self, **changes)


@dataclass
class DeraOutputs:
    P: torch.Tensor
    Q: torch.Tensor
    I_d: torch.Tensor
    I_q: torch.Tensor
    V_d: torch.Tensor
    V_q: torch.Tensor
    E_d: torch.Tensor
    E_q: torch.Tensor
    theta: torch.Tensor = field(default=None)


CurrentLimits = namedtuple('CurrentLimits', ['I_dmax', 'I_dmin', 'I_qmax', 'I_qmin'])


def frozen_states(flags: FlagConfig):
    frozen = set()
    if not flags.vtripflag:
        frozen.add('x5')
    if not flags.fflag:
        frozen.update(('x6', 'x7'))
        if not flags.pflag:
            frozen.add('x2')
    return tuple(s for s in STATE_NAMES if s in frozen)


def active_states(flags: FlagConfig):
    frozen = frozen_states(flags)
    return tuple(s for s in STATE_NAMES if s not in frozen)


def _current_limits(pqflag, i_pcmd, i_qcmd, i_max):
    if pqflag == 0:
        command = taylor.clamp(i_qcmd, min=-i_max, max=i_max)
        i_dmax = taylor.sqrt(taylor.clamp(i_max * i_max - command * command, min=RADICAND_FLOOR))
        return CurrentLimits(i_dmax, 0.0, i_max, -i_max)
    command = taylor.clamp(i_pcmd, min=-i_max, max=i_max)
    i_qmax = taylor.sqrt(taylor.clamp(i_max * i_max - command * command, min=RADICAND_FLOOR))
    return CurrentLimits(i_max, 0.0, i_qmax, -i_qmax)


def current_limits(pqflag, i_pcmd, i_qcmd, i_max):
    '''Current limits from the priority logic.

    Args:
        pqflag (int): 0 for reactive power priority, 1 for active power priority.
        i_pcmd (float): active current command before limiting (pu).
        i_qcmd (float): reactive current command before limiting (pu).
        i_max (float): total current ceiling (pu).

    Returns:
        CurrentLimits of floats.
    '''
    if i_max <= 0:
        raise InvalidArgument(f'I_max must be positive, got {i_max}')
    if pqflag not in (0, 1):
        raise InvalidArgument(f'PQflag must be 0 or 1, got {pqflag}')
    limits = _current_limits(pqflag, torch.as_tensor(float(i_pcmd), dtype=torch.float64),
                             torch.as_tensor(float(i_qcmd), dtype=torch.float64), float(i_max))
    return CurrentLimits(*(float(v) for v in limits))


def voltage_trip(V, t, p: DeraParameters):
    '''Fraction of DERs still connected, m_v in [0, 1].

    Args:
        V (float): terminal voltage (pu).
        t (float): time elapsed since V left the normal band (s).
        p (DeraParameters): trip breakpoints and timers.
    '''
    low_span = p.V_l1 - p.V_l0
    high_span = p.V_h0 - p.V_h1
    if p.V_l0 <= V <= p.V_min:
        m = (V - p.V_l0) / low_span
    elif p.V_min < V <= p.V_l1 and t <= p.t_l1:
        m = (V - p.V_l0) / low_span
    elif p.V_l1 < V < p.V_h1 and t <= p.t_h1:
        m = 1.0
    elif p.V_h1 <= V <= p.V_h0 and t <= p.t_h1:
        m = (p.V_h0 - V) / high_span
    elif p.V_min <= V <= p.V_l1 and t >= p.t_l1:
        m = p.V_frac * (V - p.V_min) / low_span
    elif p.V_l1 < V < p.V_h1 and t >= p.t_h1:
        m = p.V_frac * (p.V_l1 - p.V_min) / low_span
    elif p.V_h1 <= V <= p.V_max and t >= p.t_h1:
        m = p.V_frac * (p.V_max - V) / high_span
    elif p.V_max < V <= p.V_h0:
        m = (p.V_h0 - V) / high_span
    else:
        m = 0.0
    return min(max(m, 0.0), 1.0)


def _as_mapping(p):
    return p.to_dict() if isinstance(p, DeraParameters) else p


def vector_field(x, u: DeraInputs, p: Mapping, flags: FlagConfig, k=DEFAULT_SHARPNESS, eps=None, smooth=True, m_v=None):
    '''Time derivatives of the ten states.

    Args:
        x (sequence): ten state components; floats, tensors or jets.
        u (DeraInputs): inputs held over the step.
        p (Mapping): parameter values by name.
        flags (FlagConfig): control modes.
        k (int): sharpness of every smooth operator.
        eps (float): floor on smooth-operator slopes seen by differentiation, None for exact slopes.
        smooth (bool): False evaluates the hard saturation/deadband operators instead.
        m_v (float): trip logic output, computed from the inputs when omitted.

    Returns:
        list of ten derivatives, exact zeros for frozen states.
    '''
    x1, x2, x3, x4, x5, x6, x7, x8, x9, x10 = x
    if smooth:
        sat = lambda v, lo, hi: _ssf(v, lo, hi, k, eps)
        db = lambda v, lo, hi: _sdbf(v, lo, hi, k, eps)
    else:
        sat, db = _hard_sat, _hard_db

    v_floor = taylor.clamp(x1, min=VOLTAGE_FLOOR)

    # Reactive power - voltage loop
    i_qv = p['k_qv'] * db(u.V_ref0 - x1, p['dbd1'], p['dbd2'])
    if flags.pflag:
        q_order = x2 * math.tan(p['pfaref']) / v_floor
    else:
        q_order = u.Q_ref / v_floor
    i_qcmd = x3 - sat(i_qv, p['I_ql'], p['I_qh'])

    # Active power path
    p_gen = sat(x9, p['P_min'], p['P_max'])
    i_pcmd = p_gen / v_floor

    limits = _current_limits(flags.pqflag, i_pcmd, i_qcmd, p['I_max'])
    if flags.vtripflag:
        if m_v is None:
            m_v = voltage_trip(u.V, u.t_trip, _trip_view(p))
        i_q_target = sat(i_qcmd, limits.I_qmin, limits.I_qmax) * x5
        i_d_target = sat(x5 * i_pcmd, limits.I_dmin, limits.I_dmax)
    else:
        i_q_target = sat(i_qcmd, limits.I_qmin, limits.I_qmax)
        i_d_target = sat(i_pcmd, limits.I_dmin, limits.I_dmax)

    # Frequency - active power loop
    delta_f = db(u.f_ref - x6, p['fbd1'], p['fbd2'])
    droop = p['D_dn'] * taylor.clamp(delta_f, min=0.0) + p['D_up'] * taylor.clamp(delta_f, max=0.0)
    p_lim = sat(u.P_ref + droop - x2, p['f_emin'], p['f_emax'])
    p_a = sat(x7 + p['k_pg'] * p_lim, p['P_min'], p['P_max'])

    rates = {
        'x1': (u.V - x1) / p['T_rv'],
        'x2': (x9 - x2) / p['T_p'],
        'x3': (q_order - x3) / p['T_iq'],
        'x4': (i_q_target - x4) / p['T_g'],
        'x5': ((m_v if m_v is not None else 1.0) - x5) / p['T_v'],
        'x6': (u.freq - x6) / p['T_rf'],
        'x7': p['k_ig'] * p_lim + p['k_w'] * (p_a - p['k_pg'] * p_lim - x7),
        'x8': sat((sat(x7, p['P_min'], p['P_max']) - x8) / u.dt, p['dP_min'], p['dP_max']) if flags.fflag else 0.0,
        'x9': (x8 - p_gen) / p['T_pord'],
        # The I_d limits act on i_d_target before the lag, so T_g stays outside
        # that bracket and only the rrpwr rate limit wraps the division.
        'x10': sat((i_d_target - x10) / p['T_g'], -p['rrpwr'], p['rrpwr']),
    }
    frozen = frozen_states(flags)
    return [0.0 if name in frozen else rates[name] for name in STATE_NAMES]


class _TripView:
    def __init__(self, p):
        self._p = p

    def __getattr__(self, name):
        return float(taylor.value_of(self._p[name]))


def _trip_view(p):
    return p if isinstance(p, DeraParameters) else _TripView(p)


def rhs(x, u: DeraInputs, p, flags: FlagConfig, k=DEFAULT_SHARPNESS, eps=None, smooth=True, check=True):
    '''Vector field on a state tensor of shape :code:`[..., 10]`.

    Raises:
        SimulationFault: naming the first state whose derivative is not finite
            (only when :code:`check` is set; leave it off under torch.func transforms).
    '''
    rates = vector_field(x.unbind(-1), u, _as_mapping(p), flags, k=k, eps=eps, smooth=smooth)
    dx = taylor.stack(rates)
    if dx.shape != x.shape:
        dx = dx.expand(x.shape)
    if check:
        finite = torch.isfinite(dx)
        if not bool(finite.all()):
            bad = int((~finite).reshape(-1, len(STATE_NAMES)).any(0).nonzero()[0])
            raise SimulationFault('non-finite state derivative', state=STATE_NAMES[bad])
    return dx


def outputs(x, u: DeraInputs, p) -> DeraOutputs:
    '''Interface quantities in the terminal-voltage aligned frame (V_d = V, V_q = 0).'''
    p = _as_mapping(p)
    x4, x10 = x[..., 3], x[..., 9]
    v_d = torch.full_like(x10, u.V)
    v_q = torch.zeros_like(x10)
    e_q = v_q + x10 * p['X_e']
    e_d = v_d - x4 * p['X_e']
    return DeraOutputs(
        P=v_d * x10 + v_q * x4,
        Q=v_d * x4 - v_q * x10,
        I_d=x10, I_q=x4, V_d=v_d, V_q=v_q, E_d=e_d, E_q=e_q,
        theta=torch.atan2(e_q, e_d),
    )


MEASUREMENT_SETS = {
    'vpq': ('V', 'P', 'Q'),
    'vidiq': ('V', 'I_d', 'I_q'),
    'vidiqpq': ('V', 'I_d', 'I_q', 'P', 'Q'),
}


def measurement_set(name):
    try:
        return MEASUREMENT_SETS[name.lower()]
    except KeyError:
        raise InvalidArgument(f'unknown measurement set {name!r}, choose from {sorted(MEASUREMENT_SETS)}')


def measure(x, u: DeraInputs, channels):
    '''Output channels from state components (floats, tensors or jets).'''
    x4, x10 = x[3], x[9]
    values = {'V': u.V, 'P': u.V * x10, 'Q': u.V * x4, 'I_d': x10, 'I_q': x4}
    return [values[c] for c in channels]


def initial_guess(u: DeraInputs, p, flags: FlagConfig):
    p = _as_mapping(p)
    q_order = (u.P_ref * math.tan(p['pfaref']) if flags.pflag else u.Q_ref) / max(u.V, VOLTAGE_FLOOR)
    guess = {
        'x1': u.V, 'x2': u.P_ref, 'x3': q_order, 'x4': q_order, 'x5': 1.0, 'x6': u.freq,
        'x7': u.P_ref, 'x8': u.P_ref, 'x9': u.P_ref, 'x10': u.P_ref / max(u.V, VOLTAGE_FLOOR),
    }
    return torch.tensor([guess[s] for s in STATE_NAMES], dtype=torch.float64)


def equilibrium(u: DeraInputs, p, flags: FlagConfig, k=DEFAULT_SHARPNESS, guess=None, tol=1e-12, max_iter=60):
    '''Fixed point of the plant under constant inputs, by damped Newton.

    Frozen states, and x8 when the ramp is disabled, keep their guessed values.

    Returns:
        torch.Tensor of shape [10].
    '''
    x = initial_guess(u, p, flags) if guess is None else guess.clone()
    free = [i for i, s in enumerate(STATE_NAMES)
            if s in active_states(flags) and not (s == 'x8' and not flags.fflag)]
    index = torch.tensor(free)
    selector = torch.eye(len(STATE_NAMES), dtype=x.dtype)[:, index]
    held = x * (1.0 - selector.sum(-1))

    def residual(z):
        full = held + selector @ z
        return rhs(full, u, p, flags, k=k, check=False)[index]

    z = x[index]
    r = residual(z)
    for iteration in range(max_iter):
        norm = float(torch.linalg.vector_norm(r, ord=math.inf))
        if norm < tol:
            break
        jac = torch.func.jacfwd(residual)(z)
        step = torch.linalg.lstsq(jac, -r.unsqueeze(-1)).solution.squeeze(-1)
        damping = 1.0
        while damping > 1e-4:
            candidate = z + damping * step
            r_new = residual(candidate)
            if float(torch.linalg.vector_norm(r_new, ord=math.inf)) < norm:
                break
            damping *= 0.5
        z, r = candidate, r_new
    else:
        print_rank(f'Equilibrium search stopped after {max_iter} iterations, residual {norm:.3e}', loglevel=logging.WARNING)

    x = held + selector @ z
    if not bool(torch.isfinite(x).all()):
        raise SimulationFault('equilibrium search produced non-finite states')
    print_rank(f'Equilibrium found, residual {float(torch.linalg.vector_norm(r, ord=math.inf)):.3e}', loglevel=logging.DEBUG)
    return x


def simulate(x0, input_fn, p, flags: FlagConfig, times, substeps=32, k=DEFAULT_SHARPNESS, smooth=True):
    '''Sampled trajectory with inputs held between samples.

    Args:
        x0 (torch.Tensor): state at :code:`times[0]`.
        input_fn (callable): :code:`input_fn(i, t) -> DeraInputs` held over [t_i, t_{i+1}).
        p: DeraParameters or mapping.
        flags (FlagConfig): control modes.
        times (sequence): strictly increasing sample times (s).
        substeps (int): RK4 steps per sampling interval.

    Returns:
        torch.Tensor of shape [len(times), 10].

    Raises:
        SimulationFault: carrying the time of the failing interval.
    '''
    f = lambda x, u: rhs(x, u, p, flags, k=k, smooth=smooth, check=False)
    states = [x0]
    x = x0
    for i in range(1, len(times)):
        t0, t1 = float(times[i - 1]), float(times[i])
        x = propagate(x, input_fn(i - 1, t0), t1 - t0, substeps, f, check=False)
        if not bool(torch.isfinite(x).all()):
            bad = int((~torch.isfinite(x)).nonzero()[0])
            raise SimulationFault('non-finite state during simulation', state=STATE_NAMES[bad], step=i, time=t1)
        states.append(x)
    return torch.stack(states)
