# Copyright (c) Microsoft Corporation.
# Licensed under the MIT license.
'''
Closed-form Jacobian of the augmented der_a vector field.

Covers flag sets without voltage tripping and with reactive power
priority (Vtripflag = PQflag = 0), and augmentation with time constants
and gains. Every smooth operator slope is floored at :code:`eps` and every
hard clamp passes its derivative on the closed interval, so the matrix
matches forward-mode differentiation of the plant entry by entry.
'''

import math

import torch

from core.augmented import AugmentedSpec
from core.exceptions import ContractError
from core.model import STATE_NAMES, VOLTAGE_FLOOR, RADICAND_FLOOR, DeraInputs, DeraParameters, frozen_states
from core.smoothing import DEFAULT_SHARPNESS, _clamped_slope, shape

SUPPORTED_PARAMETERS = ('T_rv', 'T_p', 'T_iq', 'T_g', 'T_rf', 'T_pord',
                        'k_qv', 'k_pg', 'k_ig', 'k_w', 'D_dn', 'D_up')


def check_supported(spec: AugmentedSpec):
    if spec.flags.vtripflag or spec.flags.pqflag:
        raise ContractError(f'analytic Jacobian needs Vtripflag = PQflag = 0, spec {spec.name} has '
                            f'flags {spec.flags.as_tuple()}')
    extra = [q for q in spec.parameters if q not in SUPPORTED_PARAMETERS]
    if extra:
        raise ContractError(f'analytic Jacobian does not cover parameters {extra}')


class _Sat:
    '''Value and partials of a smooth saturation :math:`\\lambda + \\mu g(z)`.'''

    def __init__(self, v, lower, upper, k, eps):
        lam = 0.5 * (upper + lower)
        mu = 0.5 * (upper - lower)
        self.z = (v - lam) / mu
        self.g = shape(self.z, k)
        self.value = lam + mu * self.g
        self.slope = _clamped_slope(self.z, k, eps, deadband=False)
        self.d_upper = 0.5 * (1.0 - self.slope) + 0.5 * (self.g - self.z * self.slope)


class _Deadband:

    def __init__(self, v, lower, upper, k, eps):
        lam = 0.5 * (upper + lower)
        mu = 0.5 * (upper - lower)
        z = (v - lam) / mu
        self.value = mu * (z - shape(z, k))
        self.slope = _clamped_slope(z, k, eps, deadband=True)


def _inside(v, lower=-math.inf, upper=math.inf):
    return ((v >= lower) & (v <= upper)).to(torch.float64)


def _scalar(v):
    return torch.as_tensor(v, dtype=torch.float64)


def analytic_jacobian(spec: AugmentedSpec, xa, u: DeraInputs, params: DeraParameters, k=DEFAULT_SHARPNESS, eps=1e-6):
    '''Jacobian of the augmented vector field at :code:`xa`.

    Args:
        spec (AugmentedSpec): layout of :code:`xa`.
        xa (torch.Tensor): augmented vector, shape [n].
        u (DeraInputs): inputs held over the step.
        params (DeraParameters): values of the parameters outside the spec.
        k (int): smoothing sharpness.
        eps (float): slope floor, None for exact slopes.

    Returns:
        torch.Tensor [n, n]; parameter rows are zero.

    Raises:
        ContractError: flags or parameters outside the supported set.
    '''
    check_supported(spec)
    flags = spec.flags
    p = params.to_dict()
    for q in spec.parameters:
        p[q] = xa[spec.index(q)]
    x = {s: _scalar(xa[spec.index(s)] if s in spec.active_states else 0.0) for s in STATE_NAMES}

    n = len(spec.names)
    J = torch.zeros((n, n), dtype=torch.float64)
    # rows: state name -> {column name -> value}
    rows = {s: {} for s in STATE_NAMES}

    def put(row, column, value):
        rows[row][column] = rows[row].get(column, 0.0) + value

    x1, x2, x3, x4, x6, x7, x8, x9, x10 = (x[s] for s in ('x1', 'x2', 'x3', 'x4', 'x6', 'x7', 'x8', 'x9', 'x10'))
    v_floor = torch.clamp(x1, min=VOLTAGE_FLOOR)
    dvf = _inside(x1, lower=VOLTAGE_FLOOR)

    # Reactive power - voltage loop
    dead_v = _Deadband(u.V_ref0 - x1, p['dbd1'], p['dbd2'], k, eps)
    i_qv = p['k_qv'] * dead_v.value
    d_iqv = {'x1': -p['k_qv'] * dead_v.slope, 'k_qv': dead_v.value}
    if flags.pflag:
        tan_pf = math.tan(p['pfaref'])
        q_order = x2 * tan_pf / v_floor
        d_qorder = {'x1': -q_order / v_floor * dvf, 'x2': tan_pf / v_floor}
    else:
        q_order = u.Q_ref / v_floor
        d_qorder = {'x1': -q_order / v_floor * dvf}
    sat_qv = _Sat(i_qv, p['I_ql'], p['I_qh'], k, eps)
    i_qcmd = x3 - sat_qv.value
    d_iqcmd = {'x3': _scalar(1.0)}
    for c, v in d_iqv.items():
        d_iqcmd[c] = d_iqcmd.get(c, 0.0) - sat_qv.slope * v

    # Active power path
    sat_pg = _Sat(x9, p['P_min'], p['P_max'], k, eps)
    i_pcmd = sat_pg.value / v_floor
    d_ipcmd = {'x9': sat_pg.slope / v_floor, 'x1': -i_pcmd / v_floor * dvf}

    # Current limits, reactive priority
    i_max = p['I_max']
    command = torch.clamp(i_qcmd, min=-i_max, max=i_max)
    radicand = i_max * i_max - command * command
    i_dmax = torch.sqrt(torch.clamp(radicand, min=RADICAND_FLOOR))
    gate = _inside(i_qcmd, -i_max, i_max) * _inside(radicand, lower=RADICAND_FLOOR)
    d_idmax = {c: -command / i_dmax * gate * v for c, v in d_iqcmd.items()}

    sat_q = _Sat(i_qcmd, -i_max, i_max, k, eps)
    i_q_target = sat_q.value
    d_iqt = {c: sat_q.slope * v for c, v in d_iqcmd.items()}

    sat_d = _Sat(i_pcmd, 0.0, i_dmax, k, eps)
    i_d_target = sat_d.value
    d_idt = {c: sat_d.slope * v for c, v in d_ipcmd.items()}
    for c, v in d_idmax.items():
        d_idt[c] = d_idt.get(c, 0.0) + sat_d.d_upper * v

    # Frequency - active power loop
    dead_f = _Deadband(u.f_ref - x6, p['fbd1'], p['fbd2'], k, eps)
    delta_f = dead_f.value
    droop = p['D_dn'] * torch.clamp(delta_f, min=0.0) + p['D_up'] * torch.clamp(delta_f, max=0.0)
    d_droop_df = p['D_dn'] * _inside(delta_f, lower=0.0) + p['D_up'] * _inside(delta_f, upper=0.0)
    sat_pl = _Sat(u.P_ref + droop - x2, p['f_emin'], p['f_emax'], k, eps)
    p_lim = sat_pl.value
    d_plim = {
        'x2': -sat_pl.slope,
        'x6': sat_pl.slope * d_droop_df * (-dead_f.slope),
        'D_dn': sat_pl.slope * torch.clamp(delta_f, min=0.0),
        'D_up': sat_pl.slope * torch.clamp(delta_f, max=0.0),
    }
    sat_pa = _Sat(x7 + p['k_pg'] * p_lim, p['P_min'], p['P_max'], k, eps)
    p_a = sat_pa.value

    active = set(STATE_NAMES) - set(frozen_states(flags))

    # x1
    put('x1', 'x1', -1.0 / p['T_rv'])
    put('x1', 'T_rv', (x1 - u.V) / p['T_rv'] ** 2)
    # x2
    if 'x2' in active:
        put('x2', 'x9', 1.0 / p['T_p'])
        put('x2', 'x2', -1.0 / p['T_p'])
        put('x2', 'T_p', -(x9 - x2) / p['T_p'] ** 2)
    # x3
    put('x3', 'x3', -1.0 / p['T_iq'])
    for c, v in d_qorder.items():
        put('x3', c, v / p['T_iq'])
    put('x3', 'T_iq', -(q_order - x3) / p['T_iq'] ** 2)
    # x4
    put('x4', 'x4', -1.0 / p['T_g'])
    for c, v in d_iqt.items():
        put('x4', c, v / p['T_g'])
    put('x4', 'T_g', -(i_q_target - x4) / p['T_g'] ** 2)
    if flags.fflag:
        # x6
        put('x6', 'x6', -1.0 / p['T_rf'])
        put('x6', 'T_rf', -(u.freq - x6) / p['T_rf'] ** 2)
        # x7
        through_plim = p['k_ig'] - p['k_w'] * p['k_pg'] + p['k_w'] * sat_pa.slope * p['k_pg']
        for c, v in d_plim.items():
            put('x7', c, through_plim * v)
        put('x7', 'x7', p['k_w'] * (sat_pa.slope - 1.0))
        put('x7', 'k_ig', p_lim)
        put('x7', 'k_w', p_a - p['k_pg'] * p_lim - x7)
        put('x7', 'k_pg', p['k_w'] * (sat_pa.slope - 1.0) * p_lim)
        # x8
        sat_7 = _Sat(x7, p['P_min'], p['P_max'], k, eps)
        sat_r = _Sat((sat_7.value - x8) / u.dt, p['dP_min'], p['dP_max'], k, eps)
        put('x8', 'x7', sat_r.slope * sat_7.slope / u.dt)
        put('x8', 'x8', -sat_r.slope / u.dt)
    # x9
    put('x9', 'x8', 1.0 / p['T_pord'])
    put('x9', 'x9', -sat_pg.slope / p['T_pord'])
    put('x9', 'T_pord', -(x8 - sat_pg.value) / p['T_pord'] ** 2)
    # x10
    sat_10 = _Sat((i_d_target - x10) / p['T_g'], -p['rrpwr'], p['rrpwr'], k, eps)
    put('x10', 'x10', -sat_10.slope / p['T_g'])
    for c, v in d_idt.items():
        put('x10', c, sat_10.slope * v / p['T_g'])
    put('x10', 'T_g', -sat_10.slope * (i_d_target - x10) / p['T_g'] ** 2)

    names = spec.names
    for s in spec.active_states:
        i = names.index(s)
        for c, v in rows[s].items():
            if c in names:
                J[i, names.index(c)] = J[i, names.index(c)] + v
    return J
