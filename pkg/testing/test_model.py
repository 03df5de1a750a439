# Copyright (c) Microsoft Corporation.
# Licensed under the MIT license.

import math

import numpy as np
import pytest
import torch

from core.exceptions import ConfigError, InvalidArgument, SimulationFault
from core.model import (STATE_NAMES, DeraInputs, DeraParameters, FlagConfig, current_limits, equilibrium,
                        frozen_states, measure, outputs, rhs, simulate, voltage_trip)

CASE1 = FlagConfig.preset('CASE1')
CASE2 = FlagConfig.preset('CASE2')


def state(**values):
    x = torch.tensor([1.0, 0.5, 0.2, 0.2, 1.0, 1.0, 0.5, 0.5, 0.5, 0.5], dtype=torch.float64)
    for name, v in values.items():
        x[STATE_NAMES.index(name)] = v
    return x


def test_voltage_filter_rate():
    dx = rhs(state(x1=0.9), DeraInputs(V=1.0), DeraParameters(T_rv=0.02), CASE1)
    assert float(dx[0]) == pytest.approx(5.0)


def test_reactive_current_branch_case1():
    dx = rhs(state(x1=1.0, x3=10.0), DeraInputs(V=1.0, Q_ref=0.2), DeraParameters(T_iq=0.02), CASE1)
    assert float(dx[2]) == pytest.approx(-490.0)


@pytest.mark.parametrize('flags', [CASE1, CASE2])
def test_frozen_states_have_zero_rate(flags):
    generator = torch.Generator().manual_seed(1)
    for _ in range(5):
        x = state() + 0.1 * torch.randn(10, generator=generator, dtype=torch.float64)
        u = DeraInputs(V=0.85, freq=0.995)
        dx = rhs(x, u, DeraParameters(), flags)
        for s in frozen_states(flags):
            assert float(dx[STATE_NAMES.index(s)]) == 0.0
    if flags == CASE1:
        assert frozen_states(flags) == ('x2', 'x5', 'x6', 'x7')
    else:
        assert frozen_states(flags) == ('x5',)


@pytest.mark.parametrize('flags', [CASE1, CASE2])
def test_equilibrium_is_a_fixed_point(flags):
    u = DeraInputs(V=1.0, freq=1.0)
    x = equilibrium(u, DeraParameters(), flags)
    dx = rhs(x, u, DeraParameters(), flags)
    assert float(dx.abs().max()) < 1e-8


def test_current_limits():
    assert current_limits(0, 0.5, 0.0, 1.2).I_dmax == pytest.approx(1.2)
    assert current_limits(1, 1.2, 0.1, 1.2).I_qmax == pytest.approx(0.0, abs=1e-5)
    assert current_limits(0, 0.5, 0.6, 1.2).I_dmax == pytest.approx(math.sqrt(1.08))
    limits = current_limits(0, 0.5, 5.0, 1.2)
    assert limits.I_dmax <= 1.2 and abs(limits.I_qmax) <= 1.2
    with pytest.raises(InvalidArgument):
        current_limits(0, 0.5, 0.1, 0.0)


def test_voltage_trip_branches():
    p = DeraParameters()
    assert voltage_trip(1.0, 0.0, p) == 1.0
    assert voltage_trip(0.3, 0.0, p) == 0.0
    assert voltage_trip(p.V_l0, 0.0, p) == 0.0
    assert voltage_trip(1.25, 0.0, p) == 0.0
    for V in np.linspace(0.3, 1.3, 101):
        for t in (0.0, 0.1, 0.16, 0.5):
            assert 0.0 <= voltage_trip(float(V), t, p) <= 1.0


def test_outputs_in_voltage_frame():
    p = DeraParameters(X_e=0.1)
    x = state(x4=0.2, x10=0.5)
    y = outputs(x, DeraInputs(V=1.0), p)
    assert float(y.P) == pytest.approx(0.5)
    assert float(y.Q) == pytest.approx(0.2)
    assert float(y.E_d) == pytest.approx(0.98)
    zero = outputs(state(x4=0.0, x10=0.0), DeraInputs(V=0.7), p)
    assert float(zero.P) == 0.0 and float(zero.Q) == 0.0


def test_reactive_power_increases_with_x4():
    u = DeraInputs(V=0.9)
    q = [float(outputs(state(x4=v), u, DeraParameters()).Q) for v in (0.1, 0.2, 0.3)]
    assert q[0] < q[1] < q[2]
    values = measure(list(state(x4=0.3, x10=0.4)), u, ('V', 'P', 'Q'))
    assert [float(v) for v in values] == pytest.approx([0.9, 0.36, 0.27])


def test_parameter_validation():
    with pytest.raises(InvalidArgument):
        DeraParameters(T_rv=0.0)
    with pytest.raises(InvalidArgument):
        DeraParameters(dbd1=0.1, dbd2=0.05)
    with pytest.raises(InvalidArgument):
        DeraParameters(V_min=0.6)
    with pytest.raises(ConfigError):
        DeraParameters.from_dict({'T_xx': 1.0})
    assert DeraParameters.from_dict({'T_rv': 0.21}).T_rv == 0.21
    with pytest.raises(InvalidArgument):
        FlagConfig(2, 0, 0, 0)
    with pytest.raises(InvalidArgument):
        DeraInputs(V=-0.1)


def test_nan_state_names_the_state():
    x = state(x9=float('nan'))
    with pytest.raises(SimulationFault) as info:
        rhs(x, DeraInputs(), DeraParameters(), CASE1)
    assert info.value.state in STATE_NAMES


def test_smooth_trajectory_approaches_hard_operators():
    p = DeraParameters()
    times = np.arange(31) / 30.0
    template = DeraInputs(V=1.0)
    inputs = [template.replace(V=0.85 if t >= 0.3 else 1.0) for t in times]
    x0 = equilibrium(inputs[0], p, CASE1)
    hard = simulate(x0, lambda i, t: inputs[i], p, CASE1, times, substeps=16, smooth=False)
    gaps = []
    for k in (12, 64):
        smooth = simulate(x0, lambda i, t: inputs[i], p, CASE1, times, substeps=16, k=k)
        gaps.append(float((smooth - hard).abs().max()))
    assert gaps[1] < gaps[0]
