# Copyright (c) Microsoft Corporation.
# Licensed under the MIT license.

import math

import numpy as np
import pytest
import torch
from scipy.linalg import expm

from core.exceptions import InvalidArgument, SimulationFault
from core.integrator import propagate, propagate_with_jacobian, rk4_step, rk4_step_with_jacobian


def decay(x, u):
    return -x


def test_zero_field_keeps_state():
    x = torch.tensor([1.0, -2.0], dtype=torch.float64)
    zero = lambda x, u: torch.zeros_like(x)
    result = rk4_step_with_jacobian(x, None, 0.01, zero, lambda x, u: torch.zeros(2, 2, dtype=torch.float64))
    assert torch.equal(result.next_state, x)
    assert torch.equal(result.transition_jacobian, torch.eye(2, dtype=torch.float64))


def test_scalar_decay_against_exponential():
    x = rk4_step(torch.tensor([1.0], dtype=torch.float64), None, 0.01, decay)
    assert abs(float(x) - math.exp(-0.01)) < 1e-10


def test_scalar_transition_is_rk4_polynomial():
    dt = 0.01
    result = rk4_step_with_jacobian(torch.tensor([1.0], dtype=torch.float64), None, dt, decay,
                                    lambda x, u: -torch.eye(1, dtype=torch.float64))
    expected = 1 - dt + dt ** 2 / 2 - dt ** 3 / 6 + dt ** 4 / 24
    assert float(result.transition_jacobian) == pytest.approx(expected, rel=1e-14)


def test_linear_system_matches_truncated_exponential():
    A = torch.tensor([[0.0, 1.0], [-4.0, -0.3]], dtype=torch.float64)
    dt = 0.05
    x0 = torch.tensor([0.2, 1.0], dtype=torch.float64)
    series = sum(torch.linalg.matrix_power(A * dt, k) / math.factorial(k) for k in range(5))
    x1 = rk4_step(x0, None, dt, lambda x, u: A @ x)
    assert torch.allclose(x1, series @ x0, atol=1e-14)


def pendulum(x, u):
    return torch.stack([x[1], -torch.sin(x[0]) - 0.2 * x[1] + u])


def pendulum_jacobian(x, u):
    return torch.func.jacfwd(lambda z: pendulum(z, u))(x)


@pytest.mark.parametrize('mode', ['exact', 'literal'])
def test_frame_jacobian_against_finite_difference(mode):
    x0 = torch.tensor([0.4, -0.3], dtype=torch.float64)
    result = propagate_with_jacobian(x0, 0.1, 1.0 / 30, 32, pendulum, pendulum_jacobian, mode=mode)
    h = 1e-6
    columns = []
    for j in range(2):
        e = torch.zeros(2, dtype=torch.float64)
        e[j] = h
        columns.append((propagate(x0 + e, 0.1, 1.0 / 30, 32, pendulum) -
                        propagate(x0 - e, 0.1, 1.0 / 30, 32, pendulum)) / (2 * h))
    fd = torch.stack(columns, dim=-1)
    error = (fd - result.transition_jacobian).abs().max() / fd.abs().max()
    if mode == 'exact':
        assert float(error) < 1e-8
    else:
        assert float(error) < 1e-4
    assert torch.allclose(result.next_state, propagate(x0, 0.1, 1.0 / 30, 32, pendulum))


def test_invalid_arguments():
    x = torch.tensor([1.0], dtype=torch.float64)
    with pytest.raises(InvalidArgument):
        rk4_step(x, None, 0.0, decay)
    with pytest.raises(InvalidArgument):
        rk4_step_with_jacobian(x, None, 0.01, decay, lambda x, u: -torch.eye(1), mode='midpoint')


def test_nan_raises_simulation_fault():
    blowup = lambda x, u: x * float('nan')
    with pytest.raises(SimulationFault):
        rk4_step(torch.tensor([1.0], dtype=torch.float64), None, 0.01, blowup, step=3)


def test_frame_propagation_matches_matrix_exponential():
    A = np.array([[-5.0, 2.0, 0.0], [0.0, -50.0, 10.0], [1.0, 0.0, -2.0]])
    x0 = torch.tensor([1.0, -0.5, 0.25], dtype=torch.float64)
    frame = 1.0 / 30
    At = torch.as_tensor(A)
    result = propagate_with_jacobian(x0, None, frame, 32, lambda x, u: At @ x, lambda x, u: At)
    expected = expm(A * frame)
    assert np.allclose(result.transition_jacobian.numpy(), expected, atol=1e-6)
    assert np.allclose(result.next_state.numpy(), expected @ x0.numpy(), atol=1e-6)
