# Copyright (c) Microsoft Corporation.
# Licensed under the MIT license.
'''
Fixed-step RK4 propagation and the matching discrete transition Jacobian.

Inputs are held constant (zero-order hold) over every step. A
measurement frame is covered by :code:`substeps` equal RK4 steps.
'''

from dataclasses import dataclass
from typing import Callable, Optional

import torch

from core.exceptions import InvalidArgument, SimulationFault

STAGE_MODES = ('exact', 'literal')


@dataclass
class StepResult:
    next_state: torch.Tensor
    transition_jacobian: Optional[torch.Tensor] = None


def _check(x, step=None, time=None):
    if not bool(torch.isfinite(x).all()):
        raise SimulationFault('non-finite state after RK4 step', step=step, time=time)


def rk4_step(x, u, dt, f: Callable, check=True, step=None):
    '''Classical RK4 update :math:`x + dt/6 (k_1 + 2k_2 + 2k_3 + k_4)`.

    Args:
        x (torch.Tensor): state, any leading batch shape.
        u: inputs passed unchanged to every stage.
        dt (float): step length (s).
        f (callable): :code:`f(x, u) -> dx/dt`.
        check (bool): raise on non-finite results; disable under torch.func transforms.
        step (int): index reported in errors.
    '''
    if dt <= 0:
        raise InvalidArgument(f'dt must be positive, got {dt}')
    k1 = f(x, u)
    k2 = f(x + 0.5 * dt * k1, u)
    k3 = f(x + 0.5 * dt * k2, u)
    k4 = f(x + dt * k3, u)
    x_next = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if check:
        _check(x_next, step=step)
    return x_next


def rk4_step_with_jacobian(x, u, dt, f: Callable, J: Callable, mode='exact', check=True, step=None) -> StepResult:
    '''RK4 step plus :math:`F = I + dt/6 (J_1 + 2J_2 + 2J_3 + J_4)`.

    In :code:`exact` mode each :math:`J_i` is the derivative of stage i with
    respect to the step's starting state, i.e. it carries the inner stage
    sensitivities; in :code:`literal` mode :math:`J_i` is the plain vector
    field Jacobian at the stage point.

    Args:
        x (torch.Tensor): state of shape [n].
        J (callable): :code:`J(x, u) -> df/dx`, shape [n, n].
        mode (str): :code:`exact` or :code:`literal`.
    '''
    if mode not in STAGE_MODES:
        raise InvalidArgument(f'unknown stage mode {mode!r}, choose from {STAGE_MODES}')
    if dt <= 0:
        raise InvalidArgument(f'dt must be positive, got {dt}')
    eye = torch.eye(x.shape[-1], dtype=x.dtype, device=x.device)

    k1 = f(x, u)
    s2 = x + 0.5 * dt * k1
    k2 = f(s2, u)
    s3 = x + 0.5 * dt * k2
    k3 = f(s3, u)
    s4 = x + dt * k3
    k4 = f(s4, u)

    a1, a2, a3, a4 = J(x, u), J(s2, u), J(s3, u), J(s4, u)
    if mode == 'exact':
        j1 = a1
        j2 = a2 @ (eye + 0.5 * dt * j1)
        j3 = a3 @ (eye + 0.5 * dt * j2)
        j4 = a4 @ (eye + dt * j3)
    else:
        j1, j2, j3, j4 = a1, a2, a3, a4

    x_next = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    F = eye + dt / 6.0 * (j1 + 2.0 * j2 + 2.0 * j3 + j4)
    if check:
        _check(x_next, step=step)
        if not bool(torch.isfinite(F).all()):
            raise SimulationFault('non-finite transition Jacobian', step=step)
    return StepResult(x_next, F)


def propagate(x, u, frame, substeps, f: Callable, check=True):
    '''Advance over one measurement frame of length :code:`frame` with inputs held.'''
    dt = frame / substeps
    for i in range(substeps):
        x = rk4_step(x, u, dt, f, check=check, step=i)
    return x


def propagate_with_jacobian(x, u, frame, substeps, f: Callable, J: Callable, mode='exact', check=True) -> StepResult:
    '''Frame propagation; the frame transition Jacobian is the product of the substep ones.'''
    dt = frame / substeps
    F = torch.eye(x.shape[-1], dtype=x.dtype, device=x.device)
    for i in range(substeps):
        result = rk4_step_with_jacobian(x, u, dt, f, J, mode=mode, check=check, step=i)
        x = result.next_state
        F = result.transition_jacobian @ F
    return StepResult(x, F)
