# Copyright (c) Microsoft Corporation.
# Licensed under the MIT license.

import math

import pytest
import torch

from core import taylor
from core.exceptions import InvalidArgument
from core.smoothing import (SmoothLimits, _sdbf, _ssf, hard_db, hard_sat, sdbf, sdbf_derivative_clamped, shape,
                            ssf, ssf_derivative_clamped)


def random_points(n=100000, seed=0, scale=5.0):
    generator = torch.Generator().manual_seed(seed)
    return scale * (2.0 * torch.rand(n, generator=generator, dtype=torch.float64) - 1.0)


def test_ssf_plus_sdbf_is_identity():
    lim = SmoothLimits(-0.5, 1.5, 12)
    x = random_points()
    assert torch.allclose(ssf(x, lim) + sdbf(x, lim), x, rtol=0, atol=1e-14)


def test_ssf_strictly_inside_limits():
    lim = SmoothLimits(-1.0, 1.0, 12)
    x = random_points(scale=3.0)
    y = ssf(x, lim)
    assert bool((y > -1.0).all()) and bool((y < 1.0).all())
    assert float(ssf(0.0, lim)) == 0.0


def test_ssf_known_values():
    lim = SmoothLimits(-1.0, 1.0, 12)
    assert float(ssf(1.0, lim)) == pytest.approx(2.0 ** (-1.0 / 12), rel=1e-14)
    assert float(ssf(-1.0, lim)) == pytest.approx(-2.0 ** (-1.0 / 12), rel=1e-14)


def test_ssf_reaches_limit_far_outside():
    lim = SmoothLimits(-1.0, 1.0, 12)
    assert float(ssf(1e6, lim)) == 1.0
    assert float(ssf(-1e6, lim)) == -1.0
    assert -1.0 < float(ssf(2.0, lim)) < 1.0


def test_large_arguments_do_not_overflow():
    lim = SmoothLimits(0.0, 1.0, 12)
    y = ssf(torch.tensor([1e6, -1e6]), lim)
    assert torch.isfinite(y).all()
    assert float(y[0]) == pytest.approx(1.0, abs=1e-12)
    assert float(y[1]) == pytest.approx(0.0, abs=1e-12)


def test_clamped_derivative_range():
    lim = SmoothLimits(-1.0, 1.0, 12)
    x = random_points(scale=20.0)
    d = ssf_derivative_clamped(x, lim, eps=1e-6)
    assert float(d.min()) >= 1e-6
    assert float(d.max()) <= 1.0
    dd = sdbf_derivative_clamped(x, lim, eps=1e-6)
    assert float(dd.min()) >= 1e-6
    assert float(dd.max()) <= 1.0


def test_clamped_derivative_matches_finite_difference():
    lim = SmoothLimits(-0.3, 0.7, 12)
    x = torch.linspace(-0.6, 1.0, 41, dtype=torch.float64)
    h = 1e-6
    fd = (ssf(x + h, lim) - ssf(x - h, lim)) / (2 * h)
    d = ssf_derivative_clamped(x, lim, eps=1e-6)
    away = fd > 1e-4
    assert torch.allclose(d[away], fd[away], rtol=1e-5, atol=1e-8)


def test_autograd_sees_clamped_slope():
    x = torch.tensor(50.0, dtype=torch.float64)
    grad = torch.func.grad(lambda z: _ssf(z, -1.0, 1.0, 12, 1e-6))(x)
    assert float(grad) == pytest.approx(1e-6)
    exact = torch.func.grad(lambda z: _ssf(z, -1.0, 1.0, 12, None))(x)
    assert float(exact) < 1e-6


def test_clamped_forward_value_unchanged():
    x = torch.tensor([-3.0, 0.2, 4.0], dtype=torch.float64)
    assert torch.equal(_ssf(x, -1.0, 1.0, 12, 1e-6), _ssf(x, -1.0, 1.0, 12, None))
    assert torch.equal(_sdbf(x, -1.0, 1.0, 12, 1e-6), _sdbf(x, -1.0, 1.0, 12, None))


def test_deadband_flat_inside_band():
    lim = SmoothLimits(-0.05, 0.05, 12)
    assert abs(float(sdbf(0.0, lim))) < 1e-15
    assert float(sdbf_derivative_clamped(0.0, lim, eps=0.0)) == 0.0


@pytest.mark.parametrize('k', [2, 4, 12, 40])
def test_ssf_error_bounded_by_sharpness(k):
    x = torch.tensor([-2.0, -0.5, 0.0, 0.3, 2.0], dtype=torch.float64)
    errors = (_ssf(x, -1.0, 1.0, k) - hard_sat(x, -1.0, 1.0)).abs().max()
    assert float(errors) <= 1.0 - 2.0 ** (-1.0 / k) + 1e-12


def test_hard_operators():
    x = torch.tensor([-2.0, 0.0, 2.0], dtype=torch.float64)
    assert hard_sat(x, -1.0, 1.0).tolist() == [-1.0, 0.0, 1.0]
    assert hard_db(x, -1.0, 1.0).tolist() == [-1.0, 0.0, 1.0]
    assert hard_sat(5.0, -math.inf, 1.0).item() == 1.0


def test_taylor_jet_agrees_with_tensor_evaluation():
    x0 = torch.tensor(0.7, dtype=torch.float64)
    jet = taylor.Jet(torch.tensor([0.7, 1.0, 0.0], dtype=torch.float64))
    value = shape(jet, 12)
    assert float(value.value) == pytest.approx(float(shape(x0, 12)), rel=1e-14)
    slope = torch.func.grad(lambda z: shape(z, 12))(x0)
    assert float(value.coeffs[1]) == pytest.approx(float(slope), rel=1e-12)


@pytest.mark.parametrize('lower, upper, k', [(1.0, 1.0, 12), (2.0, 1.0, 12), (0.0, 1.0, 3), (0.0, 1.0, 0),
                                             (-math.inf, 1.0, 12)])
def test_invalid_limits(lower, upper, k):
    with pytest.raises(InvalidArgument):
        SmoothLimits(lower, upper, k)


def test_non_finite_operand_rejected():
    lim = SmoothLimits(-1.0, 1.0)
    with pytest.raises(InvalidArgument):
        ssf(float('nan'), lim)
    with pytest.raises(InvalidArgument):
        ssf_derivative_clamped(0.0, lim, eps=-1.0)
