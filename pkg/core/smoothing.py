# Copyright (c) Microsoft Corporation.
# Licensed under the MIT license.
'''
Smooth saturation (SSF) and smooth deadband (SDBF) operators.

Both are built on the shape function :math:`g(z) = z (1 + z^k)^{-1/k}`
with :math:`z = (x - \\lambda)/\\mu`, :math:`\\lambda = (h + \\ell)/2`,
:math:`\\mu = (h - \\ell)/2`. The public functions validate their
arguments; the underscore versions are used inside the plant, where
arguments may be batched, traced by :code:`torch.func` or be
:code:`core.taylor.Jet` objects.
'''

import math
from dataclasses import dataclass

import torch

from core import taylor
from core.exceptions import InvalidArgument

DEFAULT_SHARPNESS = 12
DEFAULT_EPS = 1e-6


@dataclass(frozen=True)
class SmoothLimits:
    '''Limits of a smooth operator.

    Attributes:
        lower (float): lower limit :math:`\\ell`.
        upper (float): upper limit :math:`h`, strictly above :code:`lower`.
        k (int): sharpness, even and at least 2.
    '''
    lower: float
    upper: float
    k: int = DEFAULT_SHARPNESS

    def __post_init__(self):
        if not (math.isfinite(self.lower) and math.isfinite(self.upper)):
            raise InvalidArgument(f'limits must be finite, got [{self.lower}, {self.upper}]')
        if self.lower >= self.upper:
            raise InvalidArgument(f'degenerate limits: lower {self.lower} >= upper {self.upper}')
        if int(self.k) != self.k or self.k < 2 or self.k % 2:
            raise InvalidArgument(f'sharpness must be an even integer >= 2, got {self.k}')

    @property
    def center(self):
        return 0.5 * (self.upper + self.lower)

    @property
    def half_width(self):
        return 0.5 * (self.upper - self.lower)


def _tensor(x):
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(x, dtype=torch.float64)


def _check_finite(x):
    if not bool(torch.isfinite(_tensor(x)).all()):
        raise InvalidArgument('operand must be finite')


def shape(z, k):
    ''':math:`g(z)`; the |z| > 1 branch uses the algebraically equal form
    :math:`\\mathrm{sign}(z)(1 + |z|^{-k})^{-1/k}` to avoid overflow.'''
    if isinstance(z, taylor.Jet):
        return z * (1.0 + z ** k) ** (-1.0 / k)
    z = _tensor(z)
    inner = torch.abs(z) <= 1.0
    z_in = torch.where(inner, z, torch.zeros_like(z))
    a_out = torch.where(inner, torch.ones_like(z), torch.abs(z))
    g_in = z_in * (1.0 + z_in ** k) ** (-1.0 / k)
    g_out = torch.sign(z) * (1.0 + a_out ** (-k)) ** (-1.0 / k)
    return torch.where(inner, g_in, g_out)


def shape_derivative(z, k):
    ''':math:`g'(z) = (1 + z^k)^{-1 - 1/k}`, evaluated in log space so it underflows to 0 instead of NaN.'''
    z = _tensor(z)
    return torch.exp((-1.0 - 1.0 / k) * torch.log1p(z ** k))


def _clamped_slope(z, k, eps, deadband):
    slope = shape_derivative(z, k)
    if deadband:
        slope = -torch.expm1((-1.0 - 1.0 / k) * torch.log1p(z ** k))
    if eps is not None:
        slope = torch.clamp(slope, min=eps)
    return slope


class _ClampedShape(torch.autograd.Function):
    '''Shape function whose derivative is floored at eps.

    The forward value is never altered; only the derivative seen by
    forward- and reverse-mode differentiation is clamped.
    '''
    generate_vmap_rule = True

    @staticmethod
    def forward(z, k, eps, deadband):
        g = shape(z, k)
        return z - g if deadband else g

    @staticmethod
    def setup_context(ctx, inputs, output):
        z, k, eps, deadband = inputs
        ctx.k, ctx.eps, ctx.deadband = k, eps, deadband
        ctx.save_for_backward(z)
        ctx.save_for_forward(z)

    @staticmethod
    def backward(ctx, grad):
        z, = ctx.saved_tensors
        return grad * _clamped_slope(z, ctx.k, ctx.eps, ctx.deadband), None, None, None

    @staticmethod
    def jvp(ctx, z_t, *_):
        z, = ctx.saved_tensors
        return z_t * _clamped_slope(z, ctx.k, ctx.eps, ctx.deadband)


def _shape_clamped(z, k, eps, deadband=False):
    if eps is None or isinstance(z, taylor.Jet):
        g = shape(z, k)
        return z - g if deadband else g
    return _ClampedShape.apply(_tensor(z), k, eps, deadband)


def _ssf(x, lower, upper, k=DEFAULT_SHARPNESS, eps=None):
    lam = 0.5 * (upper + lower)
    mu = 0.5 * (upper - lower)
    return lam + mu * _shape_clamped((x - lam) / mu, k, eps)


def _sdbf(x, lower, upper, k=DEFAULT_SHARPNESS, eps=None):
    lam = 0.5 * (upper + lower)
    mu = 0.5 * (upper - lower)
    return mu * _shape_clamped((x - lam) / mu, k, eps, deadband=True)


def ssf(x, lim: SmoothLimits):
    '''Smooth saturation of :code:`x` to :code:`(lim.lower, lim.upper)`.

    Args:
        x (float or torch.Tensor): finite operand.
        lim (SmoothLimits): limits and sharpness.

    Returns:
        torch.Tensor within the limits. Near the centre the result is strictly
        inside; far past a limit it rounds to the limit itself in float64.
    '''
    _check_finite(x)
    return _ssf(_tensor(x), lim.lower, lim.upper, lim.k)


def sdbf(x, lim: SmoothLimits):
    '''Smooth deadband; :code:`ssf(x) + sdbf(x) == x`.'''
    _check_finite(x)
    x = _tensor(x)
    return x - _ssf(x, lim.lower, lim.upper, lim.k)


def ssf_derivative_clamped(x, lim: SmoothLimits, eps=DEFAULT_EPS):
    '''Derivative of :code:`ssf` floored at :code:`eps`, always within [eps, 1].'''
    _check_finite(x)
    if eps is None or eps < 0:
        raise InvalidArgument(f'eps must be non-negative, got {eps}')
    z = (_tensor(x) - lim.center) / lim.half_width
    return _clamped_slope(z, lim.k, eps, deadband=False)


def sdbf_derivative_clamped(x, lim: SmoothLimits, eps=DEFAULT_EPS):
    '''Derivative of :code:`sdbf` floored at :code:`eps`; vanishes inside the band when unclamped.'''
    _check_finite(x)
    if eps is None or eps < 0:
        raise InvalidArgument(f'eps must be non-negative, got {eps}')
    z = (_tensor(x) - lim.center) / lim.half_width
    return _clamped_slope(z, lim.k, eps, deadband=True)


def hard_sat(x, lower, upper):
    '''Saturation operator; either bound may be infinite for one-sided limits.'''
    if lower > upper:
        raise InvalidArgument(f'lower {lower} above upper {upper}')
    _check_finite(x)
    return taylor.clamp(_tensor(x), min=None if lower == -math.inf else lower,
                        max=None if upper == math.inf else upper)


def hard_db(x, lower, upper):
    '''Deadband operator: zero on [lower, upper], offset outside.'''
    if lower > upper:
        raise InvalidArgument(f'lower {lower} above upper {upper}')
    _check_finite(x)
    x = _tensor(x)
    return torch.where(x > upper, x - upper, torch.where(x < lower, x - lower, torch.zeros_like(x)))


def _hard_sat(x, lower, upper):
    return taylor.clamp(x, min=lower, max=upper)


def _hard_db(x, lower, upper):
    return x - taylor.clamp(x, min=lower, max=upper)
