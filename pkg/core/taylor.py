# Copyright (c) Microsoft Corporation.
# Licensed under the MIT license.
'''
Truncated Taylor series arithmetic on torch tensors.

A :code:`Jet` holds the coefficients :math:`a_0, ..., a_K` of
:math:`a(t) = \\sum_i a_i t^i` in the last tensor dimension. Arithmetic
on jets propagates all K coefficients at once, which lets the plant's
vector field be expanded along its own flow: for
:math:`\\dot{x} = f(x)` the k-th Lie derivative of an output
:math:`h` is :math:`k!` times the k-th Taylor coefficient of
:math:`h(x(t))`. Every operation is built from differentiable torch
primitives, so :code:`torch.func.jacfwd` can be applied on top.

Only the operations the plant needs are provided: field arithmetic,
powers, square roots and one-sided clamps.
'''

import functools
import math

import torch
import torch.nn.functional as F


@functools.lru_cache(maxsize=None)
def _antidiagonals(size, dtype, device):
    idx = torch.arange(size, device=device)
    mask = (idx.view(1, -1, 1) + idx.view(1, 1, -1)) == idx.view(-1, 1, 1)
    return mask.to(dtype)


def _as_tensor(value, like):
    if isinstance(value, torch.Tensor):
        return value
    return torch.as_tensor(value, dtype=like.dtype, device=like.device)


def _cauchy(a, b):
    size = max(a.shape[-1], b.shape[-1])
    outer = a.unsqueeze(-1) * b.unsqueeze(-2)
    return torch.einsum('...ij,nij->...n', outer, _antidiagonals(size, a.dtype, a.device))


class Jet:
    '''Truncated power series with coefficients stored last.

    Args:
        coeffs (torch.Tensor): tensor of shape :code:`[..., K + 1]`.
    '''

    __slots__ = ('coeffs',)
    __array_priority__ = 1000

    def __init__(self, coeffs):
        self.coeffs = coeffs

    @staticmethod
    def constant(value, size, like):
        value = _as_tensor(value, like)
        return Jet(F.pad(value.unsqueeze(-1), (0, size - 1)))

    @staticmethod
    def seed(x0, order):
        '''Jet of order :code:`order` whose value is :code:`x0` and whose higher terms are zero.'''
        return Jet(F.pad(x0.unsqueeze(-1), (0, order)))

    @property
    def size(self):
        return self.coeffs.shape[-1]

    @property
    def value(self):
        return self.coeffs[..., 0]

    @property
    def shape(self):
        return self.coeffs.shape[:-1]

    def __len__(self):
        return self.coeffs.shape[0]

    def __getitem__(self, idx):
        if not isinstance(idx, tuple):
            idx = (idx,)
        return Jet(self.coeffs[idx + (Ellipsis,)] if Ellipsis not in idx else self.coeffs[idx])

    def unbind(self):
        return [Jet(c) for c in self.coeffs.unbind(0)]

    def _lift(self, other):
        if isinstance(other, Jet):
            return other
        return Jet.constant(other, self.size, self.coeffs)

    def __repr__(self):
        return f'Jet(order={self.size - 1}, shape={tuple(self.shape)})'

    # Field arithmetic

    def __neg__(self):
        return Jet(-self.coeffs)

    def __pos__(self):
        return self

    def __add__(self, other):
        return Jet(self.coeffs + self._lift(other).coeffs)

    __radd__ = __add__

    def __sub__(self, other):
        return Jet(self.coeffs - self._lift(other).coeffs)

    def __rsub__(self, other):
        return Jet(self._lift(other).coeffs - self.coeffs)

    def __mul__(self, other):
        if isinstance(other, Jet):
            return Jet(_cauchy(self.coeffs, other.coeffs))
        return Jet(self.coeffs * _as_tensor(other, self.coeffs).unsqueeze(-1))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.coeffs / _as_tensor(other, self.coeffs).unsqueeze(-1))
        a, b = torch.broadcast_tensors(self.coeffs, other.coeffs)
        quotient = []
        for n in range(a.shape[-1]):
            acc = a[..., n]
            for j in range(1, n + 1):
                acc = acc - b[..., j] * quotient[n - j]
            quotient.append(acc / b[..., 0])
        return Jet(torch.stack(quotient, dim=-1))

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def __pow__(self, exponent):
        if isinstance(exponent, int) or (isinstance(exponent, float) and exponent.is_integer() and exponent >= 0):
            return self._integer_power(int(exponent))
        return self._real_power(float(exponent))

    def _integer_power(self, n):
        if n < 0:
            return 1.0 / self._integer_power(-n)
        result = None
        base = self
        while n:
            if n & 1:
                result = base if result is None else result * base
            n >>= 1
            if n:
                base = base * base
        return result if result is not None else self._lift(1.0)

    def _real_power(self, alpha):
        # y b' = alpha y' b, solved coefficient by coefficient; needs b_0 != 0
        b = self.coeffs
        b0 = b[..., 0]
        terms = [b0 ** alpha]
        for n in range(1, b.shape[-1]):
            acc = torch.zeros_like(b0)
            for j in range(1, n + 1):
                acc = acc + ((alpha + 1.0) * j - n) * b[..., j] * terms[n - j]
            terms.append(acc / (n * b0))
        return Jet(torch.stack(terms, dim=-1))


def value_of(x):
    return x.value if isinstance(x, Jet) else x


def clamp(x, min=None, max=None):
    '''One-sided or two-sided hard clamp; a bound equal to the value keeps the identity branch.'''
    if not isinstance(x, Jet):
        x = torch.as_tensor(x, dtype=torch.float64) if not isinstance(x, torch.Tensor) else x
        return torch.clamp(x, min=min, max=max)
    out = x.coeffs
    if min is not None:
        lower = x._lift(min)
        out = torch.where((x.value < lower.value).unsqueeze(-1), lower.coeffs, out)
    if max is not None:
        upper = x._lift(max)
        out = torch.where((x.value > upper.value).unsqueeze(-1), upper.coeffs, out)
    return Jet(out)


def sqrt(x):
    if isinstance(x, Jet):
        return x ** 0.5
    return torch.sqrt(torch.as_tensor(x, dtype=torch.float64))


def stack(items):
    '''Stack scalars, tensors or jets along a new trailing state dimension.'''
    jets = [v for v in items if isinstance(v, Jet)]
    if jets:
        like = jets[0]
        coeffs = [like._lift(v).coeffs for v in items]
        return Jet(torch.stack(torch.broadcast_tensors(*coeffs), dim=-2))
    tensors = [torch.as_tensor(v, dtype=torch.float64) for v in items]
    return torch.stack(torch.broadcast_tensors(*tensors), dim=-1)


def lie_derivatives(vector_field, output, x0, order):
    '''Exact Lie derivatives of :code:`output` along :code:`vector_field`.

    The flow's Taylor coefficients are built one order at a time,
    :math:`x_{m+1} = f_m / (m + 1)`, where :math:`f_m` only depends on
    :math:`x_0, ..., x_m`.

    Args:
        vector_field (callable): maps a state jet of shape :code:`[n]` to a jet of shape :code:`[n]`.
        output (callable): maps a state jet to an output jet of shape :code:`[p]`.
        x0 (torch.Tensor): expansion point, shape :code:`[n]`.
        order (int): highest Lie derivative order.

    Returns:
        torch.Tensor of shape :code:`[order + 1, p]`, row k holding :math:`L_f^k h(x_0)`.
    '''
    coeffs = x0.unsqueeze(-1)
    for m in range(order):
        fm = vector_field(Jet(coeffs)).coeffs[..., m]
        coeffs = torch.cat([coeffs, (fm / (m + 1)).unsqueeze(-1)], dim=-1)
    y = output(Jet(coeffs)).coeffs
    factorials = torch.tensor([float(math.factorial(k)) for k in range(order + 1)], dtype=y.dtype, device=y.device)
    return (y * factorials).transpose(-1, -2)
