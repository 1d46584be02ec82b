"""Truncated multivariate Taylor jets in (z, zbar).

A jet stores the Taylor coefficients of a function of ``2n`` independent
variables ``(z_1, ..., z_n, zbar_1, ..., zbar_n)`` about a base point, up to a
fixed total degree. Arithmetic on jets is exact Taylor arithmetic, so any
closed-form expression built from them yields exact mixed partials up to the
truncation degree (no finite differences anywhere).

Coefficients are batched: ``coeffs`` has shape ``batch + (n_monomials,)`` so a
whole grid of base points is processed in one pass.
"""

from __future__ import annotations

import itertools
import math
from functools import lru_cache

import numpy as np


class JetSpace:
    """Monomial bookkeeping for jets in ``nvars`` variables up to ``degree``."""

    def __init__(self, nvars: int, degree: int):
        self.nvars = nvars
        self.degree = degree
        monos = []
        for d in range(degree + 1):
            for combo in itertools.combinations_with_replacement(range(nvars), d):
                m = [0] * nvars
                for v in combo:
                    m[v] += 1
                monos.append(tuple(m))
        self.monomials = monos
        self.index = {m: i for i, m in enumerate(monos)}
        self.size = len(monos)
        self.degrees = np.array([sum(m) for m in monos])
        self.factorials = np.array(
            [math.prod(math.factorial(k) for k in m) for m in monos], dtype=float
        )

        ii, jj, kk = [], [], []
        for i, a in enumerate(monos):
            for j, b in enumerate(monos):
                if self.degrees[i] + self.degrees[j] > degree:
                    continue
                ii.append(i)
                jj.append(j)
                kk.append(self.index[tuple(x + y for x, y in zip(a, b))])
        order = np.argsort(kk, kind="stable")
        self._left = np.array(ii)[order]
        self._right = np.array(jj)[order]
        kk = np.array(kk)[order]
        # every monomial receives at least the pair (1, m)
        self._starts = np.searchsorted(kk, np.arange(self.size))

    def mul(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        prod = a[..., self._left] * b[..., self._right]
        return np.add.reduceat(prod, self._starts, axis=-1)


@lru_cache(maxsize=None)
def jet_space(nvars: int, degree: int) -> JetSpace:
    return JetSpace(nvars, degree)


class Jet:
    """A batched truncated Taylor series. Supports +, -, *, / by scalars."""

    __array_priority__ = 100

    def __init__(self, space: JetSpace, coeffs: np.ndarray):
        self.space = space
        self.coeffs = coeffs

    # construction -------------------------------------------------------
    @classmethod
    def constant(cls, space: JetSpace, value, batch_shape=()) -> "Jet":
        value = np.asarray(value, dtype=complex)
        shape = np.broadcast_shapes(value.shape, tuple(batch_shape))
        c = np.zeros(shape + (space.size,), dtype=complex)
        c[..., 0] = value
        return cls(space, c)

    @classmethod
    def variable(cls, space: JetSpace, var: int, value) -> "Jet":
        value = np.asarray(value, dtype=complex)
        c = np.zeros(value.shape + (space.size,), dtype=complex)
        c[..., 0] = value
        if space.degree >= 1:
            e = [0] * space.nvars
            e[var] = 1
            c[..., space.index[tuple(e)]] = 1.0
        return cls(space, c)

    # access -------------------------------------------------------------
    @property
    def value(self) -> np.ndarray:
        return self.coeffs[..., 0]

    def derivative(self, multi_index) -> np.ndarray:
        """Mixed partial ``D^m f`` at the base point, for a multi-index ``m``."""
        k = self.space.index[tuple(multi_index)]
        return self.coeffs[..., k] * self.space.factorials[k]

    # arithmetic ---------------------------------------------------------
    def _coerce(self, other):
        if isinstance(other, Jet):
            return other.coeffs
        other = np.asarray(other, dtype=complex)
        c = np.zeros(other.shape + (self.space.size,), dtype=complex)
        c[..., 0] = other
        return c

    def __add__(self, other):
        return Jet(self.space, self.coeffs + self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return Jet(self.space, self.coeffs - self._coerce(other))

    def __rsub__(self, other):
        return Jet(self.space, self._coerce(other) - self.coeffs)

    def __neg__(self):
        return Jet(self.space, -self.coeffs)

    def __mul__(self, other):
        if isinstance(other, Jet):
            return Jet(self.space, self.space.mul(self.coeffs, other.coeffs))
        other = np.asarray(other, dtype=complex)
        return Jet(self.space, self.coeffs * other[..., None])

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return self * other.reciprocal()
        other = np.asarray(other, dtype=complex)
        return Jet(self.space, self.coeffs / other[..., None])

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def conj_real(self) -> "Jet":
        """Real part of a jet, assuming it represents a real-valued function.

        Only used to scrub round-off imaginary parts of the constant term.
        """
        c = self.coeffs.copy()
        c[..., 0] = c[..., 0].real
        return Jet(self.space, c)

    # composition --------------------------------------------------------
    def compose(self, derivs) -> "Jet":
        """``F(self)`` given ``derivs[k] = F^{(k)}(self.value)`` for k <= degree."""
        d = self.space.degree
        delta = self.coeffs.copy()
        delta[..., 0] = 0.0
        acc = np.zeros_like(self.coeffs)
        acc[..., 0] = np.asarray(derivs[d]) / math.factorial(d)
        for k in range(d - 1, -1, -1):
            acc = self.space.mul(acc, delta)
            acc[..., 0] += np.asarray(derivs[k]) / math.factorial(k)
        return Jet(self.space, acc)

    def reciprocal(self) -> "Jet":
        u = self.value
        derivs = [(-1) ** k * math.factorial(k) * u ** (-(k + 1))
                  for k in range(self.space.degree + 1)]
        return self.compose(derivs)

    def power(self, p: float) -> "Jet":
        """``self ** p`` on the principal branch; the base value must be nonzero."""
        u = self.value
        derivs = []
        coef = 1.0
        for k in range(self.space.degree + 1):
            derivs.append(coef * u ** (p - k))
            coef *= p - k
        return self.compose(derivs)

    def __pow__(self, p):
        if isinstance(p, int) and p >= 0:
            out = Jet.constant(self.space, 1.0, self.value.shape)
            for _ in range(p):
                out = out * self
            return out
        return self.power(p)

    def exp(self) -> "Jet":
        e = np.exp(self.value)
        return self.compose([e] * (self.space.degree + 1))

    def log(self) -> "Jet":
        u = self.value
        derivs = [np.log(u)] + [(-1) ** (k - 1) * math.factorial(k - 1) * u ** (-k)
                                for k in range(1, self.space.degree + 1)]
        return self.compose(derivs)

    def cos(self) -> "Jet":
        u = self.value
        cyc = [np.cos(u), -np.sin(u), -np.cos(u), np.sin(u)]
        return self.compose([cyc[k % 4] for k in range(self.space.degree + 1)])

    def sin(self) -> "Jet":
        u = self.value
        cyc = [np.sin(u), np.cos(u), -np.sin(u), -np.cos(u)]
        return self.compose([cyc[k % 4] for k in range(self.space.degree + 1)])


def coordinate_jets(points: np.ndarray, degree: int):
    """Jets of ``z_j`` and ``zbar_j`` at every point of ``points`` (shape ``(..., n)``).

    Returns ``(z, zbar)``, two lists of length ``n``.
    """
    points = np.asarray(points, dtype=complex)
    n = points.shape[-1]
    space = jet_space(2 * n, degree)
    z = [Jet.variable(space, j, points[..., j]) for j in range(n)]
    zb = [Jet.variable(space, n + j, np.conj(points[..., j])) for j in range(n)]
    return z, zb


def mixed_index(n: int, holo=(), anti=()) -> tuple:
    """Multi-index for ``d_{z_holo} d_{zbar_anti}`` in a ``2n``-variable jet space."""
    m = [0] * (2 * n)
    for a in holo:
        m[a] += 1
    for b in anti:
        m[n + b] += 1
    return tuple(m)
