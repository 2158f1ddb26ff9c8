"""Scalar functions of density matrices with their differentials.

A functional exposes ``value(rho)``, ``d1(rho, A)`` (first differential in
the Hermitian direction A) and ``d2(rho, A)`` (second differential along
A twice). That is all the SME generator needs.
"""
from __future__ import annotations

import numpy as np

from .operators import trace_product


def _tr(M, A) -> float:
    return float(np.real(trace_product(M, A)))


class LinearFunctional:
    """V(rho) = Tr(K rho)."""

    def __init__(self, K):
        self.K = np.asarray(K, dtype=complex)

    def value(self, rho):
        return _tr(self.K, rho)

    def d1(self, rho, A):
        return _tr(self.K, A)

    def d2(self, rho, A):
        return 0.0


class PowerFunctional:
    """V(rho) = Tr(X rho)**delta for positive semidefinite X."""

    def __init__(self, X, delta: float):
        if not 0.0 < delta <= 1.0:
            raise ValueError(f"delta must lie in (0, 1], got {delta}")
        self.X = np.asarray(X, dtype=complex)
        self.delta = delta

    def value(self, rho):
        return _tr(self.X, rho) ** self.delta

    def d1(self, rho, A):
        y = _tr(self.X, rho)
        return self.delta * y ** (self.delta - 1) * _tr(self.X, A)

    def d2(self, rho, A):
        y = _tr(self.X, rho)
        return self.delta * (self.delta - 1) * y ** (self.delta - 2) * _tr(self.X, A) ** 2


class SqrtPopulations:
    """V(rho) = sum_i sqrt(Tr(P_i rho)) over the given projections."""

    def __init__(self, projections):
        self.P = [np.asarray(P, dtype=complex) for P in projections]

    def value(self, rho):
        return sum(np.sqrt(max(_tr(P, rho), 0.0)) for P in self.P)

    def d1(self, rho, A):
        return sum(_tr(P, A) / (2.0 * np.sqrt(_tr(P, rho))) for P in self.P)

    def d2(self, rho, A):
        return sum(-_tr(P, A) ** 2 / (4.0 * _tr(P, rho) ** 1.5) for P in self.P)


class InversePopulation:
    """V(rho) = 1 / Tr(P rho); blows up as the population in P vanishes."""

    def __init__(self, P):
        self.P = np.asarray(P, dtype=complex)

    def value(self, rho):
        return 1.0 / _tr(self.P, rho)

    def d1(self, rho, A):
        return -_tr(self.P, A) / _tr(self.P, rho) ** 2

    def d2(self, rho, A):
        return 2.0 * _tr(self.P, A) ** 2 / _tr(self.P, rho) ** 3


class NumericFunctional:
    """Wraps a value-only function; differentials by central differences."""

    def __init__(self, fn, step: float = 1e-5):
        self.fn = fn
        self.step = step

    def value(self, rho):
        return float(self.fn(rho))

    def _h(self, A):
        return self.step / max(1.0, float(np.max(np.abs(A), initial=0.0)))

    def d1(self, rho, A):
        h = self._h(A)
        return (self.fn(rho + h * A) - self.fn(rho - h * A)) / (2 * h)

    def d2(self, rho, A):
        h = self._h(A)
        return (self.fn(rho + h * A) - 2 * self.fn(rho) + self.fn(rho - h * A)) / h ** 2
