"""Proximity operators of separable convex potentials.

``prox_phi(v) = argmin_u 0.5 * ||u - v||**2 + phi(u)``.

Every potential here is separable: parameters are scalars or arrays that
broadcast against the signal, and ``prox(v, eta)`` returns the prox of
``phi / eta`` applied coordinatewise.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import CompositionUnsupportedError, ParameterError, ShapeError

__all__ = [
    "ScalarPotential",
    "AbsShifted",
    "PoissonNLL",
    "BoxIndicator",
    "ZeroPotential",
    "SeparableFunction",
    "prox_soft_threshold",
    "prox_poisson_nll",
    "prox_box",
    "prox_separable",
    "prox_compose_semiortho",
    "prox_oracle",
]


def prox_soft_threshold(xi, alpha, shift=0.0):
    """``shift + sign(xi - shift) * max(|xi - shift| - alpha, 0)``."""
    if np.any(np.asarray(alpha) <= 0):
        raise ParameterError(f"threshold must be positive, got {alpha}")
    t = np.asarray(xi, dtype=np.float64) - shift
    out = shift + np.sign(t) * np.maximum(np.abs(t) - alpha, 0.0)
    return out if np.ndim(out) else float(out)


def prox_poisson_nll(xi, alpha, chi):
    """Prox of ``-chi ln(u) + alpha u`` (with its domain convention at ``chi = 0``).

    Evaluates ``(xi - alpha + sqrt((xi - alpha)**2 + 4 chi)) / 2`` in a
    cancellation-free form.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    chi = np.asarray(chi, dtype=np.float64)
    if np.any(alpha <= 0):
        raise ParameterError(f"alpha must be positive, got {alpha}")
    if np.any(chi < 0):
        raise ParameterError("counts chi must be nonnegative")
    b = np.asarray(xi, dtype=np.float64) - alpha
    s = np.sqrt(b * b + 4.0 * chi)
    with np.errstate(divide="ignore", invalid="ignore"):
        neg = np.where(s - b > 0, 2.0 * chi / (s - b), 0.0)
    out = np.where(b >= 0, 0.5 * (b + s), neg)
    return out if np.ndim(out) else float(out)


def prox_box(xi, lo, hi):
    if np.any(np.asarray(lo) > np.asarray(hi)):
        raise ParameterError(f"empty box [{lo}, {hi}]")
    out = np.clip(np.asarray(xi, dtype=np.float64), lo, hi)
    return out if np.ndim(out) else float(out)


class ScalarPotential:
    """Separable potential ``sum_k phi_k(u_k)``."""

    def pointwise(self, u, slack: float = 0.0) -> np.ndarray:
        """Per-coordinate values; ``+inf`` outside the domain.

        `slack` tolerates domain violations up to that absolute amount
        (used when scoring iterates that are only asymptotically feasible).
        """
        raise NotImplementedError

    def value(self, u, slack: float = 0.0) -> float:
        return float(np.sum(self.pointwise(u, slack)))

    def difference(self, c, d) -> np.ndarray:
        """``phi(c) - phi(d)`` coordinatewise."""
        return self.pointwise(c) - self.pointwise(d)

    def prox(self, v, eta: float = 1.0) -> np.ndarray:
        raise NotImplementedError

    def bracket(self, xi, eta: float = 1.0):
        """Interval guaranteed to contain ``prox(xi, eta)``."""
        raise NotImplementedError

    def param_shape(self) -> tuple:
        return ()


def _check_eta(eta):
    if not eta > 0:
        raise ParameterError(f"prox scale must be positive, got {eta}")


class AbsShifted(ScalarPotential):
    """``weight * |u - shift|``; ``shift = 0`` gives the l1 norm."""

    def __init__(self, weight, shift=0.0):
        self.weight = np.asarray(weight, dtype=np.float64)
        self.shift = np.asarray(shift, dtype=np.float64)
        if np.any(self.weight <= 0):
            raise ParameterError("AbsShifted weight must be positive")

    def pointwise(self, u, slack=0.0):
        return self.weight * np.abs(np.asarray(u) - self.shift)

    def difference(self, c, d):
        sc, sd = np.sign(c - self.shift), np.sign(d - self.shift)
        same = np.where(sc == sd, sc * (c - d), np.abs(c - self.shift) - np.abs(d - self.shift))
        return self.weight * same

    def prox(self, v, eta=1.0):
        _check_eta(eta)
        return np.asarray(prox_soft_threshold(v, self.weight / eta, self.shift))

    def bracket(self, xi, eta=1.0):
        xi = np.asarray(xi, dtype=np.float64)
        return np.minimum(xi, self.shift) - 1.0, np.maximum(xi, self.shift) + 1.0

    def param_shape(self):
        return np.broadcast_shapes(self.weight.shape, self.shift.shape)

    def __repr__(self):
        return f"AbsShifted(weight={self.weight}, shift={self.shift if self.shift.ndim == 0 else '...'})"


class PoissonNLL(ScalarPotential):
    """``-chi ln(u) + alpha u`` on ``u > 0`` (``alpha u`` on ``u >= 0`` where ``chi = 0``)."""

    def __init__(self, alpha, counts):
        self.alpha = np.asarray(alpha, dtype=np.float64)
        self.counts = np.asarray(counts, dtype=np.float64)
        if np.any(self.alpha <= 0):
            raise ParameterError("PoissonNLL alpha must be positive")
        if np.any(self.counts < 0) or not np.all(np.isfinite(self.counts)):
            raise ParameterError("PoissonNLL counts must be finite and nonnegative")

    def pointwise(self, u, slack=0.0):
        u = np.asarray(u, dtype=np.float64)
        chi = np.broadcast_to(self.counts, np.broadcast_shapes(u.shape, self.counts.shape))
        u = np.broadcast_to(u, chi.shape)
        linear = np.broadcast_to(self.alpha * np.maximum(u, 0.0), chi.shape)
        pos = (chi > 0) & (u > 0)
        zero = (chi == 0) & (u >= -slack)
        out = np.full(chi.shape, np.inf)
        out[pos] = (linear - chi * np.log(np.where(pos, u, 1.0)))[pos]
        out[zero] = linear[zero]
        return out

    def difference(self, c, d):
        both = (c > 0) & (d > 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            direct = self.alpha * (c - d) - self.counts * np.log1p((c - d) / d)
        return np.where(both, direct, self.pointwise(c) - self.pointwise(d))

    def prox(self, v, eta=1.0):
        _check_eta(eta)
        return np.asarray(prox_poisson_nll(v, self.alpha / eta, self.counts / eta))

    def bracket(self, xi, eta=1.0):
        xi = np.asarray(xi, dtype=np.float64)
        a, c = self.alpha / eta, self.counts / eta
        lo = np.maximum(xi - 10.0 * a - 10.0, 0.0)
        hi = np.maximum(xi, 0.0) + 2.0 * np.sqrt(c) + 10.0
        return lo, hi

    def param_shape(self):
        return np.broadcast_shapes(self.alpha.shape, self.counts.shape)

    def __repr__(self):
        return f"PoissonNLL(alpha={self.alpha})"


class BoxIndicator(ScalarPotential):
    """Indicator of ``[lo, hi]``."""

    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=np.float64)
        self.hi = np.asarray(hi, dtype=np.float64)
        if np.any(self.lo > self.hi):
            raise ParameterError(f"empty box [{lo}, {hi}]")

    def pointwise(self, u, slack=0.0):
        u = np.asarray(u, dtype=np.float64)
        inside = (u >= self.lo - slack) & (u <= self.hi + slack)
        return np.where(inside, 0.0, np.inf)

    def prox(self, v, eta=1.0):
        _check_eta(eta)
        return np.asarray(prox_box(v, self.lo, self.hi))

    def bracket(self, xi, eta=1.0):
        xi = np.asarray(xi, dtype=np.float64)
        # the prox is a projection, so it never leaves the box
        return np.broadcast_to(self.lo, xi.shape), np.broadcast_to(self.hi, xi.shape)

    def param_shape(self):
        return np.broadcast_shapes(self.lo.shape, self.hi.shape)

    def __repr__(self):
        return f"BoxIndicator({self.lo}, {self.hi})"


class ZeroPotential(ScalarPotential):
    def pointwise(self, u, slack=0.0):
        return np.zeros(np.shape(u))

    def prox(self, v, eta=1.0):
        _check_eta(eta)
        return np.array(v, dtype=np.float64)

    def bracket(self, xi, eta=1.0):
        xi = np.asarray(xi, dtype=np.float64)
        return xi - 1.0, xi + 1.0

    def __repr__(self):
        return "ZeroPotential()"


class SeparableFunction:
    """A potential applied coordinatewise to signals of a fixed shape.

    `shape` is optional when all parameters are scalars (the potential is
    then broadcast to any signal).
    """

    def __init__(self, potential: ScalarPotential, shape=None):
        self.potential = potential
        pshape = potential.param_shape()
        if shape is None:
            shape = pshape if pshape else None
        elif pshape and tuple(pshape) != tuple(shape):
            raise ShapeError(f"parameter shape {pshape} does not match signal shape {tuple(shape)}")
        self.shape = None if shape is None else tuple(shape)

    def _check(self, v):
        v = np.asarray(v, dtype=np.float64)
        if self.shape is not None and v.shape != self.shape:
            raise ShapeError(f"signal shape {v.shape} does not match function shape {self.shape}")
        return v

    def value(self, u, slack: float = 0.0) -> float:
        return self.potential.value(self._check(u), slack)

    def prox(self, v, eta: float = 1.0) -> np.ndarray:
        return self.potential.prox(self._check(v), eta)

    __call__ = value

    def __repr__(self):
        return f"SeparableFunction({self.potential!r}, shape={self.shape})"


def prox_separable(f: SeparableFunction, v, eta: float = 1.0) -> np.ndarray:
    """Coordinatewise prox of ``f / eta``."""
    return f.prox(v, eta)


def prox_compose_semiortho(f, L, chi: float, v, probes: int = 3, seed: int = 0) -> np.ndarray:
    """Prox of ``f o L`` for a linear ``L`` with ``L L^* = chi I``.

    ``v + chi^{-1} L^*(prox_{chi f}(L v) - L v)``. `L` needs ``apply`` and
    ``adjoint`` methods; the identity ``L L^* = chi I`` is checked on random
    probes before use.
    """
    if not chi > 0:
        raise ParameterError(f"chi must be positive, got {chi}")
    v = np.asarray(v, dtype=np.float64)
    Lv = L.apply(v)
    rng = np.random.default_rng(seed)
    for _ in range(probes):
        u = rng.standard_normal(Lv.shape)
        if np.linalg.norm(L.apply(L.adjoint(u)) - chi * u) > 1e-8 * np.linalg.norm(u):
            raise CompositionUnsupportedError("L L^* is not chi times the identity")
    return v + L.adjoint(f.prox(Lv, 1.0 / chi) - Lv) / chi


_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def prox_oracle(phi: ScalarPotential, xi, tol: float = 1e-9, eta: float = 1.0):
    """Brute-force prox of ``phi / eta`` by golden-section search.

    Minimizes ``0.5 (u - xi)**2 + phi(u) / eta`` coordinatewise over the
    bracket returned by ``phi.bracket``. Works elementwise on arrays.
    """
    _check_eta(eta)
    xi = np.asarray(xi, dtype=np.float64)
    a, b = (np.array(np.broadcast_to(e, xi.shape), dtype=np.float64) for e in phi.bracket(xi, eta))
    if np.any(a > b):
        raise ParameterError("empty search domain")

    def c_not_worse(c, d):
        # objective difference evaluated without forming the large terms
        gap = 0.5 * (c - d) * (c + d - 2.0 * xi) + phi.difference(c, d) / eta
        return gap <= 0

    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    while np.max(b - a) > tol:
        left = c_not_worse(c, d)
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        c = b - _INVPHI * (b - a)
        d = a + _INVPHI * (b - a)
    out = 0.5 * (a + b)
    return out if out.ndim else float(out)
