"""PPXA+ for synthesis-form (SF) and analysis-form (AF) frame problems.

SF::

    minimize_x  sum_r f_r(L_r F^* x) + sum_s g_s(x)

AF::

    minimize_y  sum_r f_r(L_r y) + sum_s g_s(F y)

Each iteration applies the proxes of the ``f_r`` and ``g_s`` in parallel and
then solves a strictly convex quadratic. The quadratic is solved exactly:
all ``L_r`` are periodic convolutions and ``F^*F = mu_U Pi_D^* V^* V Pi_D``,
so in the polyphase/frequency domain the normal equations split into one
``D^d x D^d`` system per frequency bin (for SF after a Woodbury rewrite).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import Convolution, polyphase_nd, unpolyphase_nd
from .errors import (
    OracleTooLargeError,
    ParameterError,
    PreconditionerError,
    ShapeError,
    SolverError,
    StalePreconditionerError,
)
from .frames import FrameOperator
from .prox import SeparableFunction

__all__ = [
    "ConvolutiveTerm",
    "FrameTerm",
    "Problem",
    "SolverParams",
    "SolverState",
    "TraceRecord",
    "Trace",
    "QuadraticPreconditioner",
    "precompute_inverse",
    "solve_quadratic",
    "ppxa_sf",
    "ppxa_af",
    "ppxa",
    "dense_matrix",
    "dense_oracle_solve",
    "dense_objective",
]

SF, AF = "SF", "AF"


def _mode(mode: str) -> str:
    mode = str(mode).upper()
    if mode not in (SF, AF):
        raise ParameterError(f"mode must be 'SF' or 'AF', got {mode!r}")
    return mode


@dataclass(frozen=True)
class ConvolutiveTerm:
    """``eta * f(L y)`` with ``L`` a periodic convolution."""

    op: Convolution
    f: SeparableFunction
    eta: float = 1.0

    def __post_init__(self):
        if not self.eta > 0:
            raise ParameterError(f"term weight eta must be positive, got {self.eta}")


@dataclass(frozen=True)
class FrameTerm:
    """``g`` acting on frame coefficients, with splitting weight ``kappa``."""

    g: SeparableFunction
    kappa: float = 1.0

    def __post_init__(self):
        if not self.kappa > 0:
            raise ParameterError(f"frame term weight kappa must be positive, got {self.kappa}")


@dataclass(frozen=True)
class Problem:
    frame: FrameOperator
    terms: tuple
    frame_terms: tuple

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        object.__setattr__(self, "frame_terms", tuple(self.frame_terms))
        if not self.frame_terms:
            raise ParameterError("at least one frame term is required")
        for t in self.terms:
            if t.op.ndim != self.frame.ndim:
                raise ShapeError(
                    f"{t.op.ndim}-D convolution used with a {self.frame.ndim}-D frame"
                )

    @property
    def shape(self):
        return self.frame.shape

    @property
    def kappa(self) -> float:
        return float(sum(t.kappa for t in self.frame_terms))

    @property
    def weights(self):
        return tuple(t.eta for t in self.terms), tuple(t.kappa for t in self.frame_terms)

    def objective(self, point, mode: str, slack: float = 0.0) -> float:
        """``sum_r f_r(L_r y) + sum_s g_s(.)`` at an SF coefficient vector or AF signal."""
        mode = _mode(mode)
        if mode == SF:
            x = np.asarray(point, dtype=np.float64)
            y = self.frame.synthesize(x)
        else:
            y = np.asarray(point, dtype=np.float64)
            x = self.frame.analyze(y)
        total = 0.0
        for t in self.terms:
            total += t.f.value(t.op.apply(y), slack)
        for t in self.frame_terms:
            total += t.g.value(x, slack)
        return float(total)


@dataclass(frozen=True)
class SolverParams:
    """PPXA+ settings.

    `relaxation` is a constant or a nonincreasing sequence in ``]0, 2[``;
    past its end the last value is held, which is then the lower bound of
    the schedule. The loop stops after `max_iter` iterations or once
    ``||x_{l+1} - x_l|| / max(||x_l||, 1) < tol``. The objective is logged
    every `log_every` iterations (0 disables it), with domain constraints
    relaxed by `slack` when scoring iterates.
    """

    relaxation: float | Sequence[float] = 1.0
    max_iter: int = 1000
    tol: float = 1e-6
    log_every: int = 1
    slack: float = 1e-6
    record_time: bool = True

    def __post_init__(self):
        lam = np.atleast_1d(np.asarray(self.relaxation, dtype=np.float64))
        if lam.size == 0:
            raise ParameterError("relaxation schedule is empty")
        if np.any(lam <= 0) or np.any(lam >= 2):
            raise ParameterError("relaxation values must lie in ]0, 2[")
        if np.any(np.diff(lam) > 0):
            raise ParameterError("relaxation schedule must be nonincreasing")
        if self.max_iter < 0 or self.tol < 0 or self.log_every < 0:
            raise ParameterError("max_iter, tol and log_every must be nonnegative")
        object.__setattr__(self, "_lam", tuple(float(v) for v in lam))

    def lam(self, it: int) -> float:
        return self._lam[min(it, len(self._lam) - 1)]


@dataclass
class SolverState:
    point: np.ndarray
    v: list
    w: list
    iteration: int = 0


@dataclass(frozen=True)
class TraceRecord:
    iter: int
    objective: float | None
    rel_change: float
    seconds: float | None

    def to_json(self) -> str:
        obj = self.objective
        if obj is not None and not np.isfinite(obj):
            obj = None if np.isnan(obj) else ("inf" if obj > 0 else "-inf")
        return json.dumps(
            {"iter": self.iter, "objective": obj, "rel_change": self.rel_change, "seconds": self.seconds}
        )


@dataclass
class Trace:
    records: list = field(default_factory=list)
    converged: bool = False
    initial_objective: float | None = None
    state: SolverState | None = None

    @property
    def iterations(self) -> int:
        return len(self.records)

    @property
    def final_objective(self):
        for rec in reversed(self.records):
            if rec.objective is not None:
                return rec.objective
        return self.initial_objective

    @property
    def final_rel_change(self) -> float:
        return self.records[-1].rel_change if self.records else float("nan")

    def to_jsonl(self) -> str:
        return "".join(rec.to_json() + "\n" for rec in self.records)

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_jsonl())


# -- quadratic subproblem ------------------------------------------------------


def _grid_axes(ndim: int) -> tuple[int, ...]:
    return tuple(range(1, ndim + 1))


def _apply_per_bin(mats: np.ndarray, s: np.ndarray, D: int) -> np.ndarray:
    """``Pi_D^* M(nu) Pi_D s`` for per-bin matrices ``mats`` of shape ``(*grid, P, P)``."""
    axes = _grid_axes(s.ndim)
    S = np.moveaxis(np.fft.fftn(polyphase_nd(s, D), axes=axes), 0, -1)
    T = np.moveaxis((mats @ S[..., None])[..., 0], -1, 0)
    return unpolyphase_nd(np.fft.ifftn(T, axes=axes).real, D)


def _convolution_gram(frame: FrameOperator, terms) -> np.ndarray:
    P = frame.D**frame.ndim
    G = np.zeros(frame.grid + (P, P), dtype=complex)
    for t in terms:
        H = t.op.polyphase_response(frame.shape, frame.D)
        G += t.eta * (np.conj(np.swapaxes(H, -1, -2)) @ H)
    return G


@dataclass(frozen=True, eq=False)
class QuadraticPreconditioner:
    """Per-bin inverses of the quadratic normal operator.

    SF stores ``(kappa I + mu_U v^H v G)^{-1}``, AF stores
    ``(G + kappa mu_U v^H v)^{-1}``, where ``G = sum_r eta_r w_r^H w_r``.
    """

    mode: str
    frame: FrameOperator
    forward: np.ndarray
    inverse: np.ndarray
    gram: np.ndarray
    kappa: float
    etas: tuple

    def identity_defect(self) -> float:
        P = self.forward.shape[-1]
        return float(np.max(np.abs(self.forward @ self.inverse - np.eye(P))))

    def apply(self, b) -> np.ndarray:
        """Solve the normal equations for right-hand side `b`."""
        F, D = self.frame, self.frame.D
        if self.mode == AF:
            return _apply_per_bin(self.inverse, np.asarray(b, dtype=np.float64), D)
        # Woodbury: (kappa I + F L F^*)^{-1} = (I - F L (kappa I + F^*F L)^{-1} F^*) / kappa
        b = np.asarray(b, dtype=np.float64)
        t = _apply_per_bin(self.gram @ self.inverse, F.synthesize(b), D)
        return (b - F.analyze(t)) / self.kappa


def precompute_inverse(mode: str, frame: FrameOperator, terms: Sequence[ConvolutiveTerm], kappa: float, cond_limit: float = 1e12) -> QuadraticPreconditioner:
    mode = _mode(mode)
    if not kappa > 0:
        raise ParameterError(f"kappa must be positive, got {kappa}")
    G = _convolution_gram(frame, terms)
    Gamma = frame.gram_response()
    P = G.shape[-1]
    if mode == SF:
        forward = kappa * np.eye(P) + Gamma @ G
    else:
        forward = G + kappa * Gamma
    # condition of the whole block-diagonal operator, blamed on its weakest bin
    sv = np.linalg.svd(forward, compute_uv=False)
    smin = sv[..., -1]
    worst = np.unravel_index(int(np.argmin(smin)), smin.shape)
    cond = sv.max() / smin[worst] if smin[worst] > 0 else np.inf
    if not cond <= cond_limit:
        b = worst if len(worst) > 1 else worst[0]
        raise PreconditionerError(
            f"{mode} normal matrix is singular at bin {b} (condition {cond:.3e})", bin=b
        )
    inverse = np.linalg.inv(forward)
    return QuadraticPreconditioner(
        mode, frame, forward, inverse, G, float(kappa), tuple(float(t.eta) for t in terms)
    )


def _check_targets(targets, n, shape, what):
    if len(targets) != n:
        raise ShapeError(f"expected {n} {what} targets, got {len(targets)}")
    out = []
    for t in targets:
        t = np.asarray(t, dtype=np.float64)
        if t.shape != tuple(shape):
            raise ShapeError(f"{what} target has shape {t.shape}, expected {tuple(shape)}")
        out.append(t)
    return out


def solve_quadratic(mode: str, problem: Problem, p_targets, r_targets, pre: QuadraticPreconditioner) -> np.ndarray:
    """Minimizer of the PPXA+ quadratic for the given prox outputs.

    SF: ``argmin_u sum_r eta_r ||L_r F^* u - p_r||^2 + sum_s kappa_s ||u - r_s||^2``.
    AF: ``argmin_u sum_r eta_r ||L_r u - p_r||^2 + sum_s kappa_s ||F u - r_s||^2``.
    """
    mode = _mode(mode)
    if pre.mode != mode:
        raise StalePreconditionerError(f"preconditioner built for {pre.mode}, used for {mode}")
    etas = tuple(float(t.eta) for t in problem.terms)
    if pre.frame is not problem.frame or pre.etas != etas or pre.kappa != problem.kappa:
        raise StalePreconditionerError("problem weights or frame changed since the preconditioner was built")
    F = problem.frame
    p_targets = _check_targets(p_targets, len(problem.terms), F.shape, "convolutive")
    coef_shape = F.coefficient_shape
    r_targets = _check_targets(r_targets, len(problem.frame_terms), coef_shape, "frame")
    back = np.zeros(F.shape)
    for t, p in zip(problem.terms, p_targets):
        back += t.eta * t.op.adjoint(p)
    coef = np.zeros(coef_shape)
    for t, r in zip(problem.frame_terms, r_targets):
        coef += t.kappa * r
    if mode == SF:
        rhs = F.analyze(back) + coef
    else:
        rhs = back + F.synthesize(coef)
    return pre.apply(rhs)


# -- PPXA+ -------------------------------------------------------------------


def ppxa(mode: str, problem: Problem, params: SolverParams = SolverParams(), y_init=None, v0=None, w0=None, pre=None):
    """Run PPXA+ (exact proxes, no error terms).

    Parameters
    ----------
    mode : {'SF', 'AF'}
    problem : Problem
    params : SolverParams
    y_init : array_like, optional
        Starting signal (zero by default). Unless `v0` / `w0` are given the
        auxiliary variables start at ``v_r = L_r y_init`` and ``w_s = F y_init``
        (AF), or ``v_r = L_r F^* x_init`` and ``w_s = x_init`` with
        ``x_init = F y_init / mu_upper`` (SF).
    pre : QuadraticPreconditioner, optional
        Reused when given; built otherwise.

    Returns
    -------
    y : ndarray
        Restored signal (``F^* x`` for SF).
    trace : Trace
    """
    mode = _mode(mode)
    F = problem.frame
    pre = precompute_inverse(mode, F, problem.terms, problem.kappa) if pre is None else pre
    y_init = np.zeros(F.shape) if y_init is None else np.asarray(y_init, dtype=np.float64)
    if y_init.shape != F.shape:
        raise ShapeError(f"initial signal has shape {y_init.shape}, expected {F.shape}")

    if mode == SF:
        start = F.analyze(y_init) / F.bounds().upper

        def images(u):
            sig = F.synthesize(u)
            return [t.op.apply(sig) for t in problem.terms], [u] * len(problem.frame_terms)
    else:
        start = y_init

        def images(u):
            coef = F.analyze(u)
            return [t.op.apply(u) for t in problem.terms], [coef] * len(problem.frame_terms)

    v_start, w_start = images(start)
    v = [np.array(a, dtype=np.float64) for a in (v_start if v0 is None else v0)]
    w = [np.array(a, dtype=np.float64) for a in (w_start if w0 is None else w0)]
    x = solve_quadratic(mode, problem, v, w, pre)

    trace = Trace()
    if params.log_every:
        trace.initial_objective = problem.objective(x, mode, params.slack)
    t0 = time.perf_counter()
    for it in range(params.max_iter):
        p = [t.f.prox(vr, t.eta) for t, vr in zip(problem.terms, v)]
        r = [t.g.prox(ws, t.kappa) for t, ws in zip(problem.frame_terms, w)]
        lam = params.lam(it)
        c = solve_quadratic(mode, problem, p, r, pre)
        Lz, Bz = images(2.0 * c - x)
        for k in range(len(v)):
            v[k] = v[k] + lam * (Lz[k] - p[k])
        for k in range(len(w)):
            w[k] = w[k] + lam * (Bz[k] - r[k])
        x_new = x + lam * (c - x)
        if not np.all(np.isfinite(x_new)):
            raise SolverError(f"non-finite iterate at iteration {it + 1}", iteration=it + 1)
        rel = float(np.linalg.norm(x_new - x) / max(np.linalg.norm(x), 1.0))
        x = x_new
        done = rel < params.tol or it + 1 == params.max_iter
        obj = None
        if params.log_every and ((it + 1) % params.log_every == 0 or done):
            obj = problem.objective(x, mode, params.slack)
        seconds = time.perf_counter() - t0 if params.record_time else None
        trace.records.append(TraceRecord(it + 1, obj, rel, seconds))
        if rel < params.tol:
            trace.converged = True
            break
    trace.state = SolverState(x, v, w, trace.iterations)
    y = F.synthesize(x) if mode == SF else x
    return y, trace


def ppxa_sf(problem: Problem, params: SolverParams = SolverParams(), y_init=None, v0=None, w0=None, pre=None):
    """Synthesis-form PPXA+; returns ``(F^* x, trace)``."""
    return ppxa(SF, problem, params, y_init, v0, w0, pre)


def ppxa_af(problem: Problem, params: SolverParams = SolverParams(), y_init=None, v0=None, w0=None, pre=None):
    """Analysis-form PPXA+; returns ``(y, trace)``."""
    return ppxa(AF, problem, params, y_init, v0, w0, pre)


# -- dense oracle (tests only) -------------------------------------------------


def _size_guard(shape):
    n = int(np.prod(shape))
    limit = 64 if len(shape) == 1 else 256
    if n > limit:
        raise OracleTooLargeError(f"dense oracle limited to {limit} samples, got shape {tuple(shape)}")


def dense_matrix(op, in_shape) -> np.ndarray:
    """Matrix of a linear map by probing it with every unit vector."""
    n = int(np.prod(in_shape))
    cols = []
    for k in range(n):
        e = np.zeros(n)
        e[k] = 1.0
        cols.append(np.asarray(op(e.reshape(in_shape))).ravel())
    return np.array(cols).T


def dense_oracle_solve(mode: str, problem: Problem, p_targets, r_targets) -> np.ndarray:
    """Direct dense solve of the PPXA+ quadratic (small problems only)."""
    mode = _mode(mode)
    F = problem.frame
    _size_guard(F.shape)
    Fm = dense_matrix(F.analyze, F.shape)
    Ls = [dense_matrix(t.op.apply, F.shape) for t in problem.terms]
    n, m = Fm.shape[1], Fm.shape[0]
    kappa = problem.kappa
    r_sum = sum(t.kappa * np.ravel(r) for t, r in zip(problem.frame_terms, r_targets))
    if mode == SF:
        A = kappa * np.eye(m)
        b = np.array(r_sum, dtype=float)
        for t, L, p in zip(problem.terms, Ls, p_targets):
            A += t.eta * Fm @ L.T @ L @ Fm.T
            b += t.eta * Fm @ L.T @ np.ravel(p)
        return np.linalg.solve(A, b).reshape(F.coefficient_shape)
    A = kappa * Fm.T @ Fm
    b = Fm.T @ r_sum
    for t, L, p in zip(problem.terms, Ls, p_targets):
        A += t.eta * L.T @ L
        b += t.eta * L.T @ np.ravel(p)
    return np.linalg.solve(A, b).reshape(F.shape)


def dense_objective(problem: Problem, mode: str, point, slack: float = 0.0) -> float:
    """Objective evaluated through explicitly assembled matrices."""
    mode = _mode(mode)
    F = problem.frame
    _size_guard(F.shape)
    Fm = dense_matrix(F.analyze, F.shape)
    point = np.ravel(point)
    if mode == SF:
        y, x = Fm.T @ point, point
    else:
        y, x = point, Fm @ point
    total = 0.0
    for t in problem.terms:
        L = dense_matrix(t.op.apply, F.shape)
        total += t.f.value((L @ y).reshape(F.shape), slack)
    for t in problem.frame_terms:
        total += t.g.value(x.reshape(F.coefficient_shape), slack)
    return float(total)
