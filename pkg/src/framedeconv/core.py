"""Periodic discrete-signal algebra.

Signals are finite-length real arrays treated as periodic. A stack of
``C`` equal-length channels (a multi-signal) is an array whose
second-to-last axis indexes the channels, e.g. shape ``(C, m)`` or
``(..., C, m)`` with arbitrary leading batch axes.

Convolution convention: ``(h * y)(m) = sum_k h(k) y(m - k mod n)`` and the
frequency response of ``h`` is ``sum_k h(k) exp(-2j pi nu k)``, which is
what :func:`numpy.fft.fft` computes on the grid ``nu = k / n``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import ParameterError, ShapeError

__all__ = [
    "SisoFilter",
    "MimoFilter",
    "FrequencyGrid",
    "Convolution",
    "InvertibilityReport",
    "polyphase_decompose",
    "polyphase_recompose",
    "polyphase_nd",
    "unpolyphase_nd",
    "mimo_apply",
    "mimo_frequency_matrix",
    "weighted_gram",
    "left_invertibility_check",
    "read_filter_file",
    "write_filter_file",
]


# -- polyphase decomposition --------------------------------------------------


def polyphase_decompose(y, D: int) -> np.ndarray:
    """Split the last axis of `y` into `D` polyphase channels.

    Channel ``j`` holds ``m -> y(D m + j)`` for ``j = 0, ..., D-1``.

    Parameters
    ----------
    y : array_like, shape (..., n)
    D : int
        Decimation factor; must divide ``n``.

    Returns
    -------
    ndarray, shape (..., D, n // D)
    """
    y = np.asarray(y)
    if D < 1:
        raise ParameterError(f"decimation factor must be positive, got D={D}")
    n = y.shape[-1]
    if n % D:
        raise ShapeError(f"D={D} does not divide the signal length n={n}")
    return np.swapaxes(y.reshape(*y.shape[:-1], n // D, D), -1, -2)


def polyphase_recompose(u) -> np.ndarray:
    """Inverse (and adjoint) of :func:`polyphase_decompose`.

    `u` is either an array of shape ``(..., D, m)`` or a sequence of ``D``
    one-dimensional channels of equal length.
    """
    if isinstance(u, (list, tuple)):
        lengths = {np.shape(c) for c in u}
        if len(lengths) != 1:
            raise ShapeError(f"ragged polyphase channels with shapes {sorted(lengths)}")
        u = np.stack([np.asarray(c) for c in u])
    u = np.asarray(u)
    if u.ndim < 2:
        raise ShapeError("polyphase input needs a channel axis and a sample axis")
    D, m = u.shape[-2:]
    return np.swapaxes(u, -1, -2).reshape(*u.shape[:-2], m * D)


def polyphase_nd(y, D: int) -> np.ndarray:
    """Separable polyphase decomposition of a d-dimensional signal.

    Returns an array of shape ``(D**d, n_1 // D, ..., n_d // D)``; the
    component index is the row-major flattening of ``(j_1, ..., j_d)``
    where ``j_a`` is the phase along axis ``a``.
    """
    y = np.asarray(y)
    d = y.ndim
    for n in y.shape:
        if n % D:
            raise ShapeError(f"D={D} does not divide the signal length n={n}")
    grid = tuple(n // D for n in y.shape)
    split = []
    for m in grid:
        split += [m, D]
    t = y.reshape(split)
    order = [2 * a + 1 for a in range(d)] + [2 * a for a in range(d)]
    return t.transpose(order).reshape((D**d,) + grid)


def unpolyphase_nd(u, D: int) -> np.ndarray:
    """Inverse of :func:`polyphase_nd`."""
    u = np.asarray(u)
    grid = u.shape[1:]
    d = len(grid)
    if u.shape[0] != D**d:
        raise ShapeError(f"expected {D**d} polyphase components, got {u.shape[0]}")
    t = u.reshape((D,) * d + grid)
    order = []
    for a in range(d):
        order += [d + a, a]
    return t.transpose(order).reshape(tuple(m * D for m in grid))


# -- filters ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SisoFilter:
    """Finitely supported real impulse response.

    ``taps[k]`` sits at integer position ``offset + k``.
    """

    taps: np.ndarray
    offset: int = 0

    def __post_init__(self):
        taps = np.array(self.taps, dtype=np.float64).ravel()
        if taps.size < 1:
            raise ParameterError("a SISO filter needs at least one tap")
        if not np.all(np.isfinite(taps)):
            raise ParameterError("filter taps must be finite")
        taps.setflags(write=False)
        object.__setattr__(self, "taps", taps)
        object.__setattr__(self, "offset", int(self.offset))

    @classmethod
    def zero(cls) -> "SisoFilter":
        return cls([0.0])

    @property
    def support(self) -> np.ndarray:
        return self.offset + np.arange(self.taps.size)

    def frequency_response(self, nu) -> np.ndarray:
        nu = np.asarray(nu, dtype=np.float64)
        phase = np.exp(-2j * np.pi * np.multiply.outer(nu, self.support))
        return phase @ self.taps

    def grid_response(self, m: int) -> np.ndarray:
        """Frequency response sampled at ``k / m``, ``k = 0..m-1``.

        Taps are aliased modulo `m`, which is the exact response of the
        filter acting on length-`m` periodic signals.
        """
        h = np.zeros(m)
        np.add.at(h, self.support % m, self.taps)
        return np.fft.fft(h)

    def reversed(self) -> "SisoFilter":
        """Time-reversed filter (the adjoint for real taps)."""
        return SisoFilter(self.taps[::-1], -(self.offset + self.taps.size - 1))

    def __eq__(self, other):
        if not isinstance(other, SisoFilter):
            return NotImplemented
        return self.offset == other.offset and np.array_equal(self.taps, other.taps)

    def __repr__(self):
        return f"SisoFilter(taps={self.taps.tolist()}, offset={self.offset})"


@dataclass(frozen=True, eq=False)
class MimoFilter:
    """P x Q grid of SISO filters mapping Q channels to P channels."""

    entries: tuple
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        rows = tuple(
            tuple(e if isinstance(e, SisoFilter) else SisoFilter(e) for e in row)
            for row in self.entries
        )
        if len(rows) < 1 or len(rows[0]) < 1:
            raise ShapeError("a MIMO filter needs at least one row and one column")
        if any(len(r) != len(rows[0]) for r in rows):
            raise ShapeError("MIMO filter rows have different lengths")
        object.__setattr__(self, "entries", rows)

    @classmethod
    def from_taps(cls, taps, offsets=None) -> "MimoFilter":
        """Build from a nested list of tap lists, with optional matching offsets."""
        if offsets is None:
            return cls(tuple(tuple(SisoFilter(t) for t in row) for row in taps))
        return cls(
            tuple(
                tuple(SisoFilter(t, o) for t, o in zip(row, orow))
                for row, orow in zip(taps, offsets)
            )
        )

    @classmethod
    def identity(cls, D: int) -> "MimoFilter":
        return cls(
            tuple(
                tuple(SisoFilter([1.0 if i == j else 0.0]) for j in range(D))
                for i in range(D)
            )
        )

    @classmethod
    def vstack(cls, filters: Iterable["MimoFilter"]) -> "MimoFilter":
        rows = []
        for f in filters:
            rows.extend(f.entries)
        return cls(tuple(rows))

    @property
    def rows(self) -> int:
        return len(self.entries)

    @property
    def cols(self) -> int:
        return len(self.entries[0])

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows, self.cols

    def frequency_matrix(self, nu) -> np.ndarray:
        """Response matrices, shape ``np.shape(nu) + (P, Q)``."""
        out = [[e.frequency_response(nu) for e in row] for row in self.entries]
        return np.moveaxis(np.array(out, dtype=complex), (0, 1), (-2, -1))

    def grid_response(self, m: int) -> np.ndarray:
        """Response matrices on the length-`m` DFT grid, shape ``(m, P, Q)``."""
        key = ("grid", m)
        if key not in self._cache:
            out = np.empty((m, self.rows, self.cols), dtype=complex)
            for i, row in enumerate(self.entries):
                for j, e in enumerate(row):
                    out[:, i, j] = e.grid_response(m)
            out.setflags(write=False)
            self._cache[key] = out
        return self._cache[key]

    def gram_on_grid(self, m: int) -> np.ndarray:
        """``v(nu)^H v(nu)`` on the length-`m` grid, shape ``(m, Q, Q)``."""
        key = ("gram", m)
        if key not in self._cache:
            H = self.grid_response(m)
            G = np.conj(np.swapaxes(H, -1, -2)) @ H
            G.setflags(write=False)
            self._cache[key] = G
        return self._cache[key]

    def __eq__(self, other):
        if not isinstance(other, MimoFilter):
            return NotImplemented
        return self.entries == other.entries


def mimo_apply(V: MimoFilter, x, adjoint: bool = False) -> np.ndarray:
    """Circular MIMO filtering of a multi-signal.

    Parameters
    ----------
    V : MimoFilter
        P x Q filter.
    x : array_like, shape (..., Q, m) (or (..., P, m) when `adjoint`)
    adjoint : bool
        Apply the Q x P filter whose responses are the conjugate transpose.

    Returns
    -------
    ndarray, shape (..., P, m) (or (..., Q, m) when `adjoint`)
    """
    x = np.asarray(x, dtype=np.float64)
    expected = V.rows if adjoint else V.cols
    if x.ndim < 2 or x.shape[-2] != expected:
        raise ShapeError(
            f"expected {expected} input channels, got shape {x.shape}"
        )
    m = x.shape[-1]
    H = V.grid_response(m)
    X = np.fft.fft(x, axis=-1)
    if adjoint:
        Y = np.einsum("kpq,...pk->...qk", np.conj(H), X)
    else:
        Y = np.einsum("kpq,...qk->...pk", H, X)
    return np.fft.ifft(Y, axis=-1).real


def mimo_frequency_matrix(V: MimoFilter, nu) -> np.ndarray:
    """Complex P x Q response matrix of `V` at normalized frequency `nu`."""
    return V.frequency_matrix(nu)


@dataclass(frozen=True)
class FrequencyGrid:
    """Uniform DFT grid ``nu_k = k / m``."""

    m: int

    def __post_init__(self):
        if self.m < 1:
            raise ParameterError(f"grid size must be positive, got {self.m}")

    @property
    def bins(self) -> np.ndarray:
        return np.arange(self.m) / self.m


def weighted_gram(filters: Sequence[tuple[float, MimoFilter]], grid: FrequencyGrid) -> np.ndarray:
    """Per-bin ``sum_r eta_r w_r(nu)^H w_r(nu)``, shape ``(m, Q, Q)``."""
    if not filters:
        raise ParameterError("at least one weighted filter is required")
    Q = filters[0][1].cols
    out = np.zeros((grid.m, Q, Q), dtype=complex)
    for eta, W in filters:
        if not eta > 0:
            raise ParameterError(f"weights must be positive, got {eta}")
        if W.cols != Q:
            raise ShapeError(f"filters disagree on column count: {W.cols} != {Q}")
        out += eta * W.gram_on_grid(grid.m)
    return out


class InvertibilityReport(NamedTuple):
    ok: bool
    min_singular_value: float
    argmin_bin: int


def left_invertibility_check(V: MimoFilter, grid: FrequencyGrid, tol: float = 1e-10) -> InvertibilityReport:
    """Check that ``v(nu)`` has full column rank at every grid bin."""
    if V.rows < V.cols:
        raise ShapeError(
            f"a {V.rows}x{V.cols} filter cannot have rank {V.cols}"
        )
    s = np.linalg.svd(V.grid_response(grid.m), compute_uv=False)[:, -1]
    k = int(np.argmin(s))
    return InvertibilityReport(bool(s[k] > tol), float(s[k]), k)


# -- full-rate periodic convolution -------------------------------------------


class Convolution:
    """Circular convolution by a finitely supported d-dimensional kernel.

    Parameters
    ----------
    kernel : array_like
        Kernel samples; its dimensionality fixes the signal dimensionality.
    origin : tuple of int, optional
        Index of the kernel sample sitting at offset zero. Defaults to the
        center ``size // 2`` along every axis.
    """

    def __init__(self, kernel, origin=None):
        kernel = np.array(kernel, dtype=np.float64)
        if kernel.ndim == 0:
            kernel = kernel.reshape(1)
        if not np.all(np.isfinite(kernel)):
            raise ParameterError("kernel values must be finite")
        if origin is None:
            origin = tuple(s // 2 for s in kernel.shape)
        origin = tuple(int(o) for o in np.atleast_1d(origin))
        if len(origin) != kernel.ndim:
            raise ShapeError("origin must have one entry per kernel axis")
        kernel.setflags(write=False)
        self.kernel = kernel
        self.origin = origin
        self._transfer = {}
        self._poly = {}

    @classmethod
    def identity(cls, ndim: int = 1) -> "Convolution":
        return cls(np.ones((1,) * ndim))

    @property
    def ndim(self) -> int:
        return self.kernel.ndim

    def offsets(self) -> tuple[np.ndarray, ...]:
        idx = np.indices(self.kernel.shape).reshape(self.ndim, -1)
        return tuple(idx[a] - self.origin[a] for a in range(self.ndim))

    def transfer(self, shape) -> np.ndarray:
        """DFT-grid frequency response for signals of the given shape."""
        shape = tuple(shape)
        if shape not in self._transfer:
            if len(shape) != self.ndim:
                raise ShapeError(f"kernel is {self.ndim}-D but signal shape is {shape}")
            h = np.zeros(shape)
            pos = tuple(o % n for o, n in zip(self.offsets(), shape))
            np.add.at(h, pos, self.kernel.ravel())
            H = np.fft.fftn(h)
            H.setflags(write=False)
            self._transfer[shape] = H
        return self._transfer[shape]

    def _single_tap(self, y, sign):
        # exact path for scaled shifts (e.g. the identity), no FFT roundoff
        shift = tuple(sign * -o for o in self.origin)
        return self.kernel.ravel()[0] * np.roll(y, shift, axis=tuple(range(-self.ndim, 0)))

    def apply(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        if self.kernel.size == 1:
            return self._single_tap(y, 1)
        return np.fft.ifftn(np.fft.fftn(y) * self.transfer(y.shape)).real

    def adjoint(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        if self.kernel.size == 1:
            return self._single_tap(y, -1)
        return np.fft.ifftn(np.fft.fftn(y) * np.conj(self.transfer(y.shape))).real

    def polyphase_response(self, shape, D: int) -> np.ndarray:
        """Per-bin polyphase matrices, shape ``(*grid, D**d, D**d)``.

        Column ``j`` is the DFT of the polyphase components of the impulse
        response to a unit sample at phase ``j``; this is exact for any
        operator commuting with shifts by multiples of `D`.
        """
        shape = tuple(shape)
        key = (shape, D)
        if key not in self._poly:
            P = D**self.ndim
            grid = tuple(n // D for n in shape)
            out = np.empty(grid + (P, P), dtype=complex)
            for j in range(P):
                impulse = np.zeros((P,) + grid)
                impulse[(j,) + (0,) * len(grid)] = 1.0
                resp = polyphase_nd(self.apply(unpolyphase_nd(impulse, D)), D)
                spec = np.fft.fftn(resp, axes=tuple(range(1, len(grid) + 1)))
                out[..., :, j] = np.moveaxis(spec, 0, -1)
            out.setflags(write=False)
            self._poly[key] = out
        return self._poly[key]

    def polyphase_filter(self, D: int) -> MimoFilter:
        """D x D polyphase matrix of a 1-D kernel as a :class:`MimoFilter`.

        Entry ``(i, j)`` has tap ``t(o)`` at position ``q`` whenever
        ``o = D q + i - j``.
        """
        if self.ndim != 1:
            raise ShapeError("polyphase_filter is defined for 1-D kernels")
        (offs,) = self.offsets()
        rows = []
        for i in range(D):
            row = []
            for j in range(D):
                shifted = offs - i + j
                keep = shifted % D == 0
                if not keep.any():
                    row.append(SisoFilter.zero())
                    continue
                q = shifted[keep] // D
                taps = np.zeros(q.max() - q.min() + 1)
                np.add.at(taps, q - q.min(), self.kernel[keep])
                row.append(SisoFilter(taps, int(q.min())))
            rows.append(tuple(row))
        return MimoFilter(tuple(rows))


# -- filter coefficient files -----------------------------------------------


def read_filter_file(path) -> MimoFilter:
    """Parse the text filter format.

    The first non-comment line is ``P Q``; it is followed by ``P * Q`` lines
    in row-major order, each ``offset count t_1 ... t_count``. Lines starting
    with ``#`` are ignored.
    """
    lines = [
        ln.split()
        for ln in Path(path).read_text().splitlines()
        if ln.strip() and not ln.lstrip().startswith("#")
    ]
    if not lines or len(lines[0]) != 2:
        raise ShapeError(f"{path}: missing 'P Q' header")
    P, Q = (int(v) for v in lines[0])
    body = lines[1:]
    if len(body) != P * Q:
        raise ShapeError(f"{path}: expected {P * Q} filter lines, found {len(body)}")
    entries = []
    for i in range(P):
        row = []
        for j in range(Q):
            fields = body[i * Q + j]
            offset, count = int(fields[0]), int(fields[1])
            taps = [float(v) for v in fields[2:]]
            if len(taps) != count:
                raise ShapeError(
                    f"{path}: entry ({i},{j}) declares {count} taps but lists {len(taps)}"
                )
            row.append(SisoFilter(taps, offset))
        entries.append(tuple(row))
    return MimoFilter(tuple(entries))


def write_filter_file(path, V: MimoFilter) -> None:
    lines = [f"{V.rows} {V.cols}"]
    for row in V.entries:
        for e in row:
            taps = " ".join(repr(float(t)) for t in e.taps)
            lines.append(f"{e.offset} {e.taps.size} {taps}")
    Path(path).write_text("\n".join(lines) + "\n")
