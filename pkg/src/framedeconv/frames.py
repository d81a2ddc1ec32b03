"""Frame operators of the form ``F = Pi_Q^* U V Pi_D``.

``Pi_D`` is the polyphase decomposition of order ``D``, ``V`` an ``N x D``
MIMO filter, ``U`` a semi-orthogonal transform (``U^* U = mu_U I``) from
``N`` to ``Q`` channels, and ``Pi_Q^*`` interleaves the ``Q`` output
channels into one coefficient signal.

Images are handled separably: the 1-D operator is applied along every axis,
so a 2-D frame is the tensor product of the 1-D one with itself.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import (
    FrequencyGrid,
    MimoFilter,
    SisoFilter,
    left_invertibility_check,
    mimo_apply,
    polyphase_decompose,
    polyphase_recompose,
    read_filter_file,
)
from .errors import ConstructionError, NotAFrameError, ParameterError, ShapeError

__all__ = [
    "WaveletFilter",
    "SemiOrthogonalTransform",
    "IdentityTransform",
    "OrthonormalDWT",
    "DualTreeCombiner",
    "FrameOperator",
    "FrameBounds",
    "dwt_apply",
    "frame_analyze",
    "frame_synthesize",
    "frame_gram_apply",
    "compute_frame_bounds",
    "build_filter_bank",
    "build_dtt",
    "build_dwt",
    "default_prefilters",
    "load_wavelet",
    "load_frame",
    "data_path",
]


def data_path(name: str) -> Path:
    """Path of a coefficient file shipped with the package."""
    return Path(str(resources.files("framedeconv") / "data" / name))


# -- wavelets ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class WaveletFilter:
    """Two-band orthonormal analysis pair (lowpass, highpass).

    Analysis at one level is ``a[m] = sum_k h(k) y(2m + k)`` and likewise
    for the detail band with ``g``.
    """

    lowpass: SisoFilter
    highpass: SisoFilter
    name: str = ""

    @classmethod
    def from_lowpass(cls, taps, offset: int = 0, name: str = "") -> "WaveletFilter":
        """Complete a lowpass filter with its quadrature mirror highpass.

        ``g(o + k) = (-1)^k h(o + L - 1 - k)`` on the same support.
        """
        h = SisoFilter(taps, offset)
        L = h.taps.size
        g = SisoFilter(((-1.0) ** np.arange(L)) * h.taps[::-1], offset)
        return cls(h, g, name)

    def orthonormality_defect(self) -> float:
        """Largest violation of the double-shift orthonormality relations."""
        lo = min(self.lowpass.offset, self.highpass.offset)
        hi = max(self.lowpass.support[-1], self.highpass.support[-1])

        def dense(f):
            out = np.zeros(hi - lo + 1)
            out[f.support - lo] = f.taps
            return out

        h, g = dense(self.lowpass), dense(self.highpass)
        size = h.size
        centre = size - 1
        # even lags only: correlate(b, a)[centre + l] = sum_k a(k) b(k + l)
        lags = np.arange(centre % 2, 2 * size - 1, 2)
        delta = (lags == centre).astype(float)
        return float(
            max(
                np.max(np.abs(np.correlate(h, h, "full")[lags] - delta)),
                np.max(np.abs(np.correlate(g, g, "full")[lags] - delta)),
                np.max(np.abs(np.correlate(g, h, "full")[lags])),
            )
        )

    def check(self, tol: float = 1e-10) -> None:
        defect = self.orthonormality_defect()
        if defect > tol:
            raise ConstructionError(
                f"wavelet pair {self.name!r} is not orthonormal (defect {defect:.3e})"
            )


def load_wavelet(path, tol: float = 1e-10) -> WaveletFilter:
    """Read a wavelet pair from a filter file.

    A ``1 1`` file holds the lowpass only (the highpass is its quadrature
    mirror); a ``2 1`` file lists lowpass then highpass.
    """
    V = read_filter_file(path)
    name = Path(path).stem
    if V.shape == (1, 1):
        h = V.entries[0][0]
        w = WaveletFilter.from_lowpass(h.taps, h.offset, name)
    elif V.shape == (2, 1):
        w = WaveletFilter(V.entries[0][0], V.entries[1][0], name)
    else:
        raise ConstructionError(f"{path}: wavelet files are 1x1 or 2x1, got {V.shape}")
    w.check(tol)
    return w


def _dwt_indices(filt: SisoFilter, n: int) -> np.ndarray:
    return (2 * np.arange(n // 2)[:, None] + filt.support[None, :]) % n


def _analysis_step(y, w: WaveletFilter):
    n = y.shape[-1]
    a = y[..., _dwt_indices(w.lowpass, n)] @ w.lowpass.taps
    d = y[..., _dwt_indices(w.highpass, n)] @ w.highpass.taps
    return a, d


def _synthesis_step(a, d, w: WaveletFilter):
    half = a.shape[-1]
    n = 2 * half
    out = np.zeros(a.shape[:-1] + (n,))
    m2 = 2 * np.arange(half)
    for band, filt in ((a, w.lowpass), (d, w.highpass)):
        for k, t in zip(filt.support, filt.taps):
            out[..., (m2 + k) % n] += t * band
    return out


def dwt_apply(wavelet: WaveletFilter, levels: int, y, adjoint: bool = False) -> np.ndarray:
    """Periodic orthonormal dyadic DWT along the last axis.

    The forward output is laid out as ``[a_J, d_J, d_{J-1}, ..., d_1]``.
    With ``adjoint=True`` the input is such a layout and the (exact)
    inverse transform is returned.
    """
    y = np.asarray(y, dtype=np.float64)
    n = y.shape[-1]
    if levels < 0:
        raise ParameterError(f"levels must be nonnegative, got {levels}")
    if n % (2**levels):
        raise ShapeError(f"2**{levels} does not divide the signal length n={n}")
    if levels == 0:
        return y.copy()
    if not adjoint:
        details = []
        a = y
        for _ in range(levels):
            a, d = _analysis_step(a, wavelet)
            details.append(d)
        return np.concatenate([a] + details[::-1], axis=-1)
    m = n >> levels
    a = y[..., :m]
    pos = m
    for _ in range(levels):
        d = y[..., pos : pos + a.shape[-1]]
        pos += a.shape[-1]
        a = _synthesis_step(a, d, wavelet)
    return a


# -- semi-orthogonal transforms ------------------------------------------------


class SemiOrthogonalTransform:
    """Linear map from ``n_in`` channels to ``n_out`` channels with ``U^*U = mu I``.

    Subclasses act on arrays of shape ``(..., n_in, m)`` and keep the
    channel length ``m`` unchanged.
    """

    n_in: int
    n_out: int
    mu: float = 1.0

    def apply(self, u):
        raise NotImplementedError

    def adjoint(self, c):
        raise NotImplementedError

    def check_length(self, m: int) -> None:
        """Raise if channels of length `m` are not supported."""

    def semi_orthogonality_defect(self, m: int, trials: int = 3, seed: int = 0) -> float:
        """Relative error of ``U^*U u = mu u`` on random multi-signals."""
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(trials):
            u = rng.standard_normal((self.n_in, m))
            r = self.adjoint(self.apply(u)) - self.mu * u
            worst = max(worst, np.linalg.norm(r) / np.linalg.norm(u))
        return float(worst)


class IdentityTransform(SemiOrthogonalTransform):
    def __init__(self, channels: int):
        self.n_in = self.n_out = int(channels)
        self.mu = 1.0

    def apply(self, u):
        return np.asarray(u, dtype=np.float64)

    def adjoint(self, c):
        return np.asarray(c, dtype=np.float64)

    def __repr__(self):
        return f"IdentityTransform({self.n_in})"


class OrthonormalDWT(SemiOrthogonalTransform):
    """The same J-level orthonormal DWT applied to every channel."""

    def __init__(self, wavelet: WaveletFilter, levels: int, channels: int = 1):
        wavelet.check()
        self.wavelet = wavelet
        self.levels = int(levels)
        self.n_in = self.n_out = int(channels)
        self.mu = 1.0

    def check_length(self, m):
        if m % (2**self.levels):
            raise ShapeError(f"2**{self.levels} does not divide channel length {m}")

    def apply(self, u):
        return dwt_apply(self.wavelet, self.levels, u)

    def adjoint(self, c):
        return dwt_apply(self.wavelet, self.levels, c, adjoint=True)

    def __repr__(self):
        return f"OrthonormalDWT({self.wavelet.name!r}, levels={self.levels})"


def butterfly(N: int) -> np.ndarray:
    """Default orthogonal tree combiner: ``(1/sqrt 2)[[1, 1], [1, -1]]`` for two trees."""
    if N == 1:
        return np.eye(1)
    if N == 2:
        return np.array([[1.0, 1.0], [1.0, -1.0]]) / np.sqrt(2.0)
    raise ParameterError(f"no default combiner for {N} trees; pass one explicitly")


class DualTreeCombiner(SemiOrthogonalTransform):
    """``U = Phi blockdiag(U_1, ..., U_N)`` with orthonormal DWT trees.

    `combiner` is a real orthogonal ``N x N`` matrix mixing co-located
    coefficients of the trees; it defaults to :func:`butterfly`.
    """

    def __init__(self, wavelets: Sequence[WaveletFilter], levels: int, combiner=None):
        self.trees = [OrthonormalDWT(w, levels) for w in wavelets]
        N = len(self.trees)
        phi = butterfly(N) if combiner is None else np.asarray(combiner, dtype=np.float64)
        if phi.shape != (N, N) or not np.allclose(phi.T @ phi, np.eye(N), atol=1e-12):
            raise ConstructionError("tree combiner must be an orthogonal N x N matrix")
        self.combiner = phi
        self.levels = int(levels)
        self.n_in = self.n_out = N
        self.mu = 1.0

    def check_length(self, m):
        self.trees[0].check_length(m)

    def apply(self, u):
        u = np.asarray(u, dtype=np.float64)
        t = np.stack([U.apply(u[..., i, :]) for i, U in enumerate(self.trees)], axis=-2)
        return np.einsum("ij,...jm->...im", self.combiner, t)

    def adjoint(self, c):
        c = np.asarray(c, dtype=np.float64)
        t = np.einsum("ji,...jm->...im", self.combiner, c)
        return np.stack([U.adjoint(t[..., i, :]) for i, U in enumerate(self.trees)], axis=-2)

    def __repr__(self):
        names = [U.wavelet.name for U in self.trees]
        return f"DualTreeCombiner({names}, levels={self.levels})"


# -- frame operator ------------------------------------------------------------


@dataclass(frozen=True)
class FrameBounds:
    lower: float
    upper: float
    tight: bool
    argmin_bin: tuple
    argmax_bin: tuple

    @property
    def ratio(self) -> float:
        return self.upper / self.lower


class FrameOperator:
    """Separable frame ``F = Pi_Q^* U V Pi_D`` on periodic signals.

    Parameters
    ----------
    V : MimoFilter
        ``N x D`` analysis filter; ``D`` is its column count.
    U : SemiOrthogonalTransform, optional
        Transform from ``N`` to ``Q`` channels. Identity when omitted.
    shape : int or tuple of int
        Signal shape; one entry per axis (1-D or 2-D).
    tol : float
        Minimum singular value of ``v(nu)`` accepted as left invertible.
    """

    def __init__(self, V: MimoFilter, U: SemiOrthogonalTransform | None = None, shape=None, tol: float = 1e-10):
        if shape is None:
            raise ShapeError("a frame operator needs a signal shape")
        shape = (int(shape),) if np.isscalar(shape) else tuple(int(s) for s in shape)
        if len(shape) not in (1, 2):
            raise ShapeError(f"only 1-D and 2-D signals are supported, got shape {shape}")
        U = IdentityTransform(V.rows) if U is None else U
        if U.n_in != V.rows:
            raise ShapeError(f"U expects {U.n_in} channels but V produces {V.rows}")
        if not U.mu > 0:
            raise ConstructionError("semi-orthogonal constant must be positive")
        self.V, self.U, self.shape = V, U, shape
        self.D, self.N, self.Q = V.cols, V.rows, U.n_out
        for n in shape:
            if n % self.D:
                raise ShapeError(f"D={self.D} does not divide the signal length n={n}")
            U.check_length(n // self.D)
        for m in sorted(set(self.grid)):
            report = left_invertibility_check(V, FrequencyGrid(m), tol)
            if not report.ok:
                raise NotAFrameError(
                    f"V is not left invertible: sigma_min={report.min_singular_value:.3e} "
                    f"at bin {report.argmin_bin} (nu={report.argmin_bin / m:g})",
                    bin=report.argmin_bin,
                )

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def mu_U(self) -> float:
        return self.U.mu

    @property
    def grid(self) -> tuple[int, ...]:
        return tuple(n // self.D for n in self.shape)

    @property
    def coefficient_shape(self) -> tuple[int, ...]:
        return tuple(self.Q * n // self.D for n in self.shape)

    @property
    def redundancy(self) -> float:
        """Per-axis redundancy ``Q / D`` (``N / D`` for filter banks)."""
        return self.Q / self.D

    def _along_axes(self, fn, y, axes):
        for ax in axes:
            y = np.moveaxis(fn(np.moveaxis(y, ax, -1)), -1, ax)
        return y

    def _analyze_1d(self, y):
        return polyphase_recompose(self.U.apply(mimo_apply(self.V, polyphase_decompose(y, self.D))))

    def _synthesize_1d(self, x):
        u = self.U.adjoint(polyphase_decompose(x, self.Q))
        return polyphase_recompose(mimo_apply(self.V, u, adjoint=True))

    def _gram_1d(self, y):
        u = mimo_apply(self.V, polyphase_decompose(y, self.D))
        return self.mu_U * polyphase_recompose(mimo_apply(self.V, u, adjoint=True))

    def _check(self, a, expected, what):
        a = np.asarray(a, dtype=np.float64)
        if a.shape != expected:
            raise ShapeError(f"{what} has shape {a.shape}, expected {expected}")
        return a

    def analyze(self, y) -> np.ndarray:
        y = self._check(y, self.shape, "signal")
        return self._along_axes(self._analyze_1d, y, range(self.ndim - 1, -1, -1))

    def synthesize(self, x) -> np.ndarray:
        x = self._check(x, self.coefficient_shape, "coefficients")
        return self._along_axes(self._synthesize_1d, x, range(self.ndim))

    def gram_apply(self, y) -> np.ndarray:
        """``F^*F y = mu_U Pi_D^* V^* V Pi_D y`` computed without touching ``U``."""
        y = self._check(y, self.shape, "signal")
        return self._along_axes(self._gram_1d, y, range(self.ndim))

    apply = analyze
    adjoint = synthesize

    def gram_response(self) -> np.ndarray:
        """Per-bin matrices of ``F^*F`` in the polyphase domain.

        Shape ``(*grid, D**d, D**d)``; for 2-D frames this is the Kronecker
        product of the per-axis ``mu_U v^H v``.
        """
        mats = [self.mu_U * self.V.gram_on_grid(m) for m in self.grid]
        if self.ndim == 1:
            return mats[0]
        A, B = mats
        D = self.D
        out = np.einsum("aij,bkl->abikjl", A, B)
        return out.reshape(A.shape[0], B.shape[0], D * D, D * D)

    def bounds(self, tol: float = 1e-10) -> FrameBounds:
        return compute_frame_bounds(self, tol)

    def __repr__(self):
        return (
            f"FrameOperator(D={self.D}, N={self.N}, Q={self.Q}, U={self.U!r}, "
            f"shape={self.shape})"
        )


def frame_analyze(F: FrameOperator, y) -> np.ndarray:
    return F.analyze(y)


def frame_synthesize(F: FrameOperator, x) -> np.ndarray:
    return F.synthesize(x)


def frame_gram_apply(F: FrameOperator, y) -> np.ndarray:
    return F.gram_apply(y)


def compute_frame_bounds(F: FrameOperator, tol: float = 1e-10) -> FrameBounds:
    """Frame bounds from the extreme eigenvalues of ``mu_U v(nu)^H v(nu)``.

    On periodic signals the inf/sup over the DFT grid are exact bounds of
    the finite operator. For separable 2-D frames the bounds are products
    of the per-axis bounds.
    """
    lows, highs, amin, amax = [], [], [], []
    for m in F.grid:
        ev = np.linalg.eigvalsh(F.V.gram_on_grid(m))
        lo_bins, hi_bins = ev[:, 0], ev[:, -1]
        k = int(np.argmin(lo_bins))
        if np.sqrt(max(lo_bins[k], 0.0)) <= 1e3 * np.finfo(float).eps * np.sqrt(hi_bins.max()):
            raise NotAFrameError(f"v(nu)^H v(nu) is singular at bin {k} (nu={k / m:g})", bin=k)
        lows.append(lo_bins[k])
        highs.append(hi_bins.max())
        amin.append(k)
        amax.append(int(np.argmax(hi_bins)))
    scale = F.mu_U ** F.ndim
    lower = scale * float(np.prod(lows))
    upper = scale * float(np.prod(highs))
    return FrameBounds(lower, upper, bool(upper - lower <= tol * upper), tuple(amin), tuple(amax))


def build_filter_bank(coeffs: MimoFilter, shape) -> FrameOperator:
    """Analysis filter bank frame (``U`` the identity, ``Q = N``)."""
    return FrameOperator(coeffs, IdentityTransform(coeffs.rows), shape)


def default_prefilters() -> MimoFilter:
    """Tree 1 unfiltered, tree 2 the half-sample averaging filter ``[1/2, 1/2]``."""
    return MimoFilter.from_taps([[[1.0]], [[0.5, 0.5]]])


def build_dtt(wavelets, prefilters: MimoFilter | None = None, levels: int = 3, shape=None, combiner=None) -> FrameOperator:
    """Real dual-tree frame with prefilters.

    Parameters
    ----------
    wavelets : WaveletFilter or sequence of WaveletFilter
        One orthonormal pair per tree, or a single pair shared by all trees.
    prefilters : MimoFilter, optional
        ``N x 1`` prefilter stack; :func:`default_prefilters` when omitted.
    levels : int
        Number of decomposition levels of every tree.
    shape : int or tuple of int
        Signal shape.
    """
    prefilters = default_prefilters() if prefilters is None else prefilters
    if prefilters.cols != 1:
        raise ConstructionError(f"dual-tree prefilters must be N x 1, got {prefilters.shape}")
    N = prefilters.rows
    if isinstance(wavelets, WaveletFilter):
        wavelets = [wavelets] * N
    if len(wavelets) != N:
        raise ConstructionError(f"{len(wavelets)} wavelet pairs for {N} prefilters")
    for w in wavelets:
        w.check()
    return FrameOperator(prefilters, DualTreeCombiner(wavelets, levels, combiner), shape)


def build_dwt(wavelet: WaveletFilter, levels: int = 3, shape=None) -> FrameOperator:
    """Orthonormal wavelet basis as a tight frame (``D = N = Q = 1``, bounds 1)."""
    wavelet.check()
    return FrameOperator(MimoFilter.identity(1), OrthonormalDWT(wavelet, levels), shape)


def _resolve(name, base: Path) -> Path:
    p = Path(name)
    if not p.is_absolute():
        candidate = base / p
        if candidate.exists():
            return candidate
        shipped = data_path(p.name)
        if shipped.exists():
            return shipped
        return candidate
    return p


_DESCRIPTOR_KEYS = {"kind", "coeff_file", "prefilter_file", "levels", "n"}


def load_frame(descriptor, base_dir=None) -> FrameOperator:
    """Build a frame from a JSON descriptor (path or already-parsed dict).

    Keys: ``kind`` (``"filter_bank"``, ``"dtt"`` or ``"dwt"`` for a single
    orthonormal wavelet tree), ``coeff_file`` (filter bank coefficients, or
    the wavelet for ``"dtt"`` / ``"dwt"``),
    ``prefilter_file`` (optional, ``"dtt"`` only), ``levels`` and ``n``
    (an int for 1-D signals or ``[n1, n2]`` for images). Relative file
    names are looked up next to the descriptor, then among the shipped
    coefficient files.
    """
    if not isinstance(descriptor, dict):
        path = Path(descriptor)
        base_dir = path.parent if base_dir is None else base_dir
        descriptor = json.loads(path.read_text())
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    unknown = set(descriptor) - _DESCRIPTOR_KEYS
    if unknown:
        raise ParameterError(f"unknown frame descriptor keys: {sorted(unknown)}")
    kind = descriptor.get("kind")
    shape = descriptor.get("n")
    if shape is None:
        raise ParameterError("frame descriptor needs 'n'")
    if kind == "filter_bank":
        return build_filter_bank(read_filter_file(_resolve(descriptor["coeff_file"], base)), shape)
    if kind == "dtt":
        wavelet = load_wavelet(_resolve(descriptor.get("coeff_file", "sym3.flt"), base))
        pre = descriptor.get("prefilter_file")
        prefilters = read_filter_file(_resolve(pre, base)) if pre else None
        return build_dtt(wavelet, prefilters, int(descriptor.get("levels", 3)), shape)
    if kind == "dwt":
        wavelet = load_wavelet(_resolve(descriptor.get("coeff_file", "sym3.flt"), base))
        return build_dwt(wavelet, int(descriptor.get("levels", 3)), shape)
    raise ParameterError(f"unknown frame kind {kind!r}")
