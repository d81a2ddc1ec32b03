"""Deconvolution problems: blur, noise simulation, objectives and image metrics.

The observation model is ``z = D_alpha(T ybar)`` with ``T`` a circular blur
and ``D_alpha`` Poisson or Laplace noise. Restoration uses two convolutive
terms (data fidelity on ``L_1 = T`` and the box ``[lo, hi]`` on
``L_2 = I``) and one frame term ``tau ||.||_1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import Convolution
from .errors import DomainError, ParameterError, ShapeError, ValidationError
from .frames import FrameOperator
from .prox import AbsShifted, BoxIndicator, PoissonNLL, SeparableFunction
from .solver import ConvolutiveTerm, FrameTerm, Problem, SolverParams, ppxa

__all__ = [
    "BlurOperator",
    "NoiseModel",
    "RestorationProblem",
    "make_rng",
    "degrade",
    "build_problem",
    "objective_eval",
    "restore",
    "snr",
    "ssim",
    "phantom",
]

NOISE_KINDS = ("poisson", "laplace", "none")


class BlurOperator(Convolution):
    """Circular blur ``T``; its adjoint is the flipped kernel."""

    @classmethod
    def uniform(cls, size: int = 5, ndim: int = 2) -> "BlurOperator":
        if size < 1:
            raise ParameterError(f"blur size must be positive, got {size}")
        return cls(np.full((size,) * ndim, 1.0 / size**ndim))

    @classmethod
    def identity(cls, ndim: int = 2) -> "BlurOperator":
        return cls(np.ones((1,) * ndim))


@dataclass(frozen=True)
class NoiseModel:
    """Noise ``D_alpha``.

    Poisson draws ``z ~ Poisson(alpha * T ybar)``. Laplace adds i.i.d.
    Laplace noise of scale `scale`, which defaults to ``1 / alpha`` so that
    the matching minus log-likelihood is ``alpha |. - z|``.
    """

    kind: str = "none"
    alpha: float = 1.0
    seed: int = 0
    scale: float | None = None

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ParameterError(f"noise kind must be one of {NOISE_KINDS}, got {self.kind!r}")
        if not self.alpha > 0:
            raise ParameterError(f"alpha must be positive, got {self.alpha}")
        if self.scale is not None and not self.scale > 0:
            raise ParameterError(f"Laplace scale must be positive, got {self.scale}")
        if not 0 <= int(self.seed) < 2**64:
            raise ParameterError("seed must be an unsigned 64-bit integer")

    @property
    def laplace_scale(self) -> float:
        return 1.0 / self.alpha if self.scale is None else float(self.scale)


def make_rng(seed: int) -> np.random.Generator:
    """Philox-4x64 counter-based generator keyed by a 64-bit seed."""
    return np.random.Generator(np.random.Philox(int(seed)))


def degrade(ybar, T: Convolution, noise: NoiseModel) -> np.ndarray:
    """Blur `ybar` with `T` and apply the noise model."""
    blurred = T.apply(ybar)
    if noise.kind == "none":
        return blurred
    rng = make_rng(noise.seed)
    if noise.kind == "poisson":
        # roundoff of the FFT blur can leave tiny negatives on zero regions
        tiny = 1e-9 * max(1.0, float(np.max(np.abs(blurred))))
        if np.any(blurred < -tiny):
            raise DomainError("Poisson noise needs a nonnegative blurred image")
        return rng.poisson(noise.alpha * np.maximum(blurred, 0.0)).astype(np.float64)
    return blurred + rng.laplace(0.0, noise.laplace_scale, size=blurred.shape)


@dataclass(frozen=True)
class RestorationProblem:
    observation: np.ndarray
    blur: Convolution
    frame: FrameOperator
    tau: float
    form: str
    noise_kind: str
    alpha: float
    box: tuple
    problem: Problem

    @property
    def data_term(self) -> ConvolutiveTerm:
        return self.problem.terms[0]

    def observation_in_image_units(self) -> np.ndarray:
        """``z / alpha`` for Poisson counts, ``z`` otherwise."""
        if self.noise_kind == "poisson":
            return self.observation / self.alpha
        return self.observation

    def objective(self, point, slack: float = 0.0) -> float:
        return self.problem.objective(point, self.form, slack)


def build_problem(
    z,
    T: Convolution,
    F: FrameOperator,
    tau: float,
    form: str = "AF",
    noise_kind: str = "poisson",
    alpha: float = 1.0,
    box=(0.0, 255.0),
    etas=(1.0, 1.0),
    kappa: float = 1.0,
) -> RestorationProblem:
    """Assemble the two-term fidelity/box problem with an l1 frame prior.

    ``f_1`` is the Poisson minus log-likelihood with counts ``z`` (or
    ``alpha |. - z|`` for Laplace and noiseless data) on ``L_1 = T``;
    ``f_2`` is the box indicator on ``L_2 = I``; ``g_1 = tau ||.||_1`` acts
    on the coefficients (SF) or on ``F y`` (AF).
    """
    z = np.asarray(z, dtype=np.float64)
    form = str(form).upper()
    if form not in ("SF", "AF"):
        raise ParameterError(f"form must be 'SF' or 'AF', got {form!r}")
    if not tau > 0:
        raise ParameterError(f"tau must be positive, got {tau}")
    if z.shape != F.shape:
        raise ShapeError(f"observation shape {z.shape} does not match frame shape {F.shape}")
    if not np.all(np.isfinite(z)):
        raise ValidationError("observation contains non-finite values")
    if noise_kind == "poisson":
        if np.any(z < 0) or np.any(z != np.round(z)):
            raise ValidationError("Poisson observations must be nonnegative integers")
        fidelity = PoissonNLL(alpha, z)
    elif noise_kind in ("laplace", "none"):
        fidelity = AbsShifted(alpha, z)
    else:
        raise ParameterError(f"unknown noise kind {noise_kind!r}")
    lo, hi = box
    terms = (
        ConvolutiveTerm(T, SeparableFunction(fidelity, z.shape), etas[0]),
        ConvolutiveTerm(Convolution.identity(z.ndim), SeparableFunction(BoxIndicator(lo, hi), z.shape), etas[1]),
    )
    frame_terms = (FrameTerm(SeparableFunction(AbsShifted(tau), F.coefficient_shape), kappa),)
    problem = Problem(F, terms, frame_terms)
    return RestorationProblem(z, T, F, float(tau), form, noise_kind, float(alpha), (float(lo), float(hi)), problem)


def objective_eval(rp: RestorationProblem, point) -> float:
    """Objective at a signal (AF) or a coefficient array (SF); ``inf`` off-domain."""
    return rp.objective(point)


def restore(rp: RestorationProblem, params: SolverParams = SolverParams()):
    """Run PPXA+ from the observation (in image units); returns ``(y, trace)``."""
    return ppxa(rp.form, rp.problem, params, y_init=rp.observation_in_image_units())


def snr(ybar, y) -> float:
    """``10 log10(||ybar||^2 / ||ybar - y||^2)`` in dB; ``inf`` when equal."""
    ybar = np.asarray(ybar, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if ybar.shape != y.shape:
        raise ShapeError(f"shape mismatch {ybar.shape} vs {y.shape}")
    ref = float(np.sum(ybar**2))
    if ref == 0.0:
        raise ParameterError("SNR reference signal is zero")
    err = float(np.sum((ybar - y) ** 2))
    if err == 0.0:
        return float("inf")
    return 10.0 * np.log10(ref / err)


def ssim(ybar, y, window: int = 8, data_range: float = 255.0, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM over all `window`-sized sliding windows (uniform weights).

    Local statistics use population (1/N) moments;
    ``C1 = (k1 L)^2`` and ``C2 = (k2 L)^2``.
    """
    a = np.asarray(ybar, dtype=np.float64)
    b = np.asarray(y, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    win = (window,) * a.ndim
    if any(w > s for w, s in zip(win, a.shape)):
        raise ShapeError(f"window {window} larger than image shape {a.shape}")
    axes = tuple(range(a.ndim, 2 * a.ndim))
    pa = sliding_window_view(a, win)
    pb = sliding_window_view(b, win)
    mu_a, mu_b = pa.mean(axis=axes), pb.mean(axis=axes)
    var_a = (pa**2).mean(axis=axes) - mu_a**2
    var_b = (pb**2).mean(axis=axes) - mu_b**2
    cov = (pa * pb).mean(axis=axes) - mu_a * mu_b
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def phantom(shape=(64, 64)) -> np.ndarray:
    """Deterministic piecewise-smooth test image with values in ``[0, 255]``."""
    n1, n2 = shape
    r, c = np.meshgrid(np.linspace(0, 1, n1), np.linspace(0, 1, n2), indexing="ij")
    img = 40.0 + 60.0 * c + 20.0 * r
    disk = (r - 0.35) ** 2 + (c - 0.32) ** 2 < 0.2**2
    img[disk] = 190.0 + 40.0 * (r[disk] - 0.35) / 0.2
    rect = (r > 0.6) & (r < 0.9) & (c > 0.5) & (c < 0.88)
    img[rect] = 90.0 - 30.0 * (c[rect] - 0.5)
    square = (r > 0.15) & (r < 0.3) & (c > 0.65) & (c < 0.8)
    img[square] = 245.0
    stripe = (r > 0.7) & (r < 0.78) & (c > 0.08) & (c < 0.4)
    img[stripe] = 10.0
    return np.clip(img, 0.0, 255.0)
