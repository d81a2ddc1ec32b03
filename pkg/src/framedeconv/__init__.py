"""Frame-based regularization for deconvolution under Poisson or Laplace noise.

Submodules
----------
core      periodic signals, polyphase splitting, MIMO filters, convolutions
frames    frame operators ``F = Pi_Q^* U V Pi_D``, bounds, dual-tree frames
prox      proximity operators of separable potentials
solver    PPXA+ in synthesis (SF) and analysis (AF) form
restore   blur, noise simulation, problem assembly, SNR / SSIM
io        PGM, raw float32 signals, metrics JSON
cli       command-line front end
"""

__version__ = "0.1.0"

from .core import Convolution, MimoFilter, SisoFilter  # noqa: E402
from .frames import (  # noqa: E402
    FrameOperator,
    build_dtt,
    build_dwt,
    build_filter_bank,
    compute_frame_bounds,
    load_frame,
    load_wavelet,
)
from .restore import BlurOperator, NoiseModel, build_problem, degrade, restore, snr, ssim  # noqa: E402
from .solver import Problem, SolverParams, ppxa_af, ppxa_sf  # noqa: E402

__all__ = [
    "Convolution",
    "MimoFilter",
    "SisoFilter",
    "FrameOperator",
    "build_dtt",
    "build_dwt",
    "build_filter_bank",
    "compute_frame_bounds",
    "load_frame",
    "load_wavelet",
    "BlurOperator",
    "NoiseModel",
    "build_problem",
    "degrade",
    "restore",
    "snr",
    "ssim",
    "Problem",
    "SolverParams",
    "ppxa_af",
    "ppxa_sf",
]
