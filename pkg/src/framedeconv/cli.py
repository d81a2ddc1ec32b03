"""Command-line front end.

Usage::

    framedeconv <subcommand> --config <path> [--out <dir>] [--seed <u64>]

Subcommands are ``frame-info``, ``degrade``, ``restore`` and
``oracle-check``. Exit codes: 0 success, 2 frame error, 3 input/output or
configuration error, 4 solver error. Every subcommand prints one JSON line
on stdout; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .core import Convolution, MimoFilter
from .errors import (
    CompositionUnsupportedError,
    ConstructionError,
    DomainError,
    FormatError,
    FrameDeconvError,
    NotAFrameError,
    OracleTooLargeError,
    ParameterError,
    PreconditionerError,
    ShapeError,
    SolverError,
    StalePreconditionerError,
    ValidationError,
)
from .frames import FrameOperator, build_filter_bank, load_frame
from .io import read_fsig, read_image, write_fsig, write_metrics, write_pgm
from .prox import AbsShifted, SeparableFunction
from .restore import BlurOperator, NoiseModel, build_problem, degrade, restore, snr, ssim
from .solver import (
    ConvolutiveTerm,
    FrameTerm,
    Problem,
    SolverParams,
    dense_oracle_solve,
    precompute_inverse,
    solve_quadratic,
)

__all__ = ["RunConfig", "load_config", "main", "EXIT_OK", "EXIT_FRAME", "EXIT_IO", "EXIT_SOLVER"]

EXIT_OK, EXIT_FRAME, EXIT_IO, EXIT_SOLVER = 0, 2, 3, 4

DEGRADED_NAME = "degraded.fsig"

_TOP_KEYS = {
    "input", "frame", "form", "noise", "blur", "tau", "box",
    "solver", "observation", "output_dir", "timing",
}
_NOISE_KEYS = {"kind", "alpha", "seed", "scale"}
_BLUR_KEYS = {"size"}
_SOLVER_KEYS = {"etas", "kappa", "relaxation", "max_iter", "tol", "log_every", "slack"}


class ConfigError(FrameDeconvError):
    """The run configuration is malformed."""


def _check_keys(d, allowed, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


@dataclass
class RunConfig:
    """Parsed run configuration; relative paths resolve against `base_dir`.

    The trace objective relaxes domain constraints by ``solver.slack``
    (pixel units); it defaults to 1e-2 because PPXA+ iterates approach the
    box only in the limit.
    """

    base_dir: Path
    input: Path | None = None
    frame: object = None
    form: str = "AF"
    noise: NoiseModel = field(default_factory=NoiseModel)
    blur_size: int = 5
    tau: float = 0.01
    box: tuple = (0.0, 255.0)
    etas: tuple = (1.0, 1.0)
    kappa: float = 1.0
    relaxation: object = 1.0
    max_iter: int = 1000
    tol: float = 1e-5
    log_every: int = 1
    slack: float = 1e-2
    observation: Path | None = None
    output_dir: Path = Path("out")
    timing: bool = False

    def path(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    def solver_params(self) -> SolverParams:
        return SolverParams(
            relaxation=self.relaxation,
            max_iter=self.max_iter,
            tol=self.tol,
            log_every=self.log_every,
            slack=self.slack,
            record_time=self.timing,
        )

    def blur(self, ndim: int) -> Convolution:
        if self.blur_size == 1:
            return BlurOperator.identity(ndim)
        return BlurOperator.uniform(self.blur_size, ndim)

    def frame_operator(self, shape) -> FrameOperator:
        """Frame for signals of `shape`; a descriptor without ``n`` inherits it."""
        if self.frame is None:
            raise ConfigError("config needs a 'frame' descriptor")
        if isinstance(self.frame, dict):
            desc, base = dict(self.frame), self.base_dir
        else:
            path = self.path(self.frame)
            try:
                desc = json.loads(path.read_text())
            except OSError as exc:
                raise FormatError(f"cannot read frame descriptor {path}: {exc}") from exc
            base = path.parent
        desc.setdefault("n", list(shape) if len(shape) > 1 else shape[0])
        F = load_frame(desc, base)
        if F.shape != tuple(shape):
            raise ShapeError(f"frame shape {F.shape} does not match signal shape {tuple(shape)}")
        return F


def load_config(path, out=None, seed=None) -> RunConfig:
    """Read a JSON run configuration, applying ``--out`` / ``--seed`` overrides."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise FormatError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_config(raw, path.parent, out, seed)


def parse_config(raw, base_dir, out=None, seed=None) -> RunConfig:
    _check_keys(raw, _TOP_KEYS, "config")
    cfg = RunConfig(base_dir=Path(base_dir))
    try:
        if "input" in raw:
            cfg.input = cfg.path(raw["input"])
        cfg.frame = raw.get("frame")
        cfg.form = str(raw.get("form", "AF")).upper()
        if cfg.form not in ("SF", "AF"):
            raise ConfigError(f"form must be SF or AF, got {cfg.form!r}")
        noise = raw.get("noise", {})
        _check_keys(noise, _NOISE_KEYS, "noise")
        noise_seed = int(noise.get("seed", 0)) if seed is None else int(seed)
        cfg.noise = NoiseModel(
            kind=noise.get("kind", "none"),
            alpha=float(noise.get("alpha", 1.0)),
            seed=noise_seed,
            scale=None if noise.get("scale") is None else float(noise["scale"]),
        )
        blur = raw.get("blur", {})
        _check_keys(blur, _BLUR_KEYS, "blur")
        cfg.blur_size = int(blur.get("size", 5))
        if cfg.blur_size < 1:
            raise ConfigError("blur size must be positive")
        cfg.tau = float(raw.get("tau", cfg.tau))
        lo, hi = (float(v) for v in raw.get("box", cfg.box))
        if not lo < hi:
            raise ConfigError(f"empty box [{lo}, {hi}]")
        cfg.box = (lo, hi)
        solver = raw.get("solver", {})
        _check_keys(solver, _SOLVER_KEYS, "solver")
        etas = tuple(float(e) for e in solver.get("etas", cfg.etas))
        if len(etas) != 2:
            raise ConfigError("solver.etas needs one weight per convolutive term (2)")
        cfg.etas = etas
        cfg.kappa = float(solver.get("kappa", cfg.kappa))
        cfg.relaxation = solver.get("relaxation", cfg.relaxation)
        cfg.max_iter = int(solver.get("max_iter", cfg.max_iter))
        cfg.tol = float(solver.get("tol", cfg.tol))
        cfg.log_every = int(solver.get("log_every", cfg.log_every))
        cfg.slack = float(solver.get("slack", cfg.slack))
        if "observation" in raw:
            cfg.observation = cfg.path(raw["observation"])
        cfg.output_dir = Path(out) if out is not None else cfg.path(raw.get("output_dir", "out"))
        cfg.timing = bool(raw.get("timing", False))
        cfg.solver_params()  # validate now rather than mid-run
    except (TypeError, ValueError) as exc:
        if isinstance(exc, FrameDeconvError):
            raise
        raise ConfigError(f"invalid config value: {exc}") from exc
    return cfg


def _emit(obj) -> None:
    print(json.dumps(obj), flush=True)


def _read_input(cfg: RunConfig) -> np.ndarray:
    if cfg.input is None:
        raise ConfigError("config needs an 'input' image")
    try:
        return read_image(cfg.input)
    except OSError as exc:
        raise FormatError(f"cannot read input {cfg.input}: {exc}") from exc


def _output_dir(cfg: RunConfig) -> Path:
    try:
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise FormatError(f"cannot create output directory {cfg.output_dir}: {exc}") from exc
    return cfg.output_dir


def _in_image_units(z, noise: NoiseModel):
    return z / noise.alpha if noise.kind == "poisson" else z


def _bins(b):
    return [int(v) for v in b]


# -- subcommands ---------------------------------------------------------------


def cmd_frame_info(args) -> int:
    path = Path(args.config)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    if "kind" in raw:
        F = load_frame(raw, path.parent)
    else:
        cfg = parse_config(raw, path.parent, args.out, args.seed)
        shape = _read_input(cfg).shape if cfg.input is not None else None
        if shape is None:
            if isinstance(cfg.frame, dict):
                F = load_frame(cfg.frame, cfg.base_dir)
            else:
                F = load_frame(cfg.path(cfg.frame))
        else:
            F = cfg.frame_operator(shape)
    b = F.bounds()
    report = {
        "D": F.D,
        "N": F.N,
        "Q": F.Q,
        "redundancy": F.N / F.D,
        "shape": list(F.shape),
        "mu_lower": b.lower,
        "mu_upper": b.upper,
        "tight": b.tight,
        "argmin_bin": _bins(b.argmin_bin),
        "argmax_bin": _bins(b.argmax_bin),
    }
    _emit(report)
    return EXIT_OK


def cmd_degrade(args) -> int:
    cfg = load_config(args.config, args.out, args.seed)
    ybar = _read_input(cfg)
    z = degrade(ybar, cfg.blur(ybar.ndim), cfg.noise)
    out = _output_dir(cfg)
    target = out / DEGRADED_NAME
    write_fsig(target, z)
    # score exactly what was written
    z_saved = read_fsig(target)
    sidecar = {
        "kind": cfg.noise.kind,
        "alpha": cfg.noise.alpha,
        "seed": cfg.noise.seed,
        "scale": cfg.noise.laplace_scale if cfg.noise.kind == "laplace" else None,
        "blur_size": cfg.blur_size,
        "snr_vs_original": snr(ybar, _in_image_units(z_saved, cfg.noise)),
    }
    text = json.dumps(sidecar)
    target.with_suffix(".json").write_text(text + "\n")
    _emit(sidecar)
    return EXIT_OK


def _observation(cfg: RunConfig):
    path = cfg.observation if cfg.observation is not None else cfg.output_dir / DEGRADED_NAME
    try:
        z = read_image(path)
    except OSError as exc:
        raise FormatError(f"cannot read observation {path}: {exc}") from exc
    sidecar = path.with_suffix(".json")
    if sidecar.exists():
        meta = json.loads(sidecar.read_text())
        if meta.get("kind") != cfg.noise.kind or float(meta.get("alpha")) != cfg.noise.alpha:
            raise ValidationError(
                f"observation was produced with noise {meta.get('kind')}/alpha={meta.get('alpha')}, "
                f"config says {cfg.noise.kind}/alpha={cfg.noise.alpha}"
            )
    return z


def cmd_restore(args) -> int:
    cfg = load_config(args.config, args.out, args.seed)
    z = _observation(cfg)
    reference = _read_input(cfg) if cfg.input is not None else None
    if reference is not None and reference.shape != z.shape:
        raise ShapeError(f"input shape {reference.shape} differs from observation shape {z.shape}")
    F = cfg.frame_operator(z.shape)
    rp = build_problem(
        z, cfg.blur(z.ndim), F, cfg.tau, cfg.form, cfg.noise.kind, cfg.noise.alpha,
        cfg.box, cfg.etas, cfg.kappa,
    )
    y, trace = restore(rp, cfg.solver_params())
    out = _output_dir(cfg)
    write_fsig(out / "restored.fsig", y)
    if y.ndim == 2:
        write_pgm(out / "restored.pgm", y)
    trace.write(out / "trace.jsonl")
    seconds = trace.records[-1].seconds if trace.records else None
    if reference is not None:
        s_db = snr(reference, y)
        s_sim = ssim(reference, y) if y.ndim == 2 else None
    else:
        s_db = s_sim = None
    line = write_metrics(out / "metrics.json", s_db, s_sim, trace.iterations, seconds)
    print(line, flush=True)
    return EXIT_OK


def _oracle_problem(shape, rng):
    D, N = 2, 3
    V = MimoFilter.from_taps(
        [[list(rng.standard_normal(3)) for _ in range(D)] for _ in range(N)]
    )
    F = build_filter_bank(V, shape)
    ndim = len(shape)
    terms = tuple(
        ConvolutiveTerm(
            Convolution(rng.standard_normal((3,) * ndim)),
            SeparableFunction(AbsShifted(1.0)),
            float(rng.uniform(0.5, 2.0)),
        )
        for _ in range(2)
    )
    frame_terms = tuple(
        FrameTerm(SeparableFunction(AbsShifted(1.0)), float(rng.uniform(0.5, 2.0))) for _ in range(2)
    )
    return Problem(F, terms, frame_terms)


def cmd_oracle_check(args) -> int:
    """Frequency-domain quadratic solve against the dense direct solve."""
    rng = np.random.default_rng(0 if args.seed is None else args.seed)
    ok = True
    results = []
    for shape in [(32,), (16, 16)]:
        problem = _oracle_problem(shape, rng)
        F = problem.frame
        for mode in ("SF", "AF"):
            p = [rng.standard_normal(shape) for _ in problem.terms]
            r = [rng.standard_normal(F.coefficient_shape) for _ in problem.frame_terms]
            pre = precompute_inverse(mode, F, problem.terms, problem.kappa)
            fast = solve_quadratic(mode, problem, p, r, pre)
            dense = dense_oracle_solve(mode, problem, p, r)
            err = float(np.linalg.norm(fast - dense) / np.linalg.norm(dense))
            passed = err <= 1e-8
            ok &= passed
            name = f"{mode} {'x'.join(map(str, shape))}"
            print(f"{'PASS' if passed else 'FAIL'} {name} rel_err={err:.3e}", file=sys.stderr)
            results.append({"case": name, "rel_err": err, "pass": passed})
    _emit({"pass": ok, "cases": results})
    return EXIT_OK if ok else EXIT_SOLVER


_COMMANDS = {
    "frame-info": cmd_frame_info,
    "degrade": cmd_degrade,
    "restore": cmd_restore,
    "oracle-check": cmd_oracle_check,
}

_FRAME_ERRORS = (NotAFrameError, ConstructionError, CompositionUnsupportedError)
_SOLVER_ERRORS = (SolverError, PreconditionerError, StalePreconditionerError, OracleTooLargeError)
_INPUT_ERRORS = (
    ConfigError, FormatError, ValidationError, DomainError, ShapeError, ParameterError, OSError,
    json.JSONDecodeError,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_IO, f"{self.prog}: error: {message}\n")


def _u64(text):
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="framedeconv", description="Frame-regularized deconvolution with PPXA+.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("subcommand", choices=sorted(_COMMANDS))
    parser.add_argument("--config", help="JSON run config (or frame descriptor for frame-info)")
    parser.add_argument("--out", help="output directory, overrides output_dir")
    parser.add_argument("--seed", type=_u64, help="noise seed, overrides noise.seed")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is None and args.subcommand != "oracle-check":
        parser.error(f"{args.subcommand} needs --config")
    try:
        return _COMMANDS[args.subcommand](args)
    except _FRAME_ERRORS as exc:
        bin_ = getattr(exc, "bin", None)
        suffix = f" (bin {bin_})" if bin_ is not None else ""
        print(f"frame error: {exc}{suffix}", file=sys.stderr)
        return EXIT_FRAME
    except _SOLVER_ERRORS as exc:
        print(f"solver error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except _INPUT_ERRORS as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
