"""Shared fixtures and the acceptance-criteria summary."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from framedeconv.core import MimoFilter
from framedeconv.frames import (
    FrameOperator,
    IdentityTransform,
    build_dtt,
    build_filter_bank,
    data_path,
    load_wavelet,
)

FIXTURES = Path(__file__).parent / "fixtures"

# criterion number -> [title, all passed so far]
_CRITERIA: dict[int, list] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (rep.when != "call" and rep.passed):
        return
    number, title = marker.args
    entry = _CRITERIA.setdefault(number, [title, True])
    entry[1] = entry[1] and rep.passed


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_CRITERIA):
        title, ok = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {title}")


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_mimo(rng, P, Q, max_len=4, max_offset=2) -> MimoFilter:
    """P x Q filter with random lengths, offsets and taps."""
    rows = []
    for _ in range(P):
        row = []
        for _ in range(Q):
            L = int(rng.integers(1, max_len + 1))
            off = int(rng.integers(-max_offset, max_offset + 1))
            row.append((list(rng.standard_normal(L)), off))
        rows.append(row)
    return MimoFilter.from_taps([[t for t, _ in r] for r in rows], [[o for _, o in r] for r in rows])


def sym3():
    return load_wavelet(data_path("sym3.flt"))


def haar():
    return load_wavelet(data_path("haar.flt"))


def five_frames(shape):
    """The five reference constructions: name -> FrameOperator."""
    rng = np.random.default_rng(5)
    union = build_dtt([haar(), sym3()], MimoFilter.from_taps([[[1.0]], [[1.0]]]), 2, shape)
    two_channel = build_filter_bank(MimoFilter.from_taps([[[1.0, 0.5]], [[0.3, -0.2, 0.1]]]), shape)
    dtt = build_dtt(sym3(), levels=2, shape=shape)
    undecimated = build_filter_bank(random_mimo(rng, 3, 1), shape)
    d2n3 = build_filter_bank(random_mimo(rng, 3, 2), shape)
    return {
        "tight union of two bases": union,
        "non-tight 2-channel": two_channel,
        "DTT with prefilters": dtt,
        "undecimated bank": undecimated,
        "D=2 N=3 bank": d2n3,
    }


def identity_frame(shape) -> FrameOperator:
    return FrameOperator(MimoFilter.identity(1), IdentityTransform(1), shape)
