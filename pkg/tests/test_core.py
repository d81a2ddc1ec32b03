import numpy as np
import pytest

from conftest import random_mimo
from framedeconv.core import (
    Convolution,
    FrequencyGrid,
    MimoFilter,
    SisoFilter,
    left_invertibility_check,
    mimo_apply,
    mimo_frequency_matrix,
    polyphase_decompose,
    polyphase_nd,
    polyphase_recompose,
    read_filter_file,
    unpolyphase_nd,
    weighted_gram,
    write_filter_file,
)
from framedeconv.errors import ParameterError, ShapeError
from framedeconv.solver import dense_matrix


# -- polyphase -----------------------------------------------------------------


def test_decompose_examples():
    np.testing.assert_array_equal(polyphase_decompose([1, 2, 3, 4], 2), [[1, 3], [2, 4]])
    np.testing.assert_array_equal(polyphase_decompose([5], 1), [[5]])


def test_decompose_divisibility_error_names_n_and_d():
    with pytest.raises(ShapeError, match=r"D=3.*n=10"):
        polyphase_decompose(np.arange(10), 3)


def test_recompose_examples():
    np.testing.assert_array_equal(polyphase_recompose(([1, 3], [2, 4])), [1, 2, 3, 4])
    np.testing.assert_array_equal(polyphase_recompose([[4.0, 5.0, 6.0]]), [4, 5, 6])


def test_recompose_ragged():
    with pytest.raises(ShapeError):
        polyphase_recompose([[1, 2], [3]])


def test_polyphase_round_trips_exact(rng):
    y = rng.standard_normal(12)
    assert np.array_equal(polyphase_recompose(polyphase_decompose(y, 3)), y)
    u = rng.standard_normal((4, 5))
    assert np.array_equal(polyphase_decompose(polyphase_recompose(u), 4), u)


def test_polyphase_nd_round_trip_and_layout(rng):
    y = rng.standard_normal((6, 4))
    u = polyphase_nd(y, 2)
    assert u.shape == (4, 3, 2)
    # component (j1, j2) = (1, 0) holds y[2a + 1, 2b]
    np.testing.assert_array_equal(u[2], y[1::2, 0::2])
    assert np.array_equal(unpolyphase_nd(u, 2), y)


# -- filters -------------------------------------------------------------------


def test_mimo_apply_identity_and_impulse():
    assert np.allclose(mimo_apply(MimoFilter.identity(1), [[7.0, 0.0, 1.0]]), [[7, 0, 1]])
    V = MimoFilter.from_taps([[[1.0, 1.0]]], [[0]])
    np.testing.assert_allclose(mimo_apply(V, [[1.0, 0, 0, 0]]), [[1, 1, 0, 0]], atol=1e-15)


def test_mimo_apply_matches_dense_circulant_blocks(rng):
    V = random_mimo(rng, 2, 2)
    m = 8
    x, u = rng.standard_normal((2, m)), rng.standard_normal((2, m))
    # independent assembly: block (i, j) is the circulant of entry (i, j)
    A = np.zeros((2 * m, 2 * m))
    for i in range(2):
        for j in range(2):
            e = V.entries[i][j]
            for k, t in zip(e.support, e.taps):
                A[i * m : (i + 1) * m, j * m : (j + 1) * m] += t * np.roll(np.eye(m), k, axis=0)
    np.testing.assert_allclose(mimo_apply(V, x).ravel(), A @ x.ravel(), atol=1e-12)
    lhs = np.vdot(mimo_apply(V, x), u)
    rhs = np.vdot(x, mimo_apply(V, u, adjoint=True))
    assert abs(lhs - rhs) <= 1e-10 * (np.linalg.norm(x) * np.linalg.norm(u) + 1)


def test_mimo_apply_channel_mismatch():
    with pytest.raises(ShapeError):
        mimo_apply(MimoFilter.identity(2), np.zeros((3, 4)))


def test_frequency_matrix_examples(rng):
    one = MimoFilter.identity(1)
    assert np.allclose(mimo_frequency_matrix(one, np.linspace(-0.5, 0.5, 7)), 1.0)
    V = MimoFilter.from_taps([[[1.0, 1.0]]])
    assert mimo_frequency_matrix(V, 0.0)[0, 0] == pytest.approx(2.0)
    assert abs(mimo_frequency_matrix(V, 0.5)[0, 0]) < 1e-15
    W = random_mimo(rng, 3, 2)
    nu = 0.3
    for i in range(3):
        for j in range(2):
            e = W.entries[i][j]
            ref = sum(t * np.exp(-2j * np.pi * nu * k) for k, t in zip(e.support, e.taps))
            assert mimo_frequency_matrix(W, nu)[i, j] == pytest.approx(ref, abs=1e-12)


def test_grid_response_matches_time_domain(rng):
    h = SisoFilter(rng.standard_normal(5), -2)
    y = rng.standard_normal(16)
    direct = np.zeros(16)
    for k, t in zip(h.support, h.taps):
        direct += t * np.roll(y, k)
    spectral = np.fft.ifft(np.fft.fft(y) * h.grid_response(16)).real
    assert np.linalg.norm(direct - spectral) <= 1e-10 * np.linalg.norm(direct)


def test_weighted_gram_examples(rng):
    grid = FrequencyGrid(8)
    G = weighted_gram([(1.0, MimoFilter.identity(2))], grid)
    assert np.allclose(G, np.eye(2))
    G = weighted_gram([(2.0, MimoFilter.from_taps([[[1.0, 1.0]]]))], grid)
    nu = grid.bins
    np.testing.assert_allclose(G[:, 0, 0].real, 2 * np.abs(1 + np.exp(-2j * np.pi * nu)) ** 2, atol=1e-12)
    filters = [(float(rng.uniform(0.1, 3)), random_mimo(rng, 3, 2)) for _ in range(3)]
    G = weighted_gram(filters, grid)
    ref = sum(eta * np.conj(np.swapaxes(mimo_frequency_matrix(W, nu), -1, -2)) @ mimo_frequency_matrix(W, nu) for eta, W in filters)
    np.testing.assert_allclose(G, ref, atol=1e-10)
    assert np.allclose(G, np.conj(np.swapaxes(G, -1, -2)))
    assert np.linalg.eigvalsh(G).min() >= -1e-12


def test_weighted_gram_rejects_nonpositive_weight():
    with pytest.raises(ParameterError):
        weighted_gram([(0.0, MimoFilter.identity(1))], FrequencyGrid(4))


def test_left_invertibility_examples():
    rep = left_invertibility_check(MimoFilter.from_taps([[[1.0]], [[1.0]]]), FrequencyGrid(8))
    assert rep.ok and rep.min_singular_value == pytest.approx(np.sqrt(2))
    rep = left_invertibility_check(MimoFilter.from_taps([[[1.0, -1.0]]]), FrequencyGrid(8))
    assert not rep.ok and rep.argmin_bin == 0
    with pytest.raises(ShapeError):
        left_invertibility_check(random_mimo(np.random.default_rng(0), 1, 2), FrequencyGrid(4))


def test_dtt_prefilters_invertibility_matches_dense_gram():
    V = MimoFilter.from_taps([[[1.0]], [[0.5, 0.5]]])
    rep = left_invertibility_check(V, FrequencyGrid(16))
    M = np.vstack([dense_matrix(lambda y, e=e: mimo_apply(MimoFilter(((e,),)), y[None])[0], (16,)) for (e,) in V.entries])
    ev = np.linalg.eigvalsh(M.T @ M)
    assert rep.ok
    assert rep.min_singular_value**2 == pytest.approx(ev.min(), abs=1e-12)


# -- convolution ----------------------------------------------------------------


def test_convolution_matches_direct_sum(rng):
    k = rng.standard_normal((3, 2))
    C = Convolution(k, origin=(1, 0))
    y = rng.standard_normal((6, 5))
    direct = np.zeros_like(y)
    for (a, b), t in np.ndenumerate(k):
        direct += t * np.roll(y, (a - 1, b), axis=(0, 1))
    np.testing.assert_allclose(C.apply(y), direct, atol=1e-12)
    u = rng.standard_normal((6, 5))
    assert np.vdot(C.apply(y), u) == pytest.approx(np.vdot(y, C.adjoint(u)), abs=1e-10)


def test_single_tap_convolution_is_exact():
    y = np.array([0.0, 255.0, 3.0, 17.5])
    assert np.array_equal(Convolution.identity(1).apply(y), y)
    C = Convolution([2.0], origin=[-1])
    np.testing.assert_array_equal(C.apply(y), 2.0 * np.roll(y, 1))
    np.testing.assert_array_equal(C.adjoint(y), 2.0 * np.roll(y, -1))


def test_polyphase_response_matches_polyphase_filter(rng):
    C = Convolution(rng.standard_normal(5))
    n, D = 16, 2
    H = C.polyphase_response((n,), D)
    W = C.polyphase_filter(D)
    np.testing.assert_allclose(H, W.grid_response(n // D), atol=1e-12)
    y = rng.standard_normal(n)
    via_filter = polyphase_recompose(mimo_apply(W, polyphase_decompose(y, D)))
    np.testing.assert_allclose(via_filter, C.apply(y), atol=1e-12)


# -- files -----------------------------------------------------------------------


def test_filter_file_round_trip(tmp_path, rng):
    V = random_mimo(rng, 3, 2)
    path = tmp_path / "v.flt"
    write_filter_file(path, V)
    assert read_filter_file(path) == V


def test_filter_file_errors(tmp_path):
    path = tmp_path / "bad.flt"
    path.write_text("# comment\n1 1\n0 3 1.0 2.0\n")
    with pytest.raises(ShapeError, match="declares 3 taps"):
        read_filter_file(path)
    path.write_text("2 1\n0 1 1.0\n")
    with pytest.raises(ShapeError):
        read_filter_file(path)
