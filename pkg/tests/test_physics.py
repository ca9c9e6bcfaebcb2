import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wgsr.physics import (
    ArrayGeometry, CutOnDegeneracyError, FrequencyGrid, ModalBasis, SingularEvaluationError,
    SourceConfig, WaveguideModel, default_mode_count, greens_function, greens_matrix,
    horizontal_wavenumbers, propagating_mode_count, synthesize_response, vertical_modes,
)

K_C = 2 * math.pi * 32.0625 / 1500


def test_vertical_modes_values():
    mu = vertical_modes(200.0, 9)
    assert mu[0] == pytest.approx(2.4674011e-4, rel=1e-7)
    assert mu[8] == pytest.approx(1.9986e-2, rel=1e-4)
    assert mu[8] > K_C ** 2 > mu[7]
    assert vertical_modes(math.pi, 1)[0] == pytest.approx(1.0, rel=1e-15)
    assert np.all(np.diff(mu) > 0)


@pytest.mark.parametrize("depth, n", [(0.0, 3), (-1.0, 3), (200.0, 0)])
def test_vertical_modes_rejects(depth, n):
    with pytest.raises(ValueError):
        vertical_modes(depth, n)


def test_horizontal_wavenumbers_paper_constants():
    beta, m = horizontal_wavenumbers(vertical_modes(200.0, 20), K_C)
    assert m == 8
    assert beta[0].real == pytest.approx(0.133381328, rel=1e-8)
    assert np.all(beta[:8].imag == 0) and np.all(beta[:8].real > 0)
    assert np.all(beta[8:].real == 0) and np.all(beta[8:].imag > 0)
    assert beta[19].imag == pytest.approx(0.2840048, rel=1e-6)


def test_horizontal_wavenumbers_forced_case():
    mu1 = vertical_modes(200.0, 1)[0]
    beta, m = horizontal_wavenumbers([mu1], math.sqrt(2 * mu1))
    assert m == 1
    assert beta[0] == pytest.approx(math.sqrt(mu1), rel=1e-12)


def test_cut_on_degeneracy_is_an_error():
    mu = vertical_modes(200.0, 5)
    with pytest.raises(CutOnDegeneracyError):
        horizontal_wavenumbers(mu, math.sqrt(mu[2]))


@given(st.floats(0.01, 0.5), st.floats(0.01, 0.5))
def test_mode_count_monotone_in_k(k1, k2):
    lo, hi = sorted([k1, k2])
    assert propagating_mode_count(200.0, lo) <= propagating_mode_count(200.0, hi)


def test_mode_count_matches_list():
    for k in np.linspace(0.01, 0.3, 50):
        mu = vertical_modes(200.0, 200)
        assert propagating_mode_count(200.0, k) == int(np.sum(mu < k * k))


def test_default_truncation_formula(model):
    # first dropped term: exp(-Im(beta_{M+1}) * dx) <= exp(-40)
    n = default_mode_count(model.depth, K_C, 10.0)
    decay = math.sqrt((9 * math.pi / 200) ** 2 - K_C ** 2)
    assert n == 8 + math.ceil(40 / (decay * 10.0))


def _basis(model, n_modes=None, offset=10.0, k=K_C):
    return ModalBasis.build(model, k, n_modes, min_offset=offset)


def test_greens_function_vanishes_on_boundaries(model):
    rng = np.random.default_rng(1)
    basis = _basis(model)
    for _ in range(50):
        x = rng.uniform(0, 100)
        xs, ys = rng.uniform(200, 300), rng.uniform(1, 199)
        for y in (0.0, model.depth):
            assert abs(greens_function(model, basis, (x, y), (xs, ys))) < 1e-12
            assert abs(greens_function(model, basis, (xs, ys), (x, y))) < 1e-12


def test_reciprocity(model):
    rng = np.random.default_rng(2)
    basis = _basis(model)
    for _ in range(100):
        a = (rng.uniform(0, 50), rng.uniform(0, 200))
        b = (rng.uniform(60, 600), rng.uniform(0, 200))
        assert abs(greens_function(model, basis, a, b) - greens_function(model, basis, b, a)) < 1e-12


def test_single_mode_modulus_independent_of_range(model):
    basis = ModalBasis.build(model, K_C, 1)
    vals = [abs(greens_function(model, basis, (x, 70.0), (0.0, 120.0))) for x in (3.0, 50.0, 517.0, 2000.0)]
    assert np.ptp(vals) < 1e-14 * max(vals)


@pytest.mark.parametrize("offset", [10.0, 37.0, 500.0])
def test_truncation_doubling(model, offset):
    basis = _basis(model, offset=offset)
    doubled = ModalBasis.build(model, K_C, 2 * basis.n_modes)
    rng = np.random.default_rng(3)
    for _ in range(20):
        y, ys = rng.uniform(1, 199, 2)
        g1 = greens_function(model, basis, (offset, y), (0.0, ys))
        g2 = greens_function(model, doubled, (offset, y), (0.0, ys))
        assert abs(g2 - g1) / abs(g2) < 1e-6


def test_matches_direct_series(model):
    basis = ModalBasis.build(model, K_C, 30)
    x, xs = (523.0, 73.0), (0.0, 41.0)
    total = 0j
    for n in range(1, 31):
        mu = (n * math.pi / 200) ** 2
        b = math.sqrt(K_C ** 2 - mu) if mu < K_C ** 2 else 1j * math.sqrt(mu - K_C ** 2)
        total += np.exp(1j * b * 523.0) / b * math.sin(math.sqrt(mu) * 73.0) * math.sin(math.sqrt(mu) * 41.0)
    assert greens_function(model, basis, x, xs) == pytest.approx(math.sqrt(2 / 200) * total, abs=1e-13)


def test_singular_evaluation(model):
    basis = _basis(model)
    with pytest.raises(SingularEvaluationError):
        greens_function(model, basis, (5.0, 50.0), (5.0, 50.0), explicit_truncation=True)
    with pytest.raises(SingularEvaluationError):
        greens_function(model, basis, (5.0, 50.0), (5.0, 80.0))
    # zero offset off the source point is fine once truncation is explicit
    assert np.isfinite(greens_function(model, basis, (5.0, 50.0), (5.0, 80.0), explicit_truncation=True))


def test_greens_matrix_matches_scalar(model):
    basis = _basis(model, offset=3.0)
    pts = np.array([[10.0, 20.0], [40.0, 150.0], [7.0, 199.0]])
    src = np.array([[100.0, 33.0], [3.0, 180.0]])
    mat = greens_matrix(model, basis, pts, src)
    for i, p in enumerate(pts):
        for j, s in enumerate(src):
            assert abs(mat[i, j] - greens_function(model, basis, p, s)) < 1e-13


PAPER_SOURCES = [(507, 135), (519, 116), (523, 73), (546, 80), (511, 10)]


def test_synthesize_response_basics(model, freqs, array):
    empty = synthesize_response(model, freqs, array, SourceConfig())
    assert empty.shape == (81, 33) and not empty.any()
    one = synthesize_response(model, freqs, array, SourceConfig([(520.0, 60.0)]))
    two = synthesize_response(model, freqs, array, SourceConfig([(520.0, 60.0), (520.0, 60.0)]))
    assert np.array_equal(two, 2 * one)
    five = synthesize_response(model, freqs, array, SourceConfig(PAPER_SOURCES))
    assert np.all(np.isfinite(five)) and np.abs(five).max() > 0


def test_superposition(model, freqs, array):
    a = [(507.0, 135.0), (519.0, 116.0), (523.0, 73.0)]
    b = [(546.0, 80.0)]
    kw = dict(n_modes=12)
    whole = synthesize_response(model, freqs, array, SourceConfig(a + b), **kw)
    parts = (synthesize_response(model, freqs, array, SourceConfig(a), **kw)
             + synthesize_response(model, freqs, array, SourceConfig(b), **kw))
    assert np.array_equal(whole, parts)
    c = [(511.0, 10.0), (560.0, 44.0)]
    whole = synthesize_response(model, freqs, array, SourceConfig(a + c), **kw)
    parts = (synthesize_response(model, freqs, array, SourceConfig(a), **kw)
             + synthesize_response(model, freqs, array, SourceConfig(c), **kw))
    np.testing.assert_allclose(whole, parts, rtol=0, atol=1e-13 * np.abs(whole).max())


def test_source_on_array_line_rejected(model, freqs, array):
    with pytest.raises(SingularEvaluationError):
        synthesize_response(model, freqs, array, SourceConfig([(0.0, 50.0)]))


def test_frequency_grid():
    g = FrequencyGrid()
    f = g.frequencies
    assert len(f) == 33 and np.all(np.diff(f) > 0)
    assert f[0] == pytest.approx(32.0625 * 0.8) and f[-1] == pytest.approx(32.0625 * 1.2)
    assert f[16] == pytest.approx(32.0625)
    assert FrequencyGrid(n_freq=1).frequencies.tolist() == [32.0625]
    with pytest.raises(ValueError):
        FrequencyGrid(n_freq=0)


def test_array_geometry(model):
    a = ArrayGeometry.uniform(200.0, 2.5)
    assert a.n_receivers == 81
    assert a.receiver_y[0] == 0.0 and a.receiver_y[-1] == 200.0
    with pytest.raises(ValueError):
        ArrayGeometry((-1.0, 3.0)).validate(model)


def test_model_validation():
    with pytest.raises(ValueError):
        WaveguideModel(c0=0)
    with pytest.raises(ValueError):
        WaveguideModel(depth=-5)
    with pytest.raises(ValueError):
        WaveguideModel(boundary="neumann")


@settings(max_examples=30, deadline=None)
@given(st.floats(1, 199), st.floats(1, 199), st.floats(20, 700))
def test_reciprocity_property(y1, y2, dx):
    model = WaveguideModel()
    basis = ModalBasis.build(model, K_C, min_offset=20.0)
    a, b = (0.0, y1), (dx, y2)
    assert abs(greens_function(model, basis, a, b) - greens_function(model, basis, b, a)) < 1e-12
