import numpy as np
import pytest
from scipy.integrate import quad

from iphfit.errors import DomainError, InvalidRate, SizeLimit
from iphfit.matexp import expm
from iphfit.model import Grid, IPHModel, validate
from iphfit.ph_approx import (
    PHApproximation,
    approx_density,
    choose_m,
    erlang_weights,
    initial_vector,
    materialize_subintensity,
    min_valid_n,
    q_factor,
)
from oracles import erlang_cdf_series, random_model_arrays


def exp_model(rate=1.0):
    return IPHModel([1.0], Grid.from_interior([]), [[[-rate]]])


def two_rate_model():
    return IPHModel([1.0], Grid.from_interior([1.0]), [[[-1.0]], [[-2.0]]])


def test_erlang_weights_single_interval():
    np.testing.assert_array_equal(erlang_weights(Grid.from_interior([]), 3, 2.0), [1.0])


def test_erlang_weights_sum_to_one():
    g = Grid.from_interior([0.4, 1.0, 2.5])
    for l in (1, 2, 17, 400):
        w = erlang_weights(g, l, 150.0)
        assert np.all(w >= 0)
        np.testing.assert_allclose(w.sum(), 1.0, atol=1e-12)


def test_erlang_weights_closed_form():
    w = erlang_weights(Grid.from_interior([1.0]), 2, 2.0)
    np.testing.assert_allclose(w[0], 0.5939941503, atol=1e-10)  # 1 - 3e^{-2}
    np.testing.assert_allclose(w[0], erlang_cdf_series(1.0, 2, 2.0), rtol=1e-12)


def test_erlang_weights_match_series_oracle():
    # the direct series cancels catastrophically near 0, hence the atol
    g = Grid.from_interior([0.5, 1.3])
    for l in (1, 4, 25):
        w = erlang_weights(g, l, 6.0)
        cdf = [erlang_cdf_series(t, l, 6.0) for t in (0.5, 1.3)]
        np.testing.assert_allclose(w, [cdf[0], cdf[1] - cdf[0], 1.0 - cdf[1]],
                                   rtol=1e-8, atol=1e-13)


def test_q_factor_homogeneous_is_uniformization():
    m = exp_model()
    np.testing.assert_allclose(q_factor(m, 5, 2.0), [[0.5]], atol=1e-15)
    T = np.array([[[-2.0, 1.0], [0.5, -1.5]]])
    m2 = IPHModel([0.7, 0.3], Grid.from_interior([]), T)
    np.testing.assert_allclose(q_factor(m2, 1, 4.0), np.eye(2) + T[0] / 4.0, atol=1e-14)


def test_q_factor_row_sums():
    rng = np.random.default_rng(0)
    pi, interior, T = random_model_arrays(rng, 3, 3)
    m = IPHModel(pi, Grid.from_interior(interior), T)
    n = min_valid_n(m) * 1.5
    for l in (1, 3, 10):
        Q = q_factor(m, l, n)
        assert np.all(Q >= -1e-14)
        assert np.all(Q.sum(axis=1) <= 1 + 1e-12)


def test_q_factor_rejects_small_rate():
    with pytest.raises(InvalidRate):
        q_factor(exp_model(5.0), 1, 4.0)


def test_min_valid_n():
    assert min_valid_n(exp_model(2.0)) == 2.0
    assert min_valid_n(two_rate_model()) == 2.0


def test_choose_m():
    assert choose_m(10.0, 1.55) == 16
    with pytest.raises(DomainError):
        choose_m(10.0, 0.0)


def test_approx_density_exponential_target():
    val = approx_density(exp_model(), 100.0, 800, 1.0)
    assert abs(val - np.exp(-1.0)) < 2e-2


def test_mixture_coefficients_form_a_distribution():
    m = two_rate_model()
    approx = PHApproximation(m, 50.0, choose_m(50.0, 6.0))
    c = approx.mixture_coefficients
    assert np.all(c >= -1e-12)
    np.testing.assert_allclose(c.sum(), 1.0, atol=1e-9)


def test_approx_density_normalizes():
    m = two_rate_model()
    n = 80.0
    mm = choose_m(n, 8.0)
    approx = PHApproximation(m, n, mm)
    mass = quad(approx.density, 1e-9, 12.0, limit=300)[0]
    residual = 1.0 - approx.mixture_coefficients.sum()
    assert abs(mass + max(residual, 0.0) - 1.0) < 1e-4


def test_homogeneous_case_is_exact_up_to_truncation():
    # single interval: the stage kernels coincide, so the mixture is the
    # classical uniformization identity; with enough stages the density
    # is reproduced to roundoff, and truncation error falls monotonically
    # as stages are added at fixed rate
    T = np.array([[[-2.0, 1.0], [0.5, -1.5]]])
    m = IPHModel([0.7, 0.3], Grid.from_interior([]), T)
    xs = np.linspace(0.1, 2.0, 50)
    truth = m.density(xs)
    n = 100.0
    errs = [
        np.max(np.abs(PHApproximation(m, n, stages).density(xs) - truth))
        for stages in (200, 250, 300)
    ]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-10


def test_piecewise_error_decreases_along_rate_ladder():
    # continuous density (shared exit vector), negligible mass past the
    # evaluation window: the stage-averaging bias shrinks as n grows
    ex = np.array([2.0, 3.0])
    off = [np.array([[0.0, 1.5], [0.5, 0.0]]), np.array([[0.0, 4.0], [2.5, 0.0]])]
    T = []
    for M in off:
        Tk = M.copy()
        np.fill_diagonal(Tk, -(M.sum(axis=1) + ex))
        T.append(Tk)
    m = IPHModel([0.6, 0.4], Grid.from_interior([0.7]), np.stack(T))
    assert m.density_gap(1) < 1e-12
    xs = np.linspace(0.1, 4.0, 60)
    truth = m.density(xs)
    errs = []
    for n in (200.0, 400.0, 800.0):
        approx = PHApproximation(m, n, choose_m(n, 4.0))
        errs.append(np.max(np.abs(approx.density(xs) - truth)))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] <= 1e-2


def test_materialized_trivial_case():
    out = materialize_subintensity(exp_model(), 1.0, 2)
    np.testing.assert_array_equal(out, [[-1.0, 0.0], [0.0, -1.0]])


def test_materialized_density_matches_structured():
    m = two_rate_model()
    n, stages = 20.0, 60
    big = materialize_subintensity(m, n, stages)
    alpha = initial_vector(m, stages)
    exit_big = -big @ np.ones(stages)
    approx = PHApproximation(m, n, stages)
    for t in (0.2, 0.9, 1.7, 3.0):
        direct = float(alpha @ expm(big, t) @ exit_big)
        np.testing.assert_allclose(approx.density(t), direct, atol=1e-8)


def test_materialized_passes_subintensity_checks():
    m = two_rate_model()
    big = materialize_subintensity(m, 10.0, 12)
    holder = IPHModel(initial_vector(m, 12), Grid.from_interior([]), big[None, :, :])
    assert validate(holder) == []


def test_materialize_size_guard():
    with pytest.raises(SizeLimit):
        materialize_subintensity(exp_model(), 1000.0, 200_001)
