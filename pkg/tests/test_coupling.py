import math

import numpy as np
import pytest
from scipy import integrate

from kactransport.coupling import (ConfigurationError, build_grid_coupling, build_skeleton_coupling,
                                   change_times, cosine_sum_closed_form, decomposition_diagnostics,
                                   exit_time_cdf, exit_time_quantile, generate_walk_inputs, index_cap,
                                   level_blocks, rho_increment_test, sample_exit_time, step_budget)
from kactransport.rng import RandomStream, SeedSpec
from kactransport.suites import identity_errors
from kactransport.transport import ThetaValidationError


def stream(i=0):
    return RandomStream(SeedSpec(31, i))


# --- exit time ----------------------------------------------------------------

def test_series_agree_on_overlap():
    t = np.linspace(0.05, 4.0, 200)
    a = exit_time_cdf(t, method="reflection")
    b = exit_time_cdf(t, method="eigen")
    assert np.max(np.abs(a - b)) < 1e-12


def test_cdf_shape():
    assert exit_time_cdf(0.0) == 0.0
    assert exit_time_cdf(1e-4) < 1e-300 or exit_time_cdf(1e-4) == 0.0
    assert abs(exit_time_cdf(50.0) - 1.0) < 1e-12
    t = np.linspace(0.0, 6.0, 1000)
    assert np.all(np.diff(exit_time_cdf(t)) >= -1e-15)


@pytest.mark.parametrize("lam", [0.3, 1.0, 4.0])
def test_laplace_transform_oracle(lam):
    # E exp(-lam tau) = 1 / cosh(sqrt(2 lam)) for the exit time of (-1, 1)
    val, _ = integrate.quad(lambda t: lam * math.exp(-lam * t) * exit_time_cdf(t), 0, np.inf, limit=200)
    assert abs(val - 1 / math.cosh(math.sqrt(2 * lam))) < 1e-9


def test_moments_from_survival():
    mean, _ = integrate.quad(lambda t: 1 - exit_time_cdf(t), 0, 60, limit=200)
    second, _ = integrate.quad(lambda t: 2 * t * (1 - exit_time_cdf(t)), 0, 60, limit=200)
    assert abs(mean - 1.0) < 1e-9
    assert abs(second - 5.0 / 3.0) < 1e-9


def test_quantile_inverts_cdf():
    u = np.array([1e-6, 0.01, 0.3, 0.5, 0.9, 0.999999])
    t = exit_time_quantile(u)
    assert np.max(np.abs(exit_time_cdf(t) - u)) <= 1e-10
    with pytest.raises(ValueError):
        exit_time_quantile([1.0])


def test_exit_sampling_scaling():
    tau, side = sample_exit_time(1.0, stream(1), size=50_000)
    assert abs(tau.mean() - 1.0) < 3 * tau.std() / math.sqrt(tau.size)
    assert abs(side.mean()) < 3 / math.sqrt(side.size)
    t2, _ = sample_exit_time(3.0, stream(1), size=50_000)
    assert np.allclose(t2, 9.0 * tau)
    with pytest.raises(ValueError):
        sample_exit_time(0.0, stream(1))
    scalar = sample_exit_time(2.0, stream(2))
    assert isinstance(scalar[0], float) and scalar[1] in (1, -1)


# --- walk and realizations ------------------------------------------------------

def test_walk_inputs():
    w = generate_walk_inputs(0.1, 2.0, 1000, stream(3), b_start=5)
    assert w.b[0] == 5 and w.b.size == 1001
    assert set(np.unique(np.diff(w.b))) <= {0, 1}
    assert np.allclose(w.xi, np.abs(np.cos(w.b[:-1] * 2.0)) * w.e)
    with pytest.raises(ValueError):
        generate_walk_inputs(0.1, 2.0, 0, stream(3))


def test_index_cap_guards_round_down():
    assert index_cap(0.1) == 400
    assert index_cap(0.02) == 10_000
    assert step_budget(0.1, 1.0) == 440


@pytest.mark.parametrize("builder", ["skeleton", "grid"])
def test_construction_identities_and_stop_rule(builder):
    eps, T = 0.1, 1.0
    if builder == "skeleton":
        r = build_skeleton_coupling(eps, 2.0, T, stream(4))
    else:
        r = build_grid_coupling(eps, 2.0, T, None, stream(4))
    errs = identity_errors(r)
    assert max(errs.values()) < 1e-12
    M = r.steps
    assert r.Gamma[M] > T and M > index_cap(eps)
    assert r.Gamma[M - 1] <= T or M - 1 <= index_cap(eps)
    assert np.allclose(np.abs(r.slopes), np.abs(r.beta))
    assert np.all(r.sigma >= 0) and np.all(r.gamma >= 0)
    assert r.value_at(0.0) == 0.0
    assert np.isclose(r.value_at(r.Gamma[7]), r.skeleton_x[7])
    with pytest.raises(ValueError):
        r.value_at(r.Gamma[-1] + 1)
    assert set(r.record()) >= {"epsilon", "theta", "backend", "steps", "sup_error"}


def test_grid_backend_outputs():
    r = build_grid_coupling(0.2, 2.0, 1.0, None, stream(5))
    assert r.sup_error is not None and 0 <= r.sup_error < 10
    assert r.max_overshoot <= r.max_grid_increment
    with pytest.raises(ConfigurationError):
        build_grid_coupling(0.1, 2.0, 1.0, 0.1**2 / 20, stream(5))


def test_skeleton_validates_theta():
    with pytest.raises(ThetaValidationError):
        build_skeleton_coupling(0.3, 3.1415926, 1.0, stream(6))


def test_same_stream_same_realization():
    a = build_skeleton_coupling(0.2, 2.0, 1.0, stream(7))
    b = build_skeleton_coupling(0.2, 2.0, 1.0, stream(7))
    assert np.array_equal(a.Lambda, b.Lambda) and np.array_equal(a.k, b.k)


# --- diagnostics ------------------------------------------------------------------

def test_level_blocks_by_hand():
    b = np.array([0, 0, 1, 1, 1, 2, 3, 3])
    T, S = level_blocks(b, 7)
    assert T.tolist() == [2, 3, 1] and S.tolist() == [2, 5, 6]


def test_block_decomposition_of_cosine_sum():
    eps, theta = 0.1, 2.0
    r = build_skeleton_coupling(eps, theta, 1.0, stream(8))
    m_cap = index_cap(eps)
    T, S = level_blocks(r.b, m_cap)
    direct = np.cumsum(np.cos(2 * r.b[:m_cap] * theta))
    for m in range(1, m_cap + 1):
        bm = int(r.b[m])
        full = np.sum(T[:bm] * np.cos(2 * np.arange(bm) * theta))
        z = m - (S[bm - 1] if bm > 0 else 0)
        assert 0 <= z <= np.sum(r.b[:m_cap + 1] == bm)
        assert abs(direct[m - 1] - (full + z * math.cos(2 * bm * theta))) < 1e-9


def test_diagnostic_bounds():
    eps, theta = 0.1, 2.0
    r = build_skeleton_coupling(eps, theta, 1.0, stream(9))
    d = decomposition_diagnostics(r)
    m_cap = d["m_cap"]
    cos_sum = np.max(np.abs(np.cumsum(np.cos(2 * r.b[:m_cap] * theta))))
    # triangle inequality of the decomposition
    assert d["maxLambdaDev"] <= d["L1"] + eps**2 / 4 * cos_sum + 1e-12
    assert eps**2 / 4 * cos_sum <= d["L21"] + d["L22"] + d["L3"] + 1e-12
    for key in ("L1", "L21", "L22", "L3", "maxLambdaDev", "maxGammaDev"):
        assert d[key] >= 0


def test_cosine_closed_form():
    theta = 7.0
    n = np.arange(0, 3000)
    direct = np.cumsum(np.cos(2 * n * theta))
    assert np.max(np.abs(direct - cosine_sum_closed_form(theta, n))) < 1e-10


def test_change_times():
    r = build_skeleton_coupling(0.1, 2.0, 1.0, stream(10))
    rho, tau = change_times(r)
    assert rho.size == int(np.sum(np.diff(r.b[: r.steps]) != 0))
    assert np.all(np.diff(rho) > 0) and np.all(np.diff(tau) > 0)


def test_rho_test_skips_when_short():
    r = build_skeleton_coupling(0.3, 2.0, 1.0, stream(11))
    entries = rho_increment_test(r, seed=1)
    assert all(e.verdict == "skip" and e.detail == "insufficient data" for e in entries)


def test_gamma_is_exponential():
    from scipy import stats
    r = build_skeleton_coupling(0.1, 2.0, 10.0, stream(12))
    assert stats.kstest(r.gamma, "expon", args=(0, 0.1**2 / 4)).pvalue > 1e-3
