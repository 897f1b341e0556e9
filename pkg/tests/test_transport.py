import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kactransport.poisson import JumpSkeleton, count_at, simulate_master
from kactransport.rng import RandomStream, SeedSpec
from kactransport.transport import (ThetaSet, ThetaValidationError, check_angle, evaluate_transport,
                                    family_ensemble, max_walk_index, reduce_angle, sample_path_grid,
                                    simulate_family)


def stream(i=0):
    return RandomStream(SeedSpec(21, i))


def loop_oracle(skeleton, theta, eps, sign_G, T):
    """Scalar re-derivation: integrate the step integrand segment by segment."""
    r_end = 2 * T / eps**2
    z, n, npr, prev = 0j, 0, 0, 0.0
    out = [0j]
    for r, a, b in zip(skeleton.event_times, skeleton.jumps_N, skeleton.jumps_Nprime):
        if r >= r_end:
            break
        z += sign_G * eps * (-1) ** npr * cmath.exp(1j * theta * n) * (r - prev)
        out.append(z)
        n, npr, prev = n + int(a), npr + int(b), r
    z += sign_G * eps * (-1) ** npr * cmath.exp(1j * theta * n) * (r_end - prev)
    out.append(z)
    return np.array(out)


@pytest.mark.parametrize("bad", [0.0, math.pi, 2 * math.pi, 3.1415926, 4 * math.pi, -math.pi, 1e-7])
def test_excluded_angles(bad):
    with pytest.raises(ThetaValidationError):
        check_angle(bad, 0.1)


def test_angle_reduction():
    assert math.isclose(check_angle(7.0, 0.1), 7.0 - 2 * math.pi)
    assert math.isclose(reduce_angle(-1.0), 2 * math.pi - 1.0)
    with pytest.raises(ThetaValidationError):
        reduce_angle(float("nan"))


def test_vanishing_cosine_rejected():
    # cos(m pi/2) = 0 for odd m
    with pytest.raises(ThetaValidationError):
        check_angle(math.pi / 2, 0.5)
    assert max_walk_index(0.5) == 17


def test_theta_set_pair_rules():
    ts = ThetaSet.of([2.0, 7.0], 0.02)
    assert len(ts) == 2 and ts.raw == (2.0, 7.0)
    with pytest.raises(ThetaValidationError):
        ThetaSet.of([2.0, 2.0 + 2 * math.pi], 0.1)
    with pytest.raises(ThetaValidationError):
        ThetaSet.of([2.0, 2 * math.pi - 2.0], 0.1)
    with pytest.raises(ThetaValidationError):
        ThetaSet.of([], 0.1)
    with pytest.raises(ValueError):
        ThetaSet.of([2.0], 0.0)


def test_matches_scalar_oracle():
    eps, T = 0.2, 1.0
    sk = simulate_master(2 * T / eps**2, stream(1))
    for theta, g in ((2.0, 1), (7.0, -1)):
        path = evaluate_transport(sk, theta, eps, g, T)
        ref = loop_oracle(sk, theta, eps, g, T)
        assert np.allclose(path.values, ref, rtol=0, atol=1e-12)
        assert path.breakpoints[-1] == T


def test_matches_riemann_sum():
    eps, T, theta = 0.5, 1.0, 2.0
    sk = simulate_master(2 * T / eps**2, stream(2))
    path = evaluate_transport(sk, theta, eps, 1, T)
    r = np.linspace(0, 2 * T / eps**2, 400_001)
    mid = 0.5 * (r[1:] + r[:-1])
    f = np.array([(-1) ** count_at(sk, "Nprime", x) * np.exp(1j * theta * count_at(sk, "N", x)) for x in mid])
    z1 = eps * np.sum(f * np.diff(r))
    assert abs(z1 - path.values[-1]) < 1e-3


def test_grid_sampling():
    eps = 0.1
    sk = simulate_master(2 / eps**2, stream(3))
    path = evaluate_transport(sk, 2.0, eps, 1, 1.0)
    assert sample_path_grid(path, [0.0])[0] == 0
    assert np.array_equal(sample_path_grid(path, path.breakpoints), path.values)
    with pytest.raises(ValueError):
        path.at([1.5])
    with pytest.raises(ValueError):
        path.at([-0.1])


def test_slopes_have_modulus_two_over_eps():
    eps = 0.05
    sk = simulate_master(2 / eps**2, stream(4))
    p = evaluate_transport(sk, 7.0, eps, -1, 1.0)
    assert np.allclose(np.abs(p.slopes), 2 / eps)
    assert np.allclose(np.diff(p.values), p.slopes * np.diff(p.breakpoints), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32), eps=st.sampled_from([0.05, 0.1, 0.3]),
       theta=st.floats(0.1, 3.0))
def test_lipschitz_property(seed, eps, theta):
    if abs(theta - math.pi / 2) < 1e-3:
        return
    s = RandomStream(SeedSpec(seed, 0))
    sk = simulate_master(2 / eps**2, s)
    p = evaluate_transport(sk, theta, eps, 1, 1.0, validate=False)
    t = np.sort(s.uniform(200))
    z = p.at(t)
    dt = np.diff(t)
    keep = dt > 1e-12
    ratio = np.abs(np.diff(z))[keep] / dt[keep]
    assert ratio.max() <= 2 / eps + 1e-9


def test_short_skeleton_rejected():
    sk = simulate_master(10.0, stream(5))
    with pytest.raises(ValueError):
        evaluate_transport(sk, 2.0, 0.1, 1, 1.0)
    with pytest.raises(ValueError):
        evaluate_transport(sk, 2.0, 0.1, 0, 0.01)


def test_family_shares_skeleton(tmp_path):
    ts = ThetaSet.of([2.0, 7.0], 0.1)
    a, b = simulate_family(ts, 1.0, stream(6))
    assert np.array_equal(a.breakpoints, b.breakpoints)
    assert a.sign_G == b.sign_G
    a.to_csv(tmp_path / "p.csv", grid=[0, 0.5, 1])
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "t,re,im" and len(lines) == 4


def test_family_ensemble_independent_of_jobs():
    ts = ThetaSet.of([2.0], 0.2)
    a = family_ensemble(ts, 1.0, [0.5, 1.0], 600, 3, jobs=1)
    b = family_ensemble(ts, 1.0, [0.5, 1.0], 600, 3, jobs=2)
    assert a.shape == (600, 1, 2)
    assert np.array_equal(a, b)


def test_empty_skeleton_path_is_a_line():
    sk = JumpSkeleton(200.0, np.empty(0), np.empty(0, bool), np.empty(0, bool))
    p = evaluate_transport(sk, 2.0, 0.1, 1, 1.0)
    assert np.isclose(p.values[-1], 2 / 0.1)
