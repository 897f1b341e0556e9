"""Strong coupling of the real transport part with a Brownian path.

A fair Bernoulli walk ``b`` selects slopes ``beta_m = (2/eps) cos(b_{m-1} theta)``.
The Brownian path is stopped successively when it has moved by
``xi_m = |cos(b_{m-1} theta)| * e_m`` (``e_m`` exponential with rate 2/eps)
from its previous stopping point, at cumulative time ``Lambda_m``; the
transport path reaches the same value at ``Gamma_m`` with ``gamma_m = xi_m / |beta_m|``.

Two backends:

* skeleton: exit times are drawn exactly from the law of the first exit of
  Brownian motion from a symmetric interval; no path is materialised.
* grid: a Brownian path is simulated on a uniform grid and the exits are
  detected by crossing, which also gives the sup-norm error against the
  piecewise-linear transport path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import special, stats

from kactransport._kernels import compensated_cumsum, first_exits
from kactransport.report import Entry, skipped
from kactransport.rng import RandomStream
from kactransport.transport import check_angle, check_epsilon

SERIES_TOL = 1e-12
PROB_TOL = 1e-10
_SERIES_SWITCH = 1.0  # below: reflection (erfc) series, above: eigenfunction series


class ConfigurationError(ValueError):
    pass


# --- exit time of Brownian motion from (-1, 1) --------------------------

def _cdf_small_t(t, tol):
    # P(tau <= t) = 2 sum_k (-1)^k erfc((2k+1) / sqrt(2t))
    root = np.sqrt(2.0 * t)
    total = np.zeros_like(t)
    k = 0
    while True:
        term = 2.0 * special.erfc((2 * k + 1) / root)
        total += term if k % 2 == 0 else -term
        if term.size == 0 or np.max(term) < tol:
            return total
        k += 1


def _survival_large_t(t, tol):
    # P(tau > t) = (4/pi) sum_k (-1)^k / (2k+1) exp(-(2k+1)^2 pi^2 t / 8)
    total = np.zeros_like(t)
    k = 0
    while True:
        j = 2 * k + 1
        term = (4.0 / math.pi) / j * np.exp(-(j * j) * math.pi**2 * t / 8.0)
        total += term if k % 2 == 0 else -term
        if term.size == 0 or np.max(term) < tol:
            return total
        k += 1


def exit_time_cdf(t, tol: float = SERIES_TOL, method: str = "auto"):
    """CDF of the first exit time of standard Brownian motion from (-1, 1).

    ``method`` selects the alternating series: ``"reflection"``,
    ``"eigen"`` or ``"auto"`` (reflection for small t, eigen otherwise).
    """
    t = np.asarray(t, dtype=float)
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    out = np.zeros_like(t)
    pos = t > 0
    if method == "reflection":
        small = pos
    elif method == "eigen":
        small = np.zeros_like(pos)
    else:
        small = pos & (t < _SERIES_SWITCH)
    big = pos & ~small
    if small.any():
        out[small] = _cdf_small_t(t[small], tol)
    if big.any():
        out[big] = 1.0 - _survival_large_t(t[big], tol)
    out = np.clip(out, 0.0, 1.0)
    return out[0] if scalar else out


def exit_time_quantile(u, tol: float = SERIES_TOL, prob_tol: float = PROB_TOL):
    """Invert :func:`exit_time_cdf` by bisection until ``|F(t) - u| <= prob_tol``."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if np.any((u < 0) | (u >= 1)):
        raise ValueError("quantile levels must lie in [0, 1)")
    lo = np.zeros_like(u)
    hi = np.ones_like(u)
    while True:
        low = exit_time_cdf(hi, tol) < u
        if not low.any():
            break
        lo[low] = hi[low]
        hi[low] *= 2.0
    mid = 0.5 * (lo + hi)
    active = np.ones(u.shape, dtype=bool)
    for _ in range(200):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        m = 0.5 * (lo[idx] + hi[idx])
        f = exit_time_cdf(m, tol)
        mid[idx] = m
        done = (np.abs(f - u[idx]) <= prob_tol) | (hi[idx] - lo[idx] <= 4 * np.spacing(hi[idx]))
        below = f < u[idx]
        lo[idx[below]] = m[below]
        hi[idx[~below]] = m[~below]
        active[idx[done]] = False
    return mid


def sample_exit_time(a, stream: RandomStream, tol: float = SERIES_TOL, size=None):
    """Draw ``(tau, side)``: first exit time from ``(-a, a)`` and the exit side (+1/-1).

    For a symmetric interval the side is a fair coin independent of the time,
    and ``tau_a`` has the law of ``a**2 * tau_1``.
    """
    a = np.asarray(a, dtype=float)
    if np.any(~(a > 0)) or np.any(~np.isfinite(a)):
        raise ValueError("exit level must be positive and finite")
    if not tol > 0:
        raise ValueError("series tolerance must be positive")
    shape = size if size is not None else a.shape
    u = stream.uniform(shape)
    tau1 = exit_time_quantile(np.ravel(u), tol).reshape(np.shape(u))
    side = stream.signs(shape)
    tau = a**2 * tau1
    if np.ndim(tau) == 0:
        return float(tau), int(side)
    return tau, side


# --- walk inputs ------------------------------------------------------------

@dataclass(frozen=True)
class WalkInputs:
    eta: np.ndarray      # fair bits eta_1..eta_m
    b: np.ndarray        # b_0..b_m
    e: np.ndarray        # exponential(2/eps) variables e_1..e_m
    xi: np.ndarray       # |cos(b_{j-1} theta)| e_j


def generate_walk_inputs(epsilon: float, theta: float, m_max: int, stream: RandomStream,
                         b_start: int = 0) -> WalkInputs:
    """Bernoulli walk and exit levels for ``m_max`` steps (walk starts at ``b_start``)."""
    check_epsilon(epsilon)
    if m_max < 1:
        raise ValueError(f"m_max must be at least 1, got {m_max}")
    eta = stream.bernoulli(0.5, m_max).astype(np.int64)
    e = stream.exponential(2.0 / epsilon, m_max)
    b = np.concatenate([[b_start], b_start + np.cumsum(eta)])
    xi = np.abs(np.cos(b[:-1] * theta)) * e
    return WalkInputs(eta, b, e, xi)


def step_budget(epsilon: float, horizon_T: float) -> int:
    """Index range ``m <= 4/eps^2`` plus a 10% margin, scaled to the horizon."""
    return math.ceil(1.1 * 4.0 * max(horizon_T, 1.0) / epsilon**2)


# --- realisations ---------------------------------------------------------------

@dataclass(frozen=True)
class CouplingRealization:
    epsilon: float
    theta: float
    horizon_T: float
    backend: str
    b: np.ndarray            # b_0..b_M
    e: np.ndarray            # exponential inputs e_1..e_M
    xi: np.ndarray           # exit levels xi_1..xi_M
    k: np.ndarray            # exit sides k_1..k_M
    sigma: np.ndarray        # Brownian stopping increments sigma_1..sigma_M
    gamma: np.ndarray        # transport clock increments gamma_1..gamma_M
    Lambda: np.ndarray       # Lambda_0..Lambda_M
    Gamma: np.ndarray        # Gamma_0..Gamma_M
    skeleton_x: np.ndarray   # x(Lambda_0)..x(Lambda_M)
    transport_x: np.ndarray  # x_eps(Gamma_0)..x_eps(Gamma_M), integrated from the slopes
    beta: np.ndarray         # beta_1..beta_M
    sup_error: float | None = None
    grid_step: float | None = None
    max_grid_increment: float | None = None
    max_overshoot: float | None = None

    @property
    def steps(self) -> int:
        return self.xi.size

    @property
    def slopes(self) -> np.ndarray:
        return self.k * np.abs(self.beta)

    def value_at(self, t):
        """Piecewise-linear transport path through ``(Gamma_m, x(Lambda_m))``."""
        t = np.asarray(t, dtype=float)
        if np.any(t < 0) or np.any(t > self.Gamma[-1]):
            raise ValueError("time outside the realised range")
        return np.interp(t, self.Gamma, self.skeleton_x)

    def record(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "theta": self.theta,
            "horizon_T": self.horizon_T,
            "backend": self.backend,
            "steps": self.steps,
            "Lambda_end": float(self.Lambda[-1]),
            "Gamma_end": float(self.Gamma[-1]),
            "sup_error": self.sup_error,
            "grid_step": self.grid_step,
        }


def index_cap(epsilon: float) -> int:
    """Largest integer m with m <= 4/eps^2 (guarded against float round-down)."""
    return math.floor(4.0 / epsilon**2 + 1e-9)


def _stop_index(Gamma: np.ndarray, horizon_T: float, epsilon: float) -> int | None:
    """Smallest m with Gamma_m > T and m > 4/eps^2, or None if not reached yet."""
    m_min = index_cap(epsilon) + 1
    over = np.flatnonzero(Gamma > horizon_T)
    if over.size == 0:
        return None
    m = max(int(over[0]), m_min)
    return m if m < Gamma.size else None


def _assemble(epsilon, theta, horizon_T, backend, walk_b, e, xi, k, sigma, dx,
              Lambda=None, **extra):
    beta = (2.0 / epsilon) * np.cos(walk_b[:-1] * theta)
    gamma = np.abs(dx) / np.abs(beta)
    if Lambda is None:
        Lambda = compensated_cumsum(sigma)
    Gamma = compensated_cumsum(gamma)
    skeleton_x = compensated_cumsum(dx)
    transport_x = compensated_cumsum(k * np.abs(beta) * gamma)
    return CouplingRealization(
        float(epsilon), float(theta), float(horizon_T), backend, walk_b, e, xi,
        k.astype(np.int8), sigma, gamma, Lambda, Gamma, skeleton_x, transport_x, beta, **extra)


def _validate(epsilon, theta, horizon_T):
    check_epsilon(epsilon)
    th = check_angle(theta, epsilon)
    if not (math.isfinite(horizon_T) and horizon_T >= 0):
        raise ValueError(f"horizon_T must be finite and non-negative, got {horizon_T}")
    return th


def build_skeleton_coupling(epsilon: float, theta: float, horizon_T: float,
                            stream: RandomStream, tol: float = SERIES_TOL) -> CouplingRealization:
    """Exact skeleton of the coupling: exit times sampled from the exit-time law."""
    th = _validate(epsilon, theta, horizon_T)
    chunk = step_budget(epsilon, horizon_T)
    bs, es, xis, ks, sigmas = [np.array([0], dtype=np.int64)], [], [], [], []
    while True:
        w = generate_walk_inputs(epsilon, th, chunk, stream, b_start=int(bs[-1][-1]))
        tau1, side = sample_exit_time(1.0, stream, tol, size=chunk)
        bs.append(w.b[1:])
        es.append(w.e)
        xis.append(w.xi)
        ks.append(side)
        sigmas.append(w.xi**2 * tau1)
        xi_all = np.concatenate(xis)
        b_all = np.concatenate(bs)
        beta_abs = (2.0 / epsilon) * np.abs(np.cos(b_all[:-1] * th))
        Gamma = compensated_cumsum(xi_all / beta_abs)
        stop = _stop_index(Gamma, horizon_T, epsilon)
        if stop is not None:
            break
    xi = xi_all[:stop]
    k = np.concatenate(ks)[:stop]
    return _assemble(epsilon, th, horizon_T, "skeleton", b_all[: stop + 1],
                     np.concatenate(es)[:stop], xi, k, np.concatenate(sigmas)[:stop], k * xi)


def default_grid_step(epsilon: float) -> float:
    return epsilon**2 / 400.0


def build_grid_coupling(epsilon: float, theta: float, horizon_T: float,
                        grid_step: float | None, stream: RandomStream) -> CouplingRealization:
    """Coupling against a gridded Brownian path, with the sup-norm error on ``[0, T]``.

    The Brownian path is the linear interpolant of Gaussian grid values;
    corridor exits are located by grid crossing and interpolated within the
    crossing cell, so the construction identities hold exactly for that path.
    """
    th = _validate(epsilon, theta, horizon_T)
    h = default_grid_step(epsilon) if grid_step is None else float(grid_step)
    if not (h > 0 and math.isfinite(h)):
        raise ConfigurationError(f"grid_step must be positive, got {grid_step}")
    per_excursion = (epsilon**2 / 4.0) / h
    if per_excursion < 10:
        raise ConfigurationError(
            f"grid_step={h} too coarse: {per_excursion:.3g} expected grid points per excursion (< 10)")

    chunk = step_budget(epsilon, horizon_T)
    path_chunk = int(math.ceil((1.25 * max(horizon_T, 1.0) + 10 * epsilon**2) / h))
    scale = math.sqrt(h)

    walk_b = np.array([0], dtype=np.int64)
    es, xis = [], []
    path = np.zeros(1)
    out = {name: np.empty(0) for name in ("time", "value", "overshoot")}
    next_index = np.empty(0, dtype=np.int64)
    done = 0
    while True:
        if done == next_index.size:
            w = generate_walk_inputs(epsilon, th, chunk, stream, b_start=int(walk_b[-1]))
            walk_b = np.concatenate([walk_b, w.b[1:]])
            es.append(w.e)
            xis.append(w.xi)
            for name in out:
                out[name] = np.concatenate([out[name], np.empty(chunk)])
            next_index = np.concatenate([next_index, np.empty(chunk, dtype=np.int64)])
        xi_all = np.concatenate(xis)
        done = first_exits(path, h, xi_all, done, out["time"], out["value"], next_index,
                           out["overshoot"])
        if done < xi_all.size:
            incr = stream.normal(path_chunk, scale)
            path = np.concatenate([path, path[-1] + compensated_cumsum(incr)[1:]])
            continue
        beta_abs = (2.0 / epsilon) * np.abs(np.cos(walk_b[:done] * th))
        Gamma = compensated_cumsum(xi_all / beta_abs)
        stop = _stop_index(Gamma, horizon_T, epsilon)
        if stop is not None:
            break

    n_grid = int(math.floor(horizon_T / h + 1e-9)) + 1
    if path.size < n_grid:
        extra = stream.normal(n_grid - path.size, scale)
        path = np.concatenate([path, path[-1] + compensated_cumsum(extra)[1:]])

    exit_t = np.concatenate([[0.0], out["time"][:stop]])
    exit_v = np.concatenate([[0.0], out["value"][:stop]])
    dx = np.diff(exit_v)
    k = np.where(dx >= 0, 1, -1)
    last = int(next_index[stop - 1])
    real = _assemble(
        epsilon, th, horizon_T, "grid", walk_b[: stop + 1], np.concatenate(es)[:stop],
        xi_all[:stop], k, np.diff(exit_t), k * xi_all[:stop], Lambda=exit_t, grid_step=h,
        max_grid_increment=float(np.max(np.abs(np.diff(path[: last + 1])))) if last > 0 else 0.0,
        max_overshoot=float(np.max(out["overshoot"][:stop])),
    )
    t = np.arange(n_grid) * h
    err = np.abs(real.value_at(np.minimum(t, horizon_T)) - path[:n_grid])
    return replace(real, sup_error=float(err.max()))


# --- diagnostics ------------------------------------------------------------------

def level_blocks(b: np.ndarray, m: int):
    """Holding times of the walk over its first ``m`` steps.

    Returns ``(T, S)``: lengths ``T_k`` of the complete blocks (levels
    ``k < b_m``) and their cumulative ends ``S_k = T_0 + ... + T_k``.
    """
    levels = b[:m]
    n_complete = int(b[m])
    T = np.bincount(levels, minlength=n_complete + 1)[:n_complete].astype(np.int64)
    return T, np.cumsum(T)


def decomposition_diagnostics(r: CouplingRealization) -> dict:
    """Clock deviations and the L1 / L21 / L22 / L3 terms over ``1 <= m <= 4/eps^2``."""
    if r.steps == 0:
        raise ValueError("empty realization")
    eps2 = r.epsilon**2
    m_cap = min(index_cap(r.epsilon), r.steps)
    m = np.arange(1, m_cap + 1)
    th = r.theta

    lam_dev = float(np.max(np.abs(r.Lambda[1:m_cap + 1] - m * eps2 / 4.0)))
    gam_dev = float(np.max(np.abs(r.Gamma[1:m_cap + 1] - m * eps2 / 4.0)))

    alpha = (eps2 / 2.0) * np.cos(r.b[:m_cap] * th) ** 2
    L1 = float(np.max(np.abs(compensated_cumsum(r.sigma[:m_cap] - alpha)[1:])))

    T, S = level_blocks(r.b, m_cap)
    if T.size:
        kk = np.arange(T.size)
        c2 = np.cos(2.0 * kk * th)
        L21 = float(np.max(np.abs(compensated_cumsum((T - 2) * c2)[1:]))) * eps2 / 4.0
        L22 = float(np.max(np.abs(compensated_cumsum(c2)[1:]))) * eps2 / 2.0
    else:
        L21 = L22 = 0.0

    bm = r.b[1:m_cap + 1]
    S_prev = np.where(bm > 0, np.concatenate([[0], S])[bm], 0)
    Z = m - S_prev
    L3 = float(np.max(np.abs(Z * np.cos(2.0 * bm * th)))) * eps2 / 4.0

    return {
        "m_cap": int(m_cap),
        "maxLambdaDev": lam_dev,
        "maxGammaDev": gam_dev,
        "L1": L1,
        "L21": L21,
        "L22": L22,
        "L3": L3,
        "blocks": T,
    }


def cosine_sum_closed_form(theta: float, n):
    """``sum_{k=0}^n cos(2 k theta)`` by the telescoped closed form."""
    n = np.asarray(n, dtype=float)
    c2 = math.cos(2.0 * theta)
    return 0.5 * (1.0 + (np.cos(2.0 * n * theta) - np.cos(2.0 * (n + 1) * theta)) / (1.0 - c2))


def change_times(r: CouplingRealization):
    """Times at which |slope| changes (walk steps) and at which the slope sign flips."""
    j = np.arange(1, r.steps)
    rho = r.Gamma[j[np.diff(r.b[:r.steps]) != 0]]
    tau = r.Gamma[j[r.k[1:] != r.k[:-1]]]
    return rho, tau


def exponential_ks(samples, rate: float):
    """Asymptotic one-sample KS test against exponential(rate)."""
    res = stats.kstest(samples, "expon", args=(0.0, 1.0 / rate), method="asymp")
    return float(res.statistic), float(res.pvalue)


def rho_increment_test(r: CouplingRealization, seed=None, alpha: float = 0.01,
                       min_changes: int = 100) -> list[Entry]:
    """Increments of |slope|-change times and sign-change times against exponential(2/eps^2)."""
    rate = 2.0 / r.epsilon**2
    rho, tau = change_times(r)
    entries = []
    for label, times in (("rho", rho), ("tau", tau)):
        name = f"coupling_{label}_increments_exponential"
        if times.size < min_changes:
            entries.append(skipped(name, "insufficient data", times.size, seed))
            continue
        inc = np.diff(np.concatenate([[0.0], times]))
        d, p = exponential_ks(inc, rate)
        entries.append(Entry(name, d, None, alpha, "p_ge", inc.size, seed, p_value=p,
                             detail=f"rate={rate}"))
        if label == "rho":
            rho_hat = float(np.corrcoef(inc[:-1], inc[1:])[0, 1])
            entries.append(Entry("coupling_rho_increments_lag1_correlation", rho_hat, 0.0,
                                 4.0 / math.sqrt(inc.size - 1), "abs", inc.size - 1, seed))
    return entries
