"""Ensemble tests for the weak limit, the technical lemmas and the coupling rate.

Every function returns :class:`~kactransport.report.Entry` records; Monte
Carlo tolerances are 3 standard errors estimated from the same ensemble.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, stats

from kactransport.coupling import build_grid_coupling, decomposition_diagnostics
from kactransport.ensemble import parallel_map
from kactransport.poisson import increment_ensemble
from kactransport.report import FAIL, PASS, Entry, RateReport, RateRow
from kactransport.rng import RandomStream, SeedSpec, stream_id
from kactransport.transport import ThetaSet

MIN_SAMPLES = 1000
QUANTILES = (0.5, 0.9, 0.99)


# --- mergeable accumulator -----------------------------------------------------

@dataclass
class Moments:
    """Count, mean vector and co-moment matrix of d-dimensional samples.

    ``merge`` uses the pairwise update of Chan et al., so partial results
    from different workers combine in any grouping.
    """

    dim: int
    n: int = 0
    mean: np.ndarray = field(default=None)
    comoment: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.mean is None:
            self.mean = np.zeros(self.dim)
        if self.comoment is None:
            self.comoment = np.zeros((self.dim, self.dim))

    @classmethod
    def of(cls, samples) -> "Moments":
        x = np.asarray(samples, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        mu = x.mean(axis=0) if x.shape[0] else np.zeros(x.shape[1])
        d = x - mu
        return cls(x.shape[1], x.shape[0], mu, d.T @ d)

    def merge(self, other: "Moments") -> "Moments":
        if other.dim != self.dim:
            raise ValueError("dimension mismatch")
        if other.n == 0:
            return Moments(self.dim, self.n, self.mean.copy(), self.comoment.copy())
        if self.n == 0:
            return Moments(other.dim, other.n, other.mean.copy(), other.comoment.copy())
        n = self.n + other.n
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.n / n)
        com = self.comoment + other.comoment + np.outer(delta, delta) * (self.n * other.n / n)
        return Moments(self.dim, n, mean, com)

    def covariance(self, ddof: int = 1) -> np.ndarray:
        return self.comoment / (self.n - ddof)

    @property
    def variance(self) -> np.ndarray:
        return np.diag(self.covariance())


def merge_all(parts) -> Moments:
    parts = list(parts)
    out = parts[0]
    for p in parts[1:]:
        out = out.merge(p)
    return out


def _mean_se(samples):
    x = np.asarray(samples, dtype=float)
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def _require_samples(n, what="samples"):
    if n < MIN_SAMPLES:
        raise ValueError(f"at least {MIN_SAMPLES} {what} are required, got {n}")


# --- increment decay ------------------------------------------------------------------

def lemma31_check(theta, delta_list, n: int, seed: int, start: float = 1.0,
                  jobs: int = 1) -> list[Entry]:
    """Monte Carlo of E[(-1)^{dN'} exp(i theta dN)] on ``(start, start + delta]`` against exp(-2 delta)."""
    deltas = [float(d) for d in delta_list]
    if any(not (math.isfinite(d) and d >= 0) for d in deltas):
        raise ValueError("deltas must be non-negative")
    thetas = np.atleast_1d(np.asarray(theta, dtype=float))
    positive = sorted({d for d in deltas if d > 0})
    inc = None
    if positive:
        intervals = [(start, start + d) for d in positive]
        inc = increment_ensemble(intervals, n, seed, "lemma31", jobs)
    entries = []
    for th in thetas:
        for d in deltas:
            label = f"lemma31_theta={th:g}_delta={d:g}"
            if d == 0:
                # empty increment: the expectation is exactly 1
                entries.append(Entry(label + "_re", 1.0, 1.0, 0.0, "abs", n, seed, detail="empty increment"))
                entries.append(Entry(label + "_im", 0.0, 0.0, 0.0, "abs", n, seed, detail="empty increment"))
                continue
            col = positive.index(d)
            dn = inc["N"][:, col]
            sign = 1.0 - 2.0 * (inc["Nprime"][:, col] & 1)
            re, se_re = _mean_se(sign * np.cos(th * dn))
            im, se_im = _mean_se(sign * np.sin(th * dn))
            entries.append(Entry(label + "_re", re, math.exp(-2 * d), 3 * se_re, "abs", n, seed,
                                 standard_error=se_re))
            entries.append(Entry(label + "_im", im, 0.0, 3 * se_im, "abs", n, seed,
                                 standard_error=se_im))
    return entries


# --- transport covariance ---------------------------------------------------------------

def lemma32a_closed_form(epsilon: float, s: float, t: float) -> float:
    d = t - s
    return d + (epsilon**2 / 4.0) * math.expm1(-4.0 * d / epsilon**2)


def lemma32a_quadrature(epsilon: float, s: float, t: float, epsrel: float = 1e-10) -> float:
    """eps^2 times the integral of exp(-2(x2 - x1)) over 2s/eps^2 <= x1 <= x2 <= 2t/eps^2."""
    lo, hi = 2.0 * s / epsilon**2, 2.0 * t / epsilon**2
    val, _ = integrate.dblquad(lambda x1, x2: math.exp(-2.0 * (x2 - x1)), lo, hi,
                               lambda x2: lo, lambda x2: x2, epsabs=0.0, epsrel=epsrel)
    return epsilon**2 * val


def lemma32a_check(epsilon: float, s: float, t: float, rel_tol: float = 1e-8) -> Entry:
    if not 0 <= s < t:
        raise ValueError(f"need 0 <= s < t, got s={s}, t={t}")
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    quad = lemma32a_quadrature(epsilon, s, t)
    closed = lemma32a_closed_form(epsilon, s, t)
    return Entry(f"lemma32a_eps={epsilon:g}_s={s:g}_t={t:g}", quad, closed, rel_tol * abs(closed),
                 "abs", 0, None, detail="dblquad epsrel=1e-10")


# --- covariance, fourth moments, normality ----------------------------------------

def covariance_test(values, grid, pairs, label: str = "", seed=None,
                    variance_tolerance: float | None = None) -> list[Entry]:
    """Covariances of x and y against min(s, t) and of x against y against 0.

    ``values`` has shape ``(n, len(grid))`` (complex, one angle). Tolerances
    are 3 SE of the product samples; ``variance_tolerance`` replaces that for
    the diagonal cells s == t of Var x and Var y.
    """
    z = np.asarray(values)
    n = z.shape[0]
    _require_samples(n, "paths")
    grid = [float(g) for g in grid]
    idx = {g: i for i, g in enumerate(grid)}
    x, y = z.real, z.imag
    # covariance matrix of (x, y) at all grid times, merged over blocks
    mom = merge_all(Moments.of(np.hstack([x[a:a + 500], y[a:a + 500]])) for a in range(0, n, 500))
    cov = mom.covariance()
    g = len(grid)
    xc, yc = x - mom.mean[:g], y - mom.mean[g:]
    entries = []
    for s, t in pairs:
        i, j = idx[float(s)], idx[float(t)]
        target = min(s, t)
        for part, a, b, off in (("xx", xc, xc, (0, 0)), ("yy", yc, yc, (g, g))):
            est = float(cov[off[0] + i, off[1] + j])
            se = float(np.std(a[:, i] * b[:, j], ddof=1) / math.sqrt(n))
            tol = variance_tolerance if (s == t and variance_tolerance is not None) else 3 * se
            entries.append(Entry(f"cov_{part}{label}_({s:g},{t:g})", est, target, tol, "abs", n, seed,
                                 standard_error=se))
        for si, ti in ((i, j), (j, i)) if i != j else ((i, j),):
            est = float(cov[si, g + ti])
            se = float(np.std(xc[:, si] * yc[:, ti], ddof=1) / math.sqrt(n))
            entries.append(Entry(f"cov_xy{label}_({grid[si]:g},{grid[ti]:g})", est, 0.0, 3 * se,
                                 "abs", n, seed, standard_error=se))
    return entries


def fourth_moment_bound(s: float, t: float, theta: float) -> float:
    d = t - s
    return 12.0 * d**2 + 48.0 * d**2 / (1.0 - math.cos(2.0 * theta))


def fourth_moment_check(values, s: float, t: float, theta: float, label: str = "",
                        seed=None) -> Entry:
    """E(dx)^4 + E(dy)^4 over (s, t] against the tightness bound, plus 3 SE."""
    z = np.asarray(values)
    _require_samples(z.shape[0], "paths")
    dz = z[:, 1] - z[:, 0]
    est, se = _mean_se(dz.real**4 + dz.imag**4)
    bound = fourth_moment_bound(s, t, theta)
    return Entry(f"fourth_moment{label}_({s:g},{t:g})", est, bound, 3 * se, "le", z.shape[0], seed,
                 standard_error=se)


def ks_critical(n: int, alpha: float = 0.01) -> float:
    """Asymptotic Kolmogorov critical value for the one-sample KS distance."""
    return float(stats.kstwobign.ppf(1 - alpha) / math.sqrt(n))


def _ks_normal(samples):
    res = stats.kstest(samples, "norm", method="asymp")
    return float(res.statistic), float(res.pvalue)


def normality_test(samples, alpha: float = 0.01, label: str = "", seed=None,
                   controls: bool = True) -> list[Entry]:
    """KS distance of ``samples`` to N(0, 1) against the 1% critical value.

    With ``controls`` it adds a power control (samples scaled by 1.5 must
    fail) and a shuffled-halves check (both halves give the same verdict).
    """
    x = np.asarray(samples, dtype=float)
    n = x.size
    _require_samples(n)
    d, p = _ks_normal(x)
    crit = ks_critical(n, alpha)
    entries = [Entry(f"normality{label}", d, crit, 0.0, "le", n, seed, p_value=p,
                     detail=f"alpha={alpha}")]
    if controls:
        d15, p15 = _ks_normal(1.5 * x)
        entries.append(Entry(f"normality{label}_power_control_scaled_1.5", float(d15 > crit), None,
                             None, "true", n, seed, p_value=p15,
                             detail=f"distance={d15:.6g} must exceed {crit:.6g}"))
        rng = RandomStream(SeedSpec(0 if seed is None else seed, stream_id("normality-shuffle")))
        perm = np.argsort(rng.uniform(n), kind="stable")
        halves = x[perm[: n // 2]], x[perm[n // 2:]]
        verdicts = [_ks_normal(h)[0] <= ks_critical(h.size, alpha) for h in halves]
        entries.append(Entry(f"normality{label}_shuffled_halves_agree", float(verdicts[0] == verdicts[1]),
                             None, None, "true", n, seed,
                             detail=f"half verdicts {['pass' if v else 'fail' for v in verdicts]}"))
    return entries


def correlation_tolerance(n: int) -> float:
    """3/sqrt(n) rounded up to two decimals."""
    return math.ceil(round(100 * 3.0 / math.sqrt(n), 9)) / 100.0


def independence_family_test(values, thetas, epsilon: float, grid, times=(0.5, 1.0),
                             seed=None) -> list[Entry]:
    """Pairwise correlations among x^{theta_i}(t), y^{theta_j}(t) at each of ``times``.

    ``values`` has shape ``(n, n_theta, len(grid))``.
    """
    ts = ThetaSet.of(thetas, epsilon)
    z = np.asarray(values)
    n = z.shape[0]
    _require_samples(n, "paths")
    tol = correlation_tolerance(n)
    grid = [float(g) for g in grid]
    entries = []
    for t in times:
        col = grid.index(float(t))
        names, cols = [], []
        for k, th in enumerate(ts.raw):
            names += [f"x[{th:g}]", f"y[{th:g}]"]
            cols += [z[:, k, col].real, z[:, k, col].imag]
        corr = np.corrcoef(np.vstack(cols))
        for a in range(len(cols)):
            for b in range(a + 1, len(cols)):
                entries.append(Entry(f"independence_t={t:g}_{names[a]}~{names[b]}", float(corr[a, b]),
                                     0.0, tol, "abs", n, seed))
    return entries


# --- exponential-test self-calibration -----------------------------------------

def ks_self_calibration(trials: int, n: int, seed: int, alpha: float = 0.01,
                        band: float = 0.005) -> Entry:
    """Rejection rate of the exponential KS test fed true exponential draws."""
    from kactransport.coupling import exponential_ks

    fails = 0
    for i in range(trials):
        rng = RandomStream(SeedSpec(seed, stream_id("ks-calibration", i)))
        _, p = exponential_ks(rng.exponential(3.0, n), 3.0)
        fails += p < alpha
    rate = fails / trials
    return Entry("ks_self_calibration_rejection_rate", rate, alpha, band, "abs", trials, seed,
                 detail=f"{trials} trials of n={n}")


# --- rate experiment --------------------------------------------------------------

def rate_normalizer(epsilon: float) -> float:
    return math.sqrt(epsilon) * math.log(1.0 / epsilon) ** 2.5


DIAGNOSTICS = ("L1", "L21", "L22", "L3", "maxLambdaDev", "maxGammaDev")


def _rate_block(task):
    seed, eps, theta, horizon_T, grid_step, reps = task
    rows = []
    for rep in reps:
        stream = RandomStream(SeedSpec(seed, stream_id(f"rate-eps={eps!r}", rep)))
        r = build_grid_coupling(eps, theta, horizon_T, grid_step, stream)
        d = decomposition_diagnostics(r)
        rows.append({"eps": eps, "rep": rep, "sup_error": r.sup_error,
                     **{k: d[k] for k in DIAGNOSTICS}})
    return rows


def rate_ensemble(epsilon: float, reps: int, seed: int, theta: float = 2.0, horizon_T: float = 1.0,
                  grid_step: float | None = None, jobs: int = 1, block: int = 10) -> list[dict]:
    """One grid-backend coupling per replication; rep ``i`` uses its own derived stream."""
    tasks = [(seed, float(epsilon), theta, horizon_T, grid_step, list(range(a, min(a + block, reps))))
             for a in range(0, reps, block)]
    return [row for part in parallel_map(_rate_block, tasks, jobs) for row in part]


def _quantiles(x) -> dict[str, float]:
    q = np.quantile(np.asarray(x, dtype=float), QUANTILES)
    return {f"{p:g}": float(v) for p, v in zip(QUANTILES, q)}


def rate_experiment(eps_list, reps: int, seed: int, theta: float = 2.0, horizon_T: float = 1.0,
                    grid_step: float | None = None, slack: float = 0.1, jobs: int = 1) -> RateReport:
    """Sup-error quantiles and normalized ratios along decreasing epsilon."""
    eps_list = [float(e) for e in eps_list]
    if reps < 100:
        raise ValueError(f"reps must be at least 100, got {reps}")
    if not eps_list or any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be non-empty and strictly decreasing")
    rows, records = [], []
    for eps in eps_list:
        recs = rate_ensemble(eps, reps, seed, theta, horizon_T, grid_step, jobs)
        records += recs
        sup = np.array([r["sup_error"] for r in recs])
        medians = {k: float(np.median([r[k] for r in recs])) for k in ("sup_error",) + DIAGNOSTICS}
        rows.append(RateRow(eps, reps, _quantiles(sup), _quantiles(sup / rate_normalizer(eps)), medians))
    q99 = [r.normalized_ratio_quantiles["0.99"] for r in rows]
    trend = all(b <= a * (1 + slack) for a, b in zip(q99, q99[1:]))
    return RateReport(rows, PASS if trend else FAIL, slack, seed, records)


def _eps_tag(rows) -> str:
    return ",".join(f"{r.epsilon:g}" for r in rows)


def rate_entries(report: RateReport, trend_eps=None, median_eps=None) -> list[Entry]:
    """Trend verdict entries over chosen epsilon subsets (default: all rows)."""
    by_eps = {r.epsilon: r for r in report.rows}
    trend_rows = [by_eps[e] for e in (trend_eps or list(by_eps))]
    median_rows = [by_eps[e] for e in (median_eps or list(by_eps))]
    n = sum(r.reps for r in report.rows)
    entries = []

    q99 = [r.normalized_ratio_quantiles["0.99"] for r in trend_rows]
    worst = max((b / a for a, b in zip(q99, q99[1:])), default=0.0)
    entries.append(Entry(f"rate_q99_normalized_nonincreasing_eps={_eps_tag(trend_rows)}", worst, 1.0,
                         report.slack, "le", n, report.seed,
                         detail="max successive ratio of 0.99 quantiles " + str([round(v, 6) for v in q99])))
    for key in ("sup_error", "L1", "L21", "L22", "L3"):
        meds = [r.medians[key] for r in median_rows]
        ok = all(b < a for a, b in zip(meds, meds[1:]))
        entries.append(Entry(f"rate_median_{key}_decreasing_eps={_eps_tag(median_rows)}", float(ok), None,
                             None, "true", n, report.seed, detail=str([round(v, 6) for v in meds])))
    return entries
