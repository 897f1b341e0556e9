"""Named verification suites assembled from the stats, coupling and appendix checks.

Each suite is a pure function of ``(config, seed)``; ``jobs`` only changes
how the derived streams are spread over processes.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import stats as sps

from kactransport import appendix, coupling, poisson
from kactransport import stats as st
from kactransport._kernels import compensated_cumsum
from kactransport.ensemble import parallel_map
from kactransport.report import Entry
from kactransport.rng import RandomStream, SeedSpec, stream_id
from kactransport.transport import ThetaSet, ThetaValidationError, family_ensemble

DEFAULTS = {
    "lemma31": {"thetas": [2.0, 7.0], "deltas": [0.0, 0.1, 0.5, 1.0], "n": 100_000, "start": 1.0},
    "lemma32": {"eps_list": [0.5, 0.1], "s": 0.0, "t": 1.0},
    "family": {"epsilon": 0.02, "thetas": [2.0, 7.0], "paths": 5000, "horizon_T": 1.0,
               "grid": [0.25, 0.5, 0.75, 1.0]},
    "covariance": {"pairs": [[1.0, 1.0], [0.25, 0.75]], "variance_tolerance": 0.06,
                   "fourth_epsilon": 0.05, "fourth_theta": 2.0, "fourth_interval": [0.25, 0.75]},
    "normality": {"alpha": 0.01},
    "independence": {"times": [0.5, 1.0]},
    "coupling": {"epsilon": 0.1, "theta": 2.0, "realizations": 100, "grid_realizations": 20,
                 "law_horizon": 26.0, "law_n": 10_000, "blocks": 100_000, "exit_n": 100_000,
                 "kolmogorov_realizations": 10_000, "kolmogorov_alpha": 0.1,
                 "calibration_trials": 2000, "calibration_n": 1000},
    "rate": {"eps_list": [0.2, 0.1, 0.05, 0.02], "reps": 200, "theta": 2.0, "horizon_T": 1.0,
             "grid_step": None, "slack": 0.1, "median_eps": [0.2, 0.1, 0.05]},
    "poisson": {"n": 100_000, "first": [0.0, 1.0], "second": [1.5, 2.5]},
    "appendix": {"checks": ["lemmaF", "serie", "thinning"]},
}

SUITES = ("lemma31", "lemma32", "covariance", "normality", "independence", "coupling", "rate",
          "poisson", "appendix")


def merged_config(overrides: dict | None = None) -> dict:
    """Defaults with per-section overrides (unknown sections or keys are rejected)."""
    cfg = {k: dict(v) for k, v in DEFAULTS.items()}
    for section, values in (overrides or {}).items():
        if section not in cfg:
            raise KeyError(f"unknown config section {section!r}")
        for key, value in values.items():
            if key not in cfg[section]:
                raise KeyError(f"unknown config key {section}.{key}")
            cfg[section][key] = value
    return cfg


_FAMILY_CACHE: dict = {}


def _family(cfg: dict, seed: int, jobs: int):
    f = cfg["family"]
    key = (seed, f["epsilon"], tuple(f["thetas"]), f["paths"], f["horizon_T"], tuple(f["grid"]))
    if key not in _FAMILY_CACHE:
        thetas = ThetaSet.of(f["thetas"], f["epsilon"])
        _FAMILY_CACHE.clear()
        _FAMILY_CACHE[key] = family_ensemble(thetas, f["horizon_T"], f["grid"], f["paths"], seed,
                                             "family", jobs)
    return _FAMILY_CACHE[key]


# --- suites -----------------------------------------------------------------------

def suite_lemma31(cfg, seed, jobs):
    c = cfg["lemma31"]
    return st.lemma31_check(c["thetas"], c["deltas"], c["n"], seed, c["start"], jobs)


def suite_lemma32(cfg, seed, jobs):
    c = cfg["lemma32"]
    return [st.lemma32a_check(e, c["s"], c["t"]) for e in c["eps_list"]]


def suite_covariance(cfg, seed, jobs):
    f, c = cfg["family"], cfg["covariance"]
    values = _family(cfg, seed, jobs)
    entries = []
    for k, th in enumerate(f["thetas"]):
        entries += st.covariance_test(values[:, k], f["grid"], [tuple(p) for p in c["pairs"]],
                                      label=f"[theta={th:g},eps={f['epsilon']:g}]", seed=seed,
                                      variance_tolerance=c["variance_tolerance"])
    s, t = c["fourth_interval"]
    thetas = ThetaSet.of([c["fourth_theta"]], c["fourth_epsilon"])
    incr = family_ensemble(thetas, t, [s, t], f["paths"], seed, "fourth-moment", jobs)[:, 0]
    entries.append(st.fourth_moment_check(incr, s, t, c["fourth_theta"],
                                          label=f"[theta={c['fourth_theta']:g},eps={c['fourth_epsilon']:g}]",
                                          seed=seed))
    return entries


def suite_normality(cfg, seed, jobs):
    f = cfg["family"]
    values = _family(cfg, seed, jobs)
    col = [float(g) for g in f["grid"]].index(float(f["horizon_T"]))
    return st.normality_test(values[:, 0, col].real, cfg["normality"]["alpha"],
                             label=f"[x(1),theta={f['thetas'][0]:g},eps={f['epsilon']:g}]", seed=seed)


def suite_independence(cfg, seed, jobs):
    f = cfg["family"]
    values = _family(cfg, seed, jobs)
    entries = st.independence_family_test(values, f["thetas"], f["epsilon"], f["grid"],
                                          cfg["independence"]["times"], seed)
    th = float(f["thetas"][0])
    try:
        ThetaSet.of([th, 2 * math.pi - th], f["epsilon"])
        rejected = False
    except ThetaValidationError:
        rejected = True
    entries.append(Entry("independence_rejects_theta_pair_summing_to_2pi", float(rejected), None, None,
                         "true", 0, seed))
    return entries


def _skeleton_task(task):
    seed, tag, eps, theta, horizon_T, i = task
    return coupling.build_skeleton_coupling(
        eps, theta, horizon_T, RandomStream(SeedSpec(seed, stream_id(tag, i))))


def _grid_task(task):
    seed, tag, eps, theta, horizon_T, i = task
    return coupling.build_grid_coupling(
        eps, theta, horizon_T, None, RandomStream(SeedSpec(seed, stream_id(tag, i))))


def identity_errors(r: coupling.CouplingRealization) -> dict:
    """Construction identities, each as max error relative to the path's magnitude."""
    scale = max(float(np.max(np.abs(r.skeleton_x))), float(np.max(r.xi)))
    dx = np.diff(r.skeleton_x)
    return {
        "x_eps(Gamma)=x(Lambda)": float(np.max(np.abs(r.transport_x - r.skeleton_x))) / scale,
        "gamma|beta|=|dx|": float(np.max(np.abs(r.gamma * np.abs(r.beta) - np.abs(dx)))) / scale,
        "|dx|=xi": float(np.max(np.abs(np.abs(dx) - r.xi))) / scale,
    }


def _kolmogorov_task(task):
    seed, eps, theta, start, stop = task
    m = coupling.index_cap(eps)
    target = np.arange(1, m + 1) * eps**2 / 4.0
    out = np.empty(stop - start)
    for row, i in enumerate(range(start, stop)):
        w = coupling.generate_walk_inputs(eps, theta, m, RandomStream(SeedSpec(seed, stream_id("kolmogorov", i))))
        gamma = w.xi / ((2.0 / eps) * np.abs(np.cos(w.b[:-1] * theta)))
        out[row] = np.max(np.abs(np.cumsum(gamma) - target))
    return out


def _geometric_chisquare(T: np.ndarray):
    jmax = int(T.max())
    observed = np.bincount(T, minlength=jmax + 1)[1:].astype(float)
    probs = 0.5 ** np.arange(1, jmax + 1)
    probs[-1] = 0.5 ** (jmax - 1)  # last cell: P(T >= jmax)
    observed, probs = poisson.pool_tail(observed, probs)
    chi2, p = sps.chisquare(observed, probs * T.size)
    return float(chi2), float(p)


def suite_coupling(cfg, seed, jobs):
    c = cfg["coupling"]
    eps, theta = c["epsilon"], c["theta"]
    entries = []

    # construction identities over independent realizations of both backends
    for backend, func, count in (("skeleton", _skeleton_task, c["realizations"]),
                                 ("grid", _grid_task, c["grid_realizations"])):
        tasks = [(seed, f"coupling-{backend}", eps, theta, 1.0, i) for i in range(count)]
        reals = parallel_map(func, tasks, jobs)
        worst = {}
        for r in reals:
            for key, v in identity_errors(r).items():
                worst[key] = max(worst.get(key, 0.0), v)
        for key, v in worst.items():
            entries.append(Entry(f"coupling_identity_{backend}_{key}_eps={eps:g}", v, 0.0, 1e-12, "le",
                                 count, seed, detail="max over realizations, relative to path scale"))
        if backend == "skeleton":
            sigma = np.concatenate([r.sigma for r in reals])
            alpha = np.concatenate([(eps**2 / 2) * np.cos(r.b[:-1] * r.theta) ** 2 for r in reals])
            mean, se = st._mean_se(sigma)
            entries.append(Entry(f"coupling_mean_sigma_eps={eps:g}", mean, eps**2 / 4, 3 * se, "abs",
                                 sigma.size, seed, standard_error=se))
            mean, se = st._mean_se(sigma / alpha)
            entries.append(Entry("coupling_sigma_over_conditional_mean", mean, 1.0, 3 * se, "abs",
                                 sigma.size, seed, standard_error=se))
        else:
            k = np.concatenate([r.k for r in reals]).astype(float)
            mean, se = st._mean_se(k)
            entries.append(Entry("coupling_grid_exit_side_fair", mean, 0.0, 3 * se, "abs", k.size, seed,
                                 standard_error=se))
            over = max(r.max_overshoot for r in reals)
            incr = min(r.max_grid_increment for r in reals)
            entries.append(Entry("coupling_grid_overshoot_within_one_increment", over, incr, 0.0, "le",
                                 count, seed))

    # laws of gamma and of the change-time increments, from one long realization
    long = _skeleton_task((seed, "coupling-law", eps, theta, c["law_horizon"], 0))
    g = long.gamma[: c["law_n"]]
    d, p = coupling.exponential_ks(g, 4.0 / eps**2)
    entries.append(Entry(f"coupling_gamma_exponential_rate=4/eps^2", d, None, 0.01, "p_ge", g.size, seed,
                         p_value=p))
    entries += coupling.rho_increment_test(long, seed)

    # geometric holding times of the Bernoulli walk
    w = coupling.generate_walk_inputs(eps, theta, 2 * c["blocks"] + 20 * int(math.sqrt(c["blocks"])),
                                      RandomStream(SeedSpec(seed, stream_id("coupling-blocks"))))
    T, _ = coupling.level_blocks(w.b, w.eta.size)
    T = T[: c["blocks"]]
    chi2, p = _geometric_chisquare(T)
    entries.append(Entry("coupling_blocks_geometric_half", chi2, None, 0.01, "p_ge", T.size, seed,
                         p_value=p))

    n = np.arange(coupling.index_cap(eps) + 1)
    direct = compensated_cumsum(np.cos(2.0 * n * theta))[1:]
    err = float(np.max(np.abs(direct - coupling.cosine_sum_closed_form(theta, n))))
    entries.append(Entry("coupling_cosine_sum_closed_form", err, 0.0, 1e-10, "le", n.size, None))

    # exit time of (-1, 1) and its scaling
    for a in (1.0, 2.0):
        tau, side = coupling.sample_exit_time(
            a, RandomStream(SeedSpec(seed, stream_id("coupling-exit", int(a)))), size=c["exit_n"])
        mean, se = st._mean_se(tau)
        entries.append(Entry(f"exit_time_mean_a={a:g}", mean, a**2, 3 * se, "abs", tau.size, seed,
                             standard_error=se))
        if a == 1.0:
            m2, se2 = st._mean_se(tau**2)
            entries.append(Entry("exit_time_second_moment_a=1", m2, 5.0 / 3.0, 3 * se2, "abs", tau.size,
                                 seed, standard_error=se2))
            ms, ses = st._mean_se(side)
            entries.append(Entry("exit_side_fair_a=1", ms, 0.0, 3 * ses, "abs", side.size, seed,
                                 standard_error=ses))

    # Kolmogorov-inequality sanity check on the transport clock
    nk, alpha = c["kolmogorov_realizations"], c["kolmogorov_alpha"]
    tasks = [(seed, eps, theta, a, min(a + 1000, nk)) for a in range(0, nk, 1000)]
    dev = np.concatenate(parallel_map(_kolmogorov_task, tasks, jobs))
    prob = float(np.mean(dev >= alpha))
    entries.append(Entry(f"coupling_kolmogorov_bound_alpha={alpha:g}", prob, 1.5 * eps**2 / (4 * alpha**2),
                         0.0, "le", nk, seed))

    entries.append(st.ks_self_calibration(c["calibration_trials"], c["calibration_n"], seed))
    return entries


_RATE_CACHE: dict = {}


def rate_report(cfg, seed, jobs):
    c = cfg["rate"]
    key = (seed, tuple(c["eps_list"]), c["reps"], c["theta"], c["horizon_T"], c["grid_step"], c["slack"])
    if key not in _RATE_CACHE:
        _RATE_CACHE.clear()
        _RATE_CACHE[key] = st.rate_experiment(c["eps_list"], c["reps"], seed, c["theta"], c["horizon_T"],
                                              c["grid_step"], c["slack"], jobs)
    return _RATE_CACHE[key]


def suite_rate(cfg, seed, jobs):
    c = cfg["rate"]
    report = rate_report(cfg, seed, jobs)
    median_eps = [e for e in c["median_eps"] if e in c["eps_list"]] or None
    return st.rate_entries(report, median_eps=median_eps)


def suite_poisson(cfg, seed, jobs):
    c = cfg["poisson"]
    first, second = tuple(c["first"]), tuple(c["second"])
    entries = [
        poisson.disjoint_increment_independence_test(first, second, c["n"], seed, ("N", "Nprime"), jobs=jobs),
        poisson.disjoint_increment_independence_test(first, second, c["n"], seed, ("N", "N"), jobs=jobs),
        poisson.disjoint_increment_independence_test(
            first, first, c["n"], seed, ("N", "M"), require_disjoint=False, jobs=jobs,
            name="poisson_power_control_N_vs_M_same_interval"),
    ]
    inc = poisson.increment_ensemble([first], c["n"], seed, "poisson-marginals", jobs)
    length = first[1] - first[0]
    for counter, rate in (("N", 1.0), ("Nprime", 1.0), ("M", 2.0)):
        chi2, p = poisson.poisson_chisquare(inc[counter][:, 0], rate * length)
        entries.append(Entry(f"poisson_marginal_{counter}_rate={rate:g}", chi2, None, 0.01, "p_ge",
                             c["n"], seed, p_value=p))
    return entries


def suite_appendix(cfg, seed, jobs):
    return appendix.appendix_entries(tuple(cfg["appendix"]["checks"]))


RUNNERS = {
    "lemma31": suite_lemma31,
    "lemma32": suite_lemma32,
    "covariance": suite_covariance,
    "normality": suite_normality,
    "independence": suite_independence,
    "coupling": suite_coupling,
    "rate": suite_rate,
    "poisson": suite_poisson,
    "appendix": suite_appendix,
}


def run_suite(name: str, cfg: dict, seed: int, jobs: int = 1) -> list[Entry]:
    names = SUITES if name == "all" else (name,)
    entries = []
    for n in names:
        if n not in RUNNERS:
            raise KeyError(f"unknown suite {n!r}; expected one of {SUITES + ('all',)}")
        entries += RUNNERS[n](cfg, seed, jobs)
    return entries
