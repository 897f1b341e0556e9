"""Exact and brute-force oracles for the combinatorial and series lemmas."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from kactransport.report import Entry

F_MAX = 12
FLOOR_GUARD = 1e-12


# --- balls in boxes ----------------------------------------------------------

@lru_cache(maxsize=None)
def _f_dp(k: int, n: int) -> int:
    """Placements of k labelled balls in n boxes with no box holding exactly one ball."""
    if n == 0:
        return 1 if k == 0 else 0
    total = 0
    for a in range(k + 1):
        if a != 1:
            total += math.comb(k, a) * _f_dp(k - a, n - 1)
    return total


def _f_series(k: int, n: int) -> int:
    """k! times the x^k coefficient of (e^x - x)^n, in exact rationals."""
    base = [Fraction(1, math.factorial(j)) for j in range(k + 1)]
    if k >= 1:
        base[1] = Fraction(0)
    poly = [Fraction(1)] + [Fraction(0)] * k
    for _ in range(n):
        poly = [sum(poly[i] * base[d - i] for i in range(d + 1)) for d in range(k + 1)]
    value = poly[k] * math.factorial(k)
    if value.denominator != 1:
        raise ArithmeticError(f"non-integer coefficient for k={k}, n={n}")
    return int(value)


def _check_kn(k, n):
    if not (isinstance(k, int) and isinstance(n, int)):
        raise ValueError("k and n must be integers")
    if not (0 <= k <= F_MAX and 1 <= n <= F_MAX):
        raise ValueError(f"need 0 <= k <= {F_MAX} and 1 <= n <= {F_MAX}, got k={k}, n={n}")


def f_count(k: int, n: int) -> int:
    """F(k, n) by both algorithms; raises if they disagree."""
    _check_kn(k, n)
    a, b = _f_dp(k, n), _f_series(k, n)
    if a != b:
        raise ArithmeticError(f"F({k},{n}): dynamic program {a} != series {b}")
    return a


def lemmaF_k_cap(n: int) -> float:
    """Largest admissible k at n (infinite for n = 1, where the log vanishes)."""
    root = math.sqrt(1.0 / n - 1.0 / n**2)
    if root == 0:
        return math.inf
    return 2.0 + math.log(4.0) / math.log1p(2.0 * root)


def lemmaF_bound_check(k_max: int = F_MAX, n_max: int = F_MAX) -> dict:
    """Check F(k, n) <= 2^k k! n^{k/2} on the condition-filtered set, exactly."""
    _check_kn(k_max, max(n_max, 1))
    checked, violations, agree = [], [], True
    for n in range(1, n_max + 1):
        cap = lemmaF_k_cap(n)
        for k in range(k_max + 1):
            dp, series = _f_dp(k, n), _f_series(k, n)
            agree &= dp == series
            if k > cap + FLOOR_GUARD:
                continue
            c = 2**k * math.factorial(k)
            # F <= c n^{k/2}  <=>  F^2 <= c^2 n^k, in integers
            ok = dp * dp <= c * c * n**k
            bound = c * math.sqrt(n) ** k
            checked.append({"k": k, "n": n, "F": dp, "bound": bound, "margin": bound - dp})
            if not ok:
                violations.append((k, n))
    return {"checked": checked, "violations": violations, "algorithms_agree": agree,
            "k_max": k_max, "n_max": n_max}


# --- series probe ---------------------------------------------------------------

def _floor_delta_n(delta: float, n: np.ndarray) -> np.ndarray:
    return np.floor(delta * n + FLOOR_GUARD)


def serie_terms(delta: float, n_max: int) -> np.ndarray:
    """Terms 1 - (1 - 2^{-[delta n]})^n for n = 1..n_max."""
    n = np.arange(1, n_max + 1, dtype=float)
    p = np.exp2(-_floor_delta_n(delta, n))
    with np.errstate(divide="ignore"):
        return -np.expm1(n * np.log1p(-p))


def dominating_ratio(delta: float, k_max: int) -> tuple[np.ndarray, np.ndarray]:
    """d'Alembert ratios d_{k+1}/d_k of d_k = (2^{-(delta k - 1)} / (1 - 2^{-delta k}))^k.

    Computed in log space; returns ``(k, ratio)`` for k = 1..k_max.
    """
    k = np.arange(1, k_max + 2, dtype=float)
    log_d = k * (-(delta * k - 1.0) * math.log(2.0) - np.log(-np.expm1(-delta * k * math.log(2.0))))
    return k[:-1].astype(int), np.exp(np.diff(log_d))


@dataclass
class SeriesProbe:
    delta: float
    schedule: list[int]
    partial_sums: list[float]
    ratio_k: list[int]
    ratios: list[float]
    cauchy_gap: float
    converged: bool


def serie_probe(delta: float, schedule=(100, 200, 400), tol: float = 1e-6,
                ratio_terms: int = 60) -> SeriesProbe:
    """Partial sums at each N of ``schedule``; converged if |S_N - S_{N/2}| < tol at the largest N."""
    if not (math.isfinite(delta) and delta > 0):
        raise ValueError(f"delta must be positive, got {delta}")
    schedule = sorted(int(n) for n in schedule)
    if not schedule or schedule[0] < 2:
        raise ValueError("schedule entries must be at least 2")
    n_max = schedule[-1]
    cums = np.cumsum(serie_terms(delta, n_max))
    sums = [float(cums[n - 1]) for n in schedule]
    gap = abs(float(cums[n_max - 1] - cums[n_max // 2 - 1]))
    ks, ratios = dominating_ratio(delta, ratio_terms)
    return SeriesProbe(float(delta), schedule, sums, ks.tolist(), ratios.tolist(), gap, gap < tol)


# --- thinning pmf -------------------------------------------------------------------

def thinned_pmf_series(delta: float, k: int) -> float:
    """sum_{n >= k} C(n, k) 2^{-n} (2 delta)^n e^{-2 delta} / n!, summed to machine precision."""
    if delta == 0:
        return 1.0 if k == 0 else 0.0
    terms = []
    n = k
    log_base = -2.0 * delta
    while True:
        log_t = (math.log(math.comb(n, k)) + n * math.log(delta) + log_base - math.lgamma(n + 1))
        t = math.exp(log_t)
        terms.append(t)
        if n > 2 * delta + k and t < 1e-18 * max(terms):
            break
        n += 1
    return math.fsum(terms)


def thinning_pmf_check(delta: float, k_max: int, tol: float = 1e-12) -> dict:
    if not (math.isfinite(delta) and delta >= 0):
        raise ValueError(f"interval length must be non-negative, got {delta}")
    rows = []
    for k in range(k_max + 1):
        lhs = thinned_pmf_series(delta, k)
        rhs = math.exp(-delta) * delta**k / math.factorial(k)
        rows.append({"k": k, "series": lhs, "poisson": rhs, "error": abs(lhs - rhs)})
    worst = max(r["error"] for r in rows)
    return {"delta": delta, "k_max": k_max, "rows": rows, "max_error": worst, "ok": worst <= tol}


# --- report entries -----------------------------------------------------------------

def appendix_entries(checks=("lemmaF", "serie", "thinning")) -> list[Entry]:
    entries = []
    if "lemmaF" in checks:
        r = lemmaF_bound_check(F_MAX, F_MAX)
        entries.append(Entry("appendix_F_algorithms_agree_k<=12_n<=12", float(r["algorithms_agree"]),
                             None, None, "true", 13 * 12, None))
        worst = min(c["margin"] for c in r["checked"])
        entries.append(Entry("appendix_F_bound_on_filtered_set", float(not r["violations"]), None, None,
                             "true", len(r["checked"]), None,
                             detail=f"{len(r['checked'])} pairs, smallest margin {worst:.6g}"))
    if "serie" in checks:
        for delta in (0.3, 0.5, 1.0):
            p = serie_probe(delta)
            entries.append(Entry(f"appendix_serie_cauchy_delta={delta:g}", p.cauchy_gap, 0.0, 1e-6,
                                 "le", p.schedule[-1], None,
                                 detail=f"S_N at {p.schedule}: {p.partial_sums}"))
    if "thinning" in checks:
        for delta in (0.5, 1.0, 2.0):
            r = thinning_pmf_check(delta, 10)
            entries.append(Entry(f"appendix_thinning_pmf_delta={delta:g}", r["max_error"], 0.0, 1e-12,
                                 "le", 11, None))
    return entries
