"""Complex transport processes driven by one thinned Poisson skeleton.

For an angle theta and scale eps the process is

    z(t) = (-1)^G * eps * integral_0^{2t/eps^2} (-1)^{N'_r} exp(i theta N_r) dr,

which is piecewise linear in t with slope modulus exactly 2/eps. Between
two master events the integrand is constant, so the path is evaluated
exactly segment by segment.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from kactransport._kernels import compensated_cumsum
from kactransport.ensemble import blocks, parallel_map
from kactransport.poisson import JumpSkeleton, simulate_master
from kactransport.rng import RandomStream, SeedSpec, stream_id

TWO_PI = 2.0 * math.pi
DOMAIN_TOL = 1e-6
PAIR_TOL = 1e-9
TRIG_TOL = 1e-12


class ThetaValidationError(ValueError):
    """An angle violates one of the admissibility constraints."""


def reduce_angle(theta: float) -> float:
    if not math.isfinite(theta):
        raise ThetaValidationError(f"theta must be finite, got {theta}")
    return float(np.mod(theta, TWO_PI))


def max_walk_index(epsilon: float) -> int:
    return math.ceil(4.0 / epsilon**2) + 1


def check_angle(theta: float, epsilon: float) -> float:
    """Reduce ``theta`` mod 2*pi and check it is admissible at scale ``epsilon``."""
    th = reduce_angle(theta)
    for bad, label in ((0.0, "0"), (math.pi, "pi"), (TWO_PI, "2*pi")):
        if abs(th - bad) <= DOMAIN_TOL:
            raise ThetaValidationError(
                f"theta={theta} reduces to {th!r}, which is not in (0, pi) U (pi, 2*pi) "
                f"(within {DOMAIN_TOL} of {label})"
            )
    m = np.arange(1, max_walk_index(epsilon) + 1, dtype=float)
    phase = m * th
    worst_cos = float(np.min(np.abs(np.cos(phase))))
    worst_sin = float(np.min(np.abs(np.sin(phase))))
    if worst_cos <= TRIG_TOL or worst_sin <= TRIG_TOL:
        raise ThetaValidationError(
            f"theta={theta}: cos(m theta) or sin(m theta) vanishes for some m <= {m.size} "
            f"(min |cos|={worst_cos:.3g}, min |sin|={worst_sin:.3g})"
        )
    return th


def check_epsilon(epsilon: float):
    if not (math.isfinite(epsilon) and epsilon > 0):
        raise ValueError(f"epsilon must be positive and finite, got {epsilon}")


@dataclass(frozen=True)
class ThetaSet:
    """Validated angles for one scale ``epsilon``.

    ``angles`` holds the reduced values; ``raw`` keeps what the caller passed.
    """

    angles: tuple[float, ...]
    epsilon: float
    raw: tuple[float, ...] = ()

    @classmethod
    def of(cls, thetas, epsilon: float) -> "ThetaSet":
        check_epsilon(epsilon)
        raw = tuple(float(t) for t in np.atleast_1d(thetas))
        if not raw:
            raise ThetaValidationError("at least one angle is required")
        reduced = tuple(check_angle(t, epsilon) for t in raw)
        for i in range(len(reduced)):
            for j in range(i + 1, len(reduced)):
                a, b = reduced[i], reduced[j]
                if abs(a - b) <= PAIR_TOL:
                    raise ThetaValidationError(
                        f"theta_{i}={raw[i]} and theta_{j}={raw[j]} coincide mod 2*pi")
                if abs(a + b - TWO_PI) <= PAIR_TOL:
                    raise ThetaValidationError(
                        f"theta_{i}={raw[i]} and theta_{j}={raw[j]} sum to 2*pi mod 2*pi")
        return cls(reduced, float(epsilon), raw)

    def __len__(self):
        return len(self.angles)


@dataclass(frozen=True)
class TransportPath:
    theta: float
    epsilon: float
    sign_G: int
    horizon_T: float
    breakpoints: np.ndarray
    values: np.ndarray
    slopes: np.ndarray

    @property
    def x(self) -> np.ndarray:
        return self.values.real

    @property
    def y(self) -> np.ndarray:
        return self.values.imag

    def at(self, grid) -> np.ndarray:
        return sample_path_grid(self, grid)

    def to_csv(self, path, grid=None):
        if grid is None:
            t, z = self.breakpoints, self.values
        else:
            t = np.asarray(grid, dtype=float)
            z = self.at(t)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "re", "im"])
            for ti, zi in zip(t, z):
                w.writerow([repr(float(ti)), repr(float(zi.real)), repr(float(zi.imag))])


def evaluate_transport(
    skeleton: JumpSkeleton,
    theta: float,
    epsilon: float,
    sign_G: int,
    horizon_T: float,
    *,
    validate: bool = True,
) -> TransportPath:
    """Integrate the transport process exactly on ``[0, horizon_T]``."""
    check_epsilon(epsilon)
    if sign_G not in (1, -1):
        raise ValueError(f"sign_G must be +1 or -1, got {sign_G}")
    if not (math.isfinite(horizon_T) and horizon_T >= 0):
        raise ValueError(f"horizon_T must be finite and non-negative, got {horizon_T}")
    th = check_angle(theta, epsilon) if validate else reduce_angle(theta)
    r_end = 2.0 * horizon_T / epsilon**2
    if skeleton.horizon < r_end * (1.0 - 1e-12):
        raise ValueError(
            f"skeleton horizon {skeleton.horizon} is shorter than 2T/eps^2 = {r_end}")

    keep = skeleton.event_times < r_end
    r = skeleton.event_times[keep]
    n_before = np.concatenate([[0], skeleton.counts_after_event("N")[keep]])
    np_before = np.concatenate([[0], skeleton.counts_after_event("Nprime")[keep]])

    levels = np.arange(int(n_before[-1]) + 1) * th
    parity = 1.0 - 2.0 * (np_before & 1)
    f_re = parity * np.cos(levels)[n_before]
    f_im = parity * np.sin(levels)[n_before]
    edges = np.concatenate([[0.0], r, [r_end]])
    lengths = np.diff(edges)

    scale = sign_G * epsilon
    # adding 0.0 turns the -0.0 produced by sign_G = -1 into 0.0
    re = compensated_cumsum(f_re * lengths) * scale + 0.0
    im = compensated_cumsum(f_im * lengths) * scale + 0.0
    t = edges * (epsilon**2 / 2.0)
    t[-1] = horizon_T
    slopes = (sign_G * 2.0 / epsilon) * (f_re + 1j * f_im)

    arrays = (t, re + 1j * im, slopes)
    for a in arrays:
        a.setflags(write=False)
    return TransportPath(th, float(epsilon), int(sign_G), float(horizon_T), *arrays)


def sample_path_grid(path: TransportPath, grid) -> np.ndarray:
    """Values at arbitrary times in ``[0, horizon_T]`` (exact: the path is piecewise linear)."""
    g = np.asarray(grid, dtype=float)
    if g.size and (g.min() < 0 or g.max() > path.horizon_T):
        raise ValueError(f"grid times must lie in [0, {path.horizon_T}]")
    bp = path.breakpoints
    return np.interp(g, bp, path.values.real) + 1j * np.interp(g, bp, path.values.imag)


def simulate_family(thetas: ThetaSet, horizon_T: float, stream: RandomStream) -> list[TransportPath]:
    """One path per angle, all driven by the same skeleton and the same G."""
    sign_G = -1 if stream.bernoulli(0.5) else 1
    skeleton = simulate_master(2.0 * horizon_T / thetas.epsilon**2, stream)
    return [
        evaluate_transport(skeleton, th, thetas.epsilon, sign_G, horizon_T, validate=False)
        for th in thetas.angles
    ]


PATH_BLOCK = 250


def _family_block(task):
    seed, tag, (start, stop), angles, epsilon, horizon_T, grid = task
    thetas = ThetaSet(tuple(angles), epsilon)
    out = np.empty((stop - start, len(angles), len(grid)), dtype=complex)
    for row, i in enumerate(range(start, stop)):
        stream = RandomStream(SeedSpec(seed, stream_id(tag, i)))
        for k, path in enumerate(simulate_family(thetas, horizon_T, stream)):
            out[row, k] = path.at(grid)
    return out


def family_ensemble(thetas: ThetaSet, horizon_T: float, grid, n_paths: int, seed: int,
                    tag: str = "family", jobs: int = 1) -> np.ndarray:
    """Values of ``n_paths`` independent families on ``grid``; shape ``(n_paths, n_theta, n_grid)``.

    Path ``i`` uses stream ``stream_id(tag, i)``, so results are identical for
    any ``jobs``.
    """
    grid = [float(g) for g in grid]
    tasks = [(seed, tag, blk, thetas.angles, thetas.epsilon, horizon_T, grid)
             for blk in blocks(n_paths, PATH_BLOCK)]
    return np.concatenate(parallel_map(_family_block, tasks, jobs))
