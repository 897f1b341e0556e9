"""Compiled inner loops shared by the transport and coupling modules."""

import numpy as np
from numba import njit


@njit(cache=True)
def compensated_cumsum(values):
    """Running sums with Neumaier compensation; ``out[0] = 0``, ``out[i] = sum(values[:i])``."""
    n = values.shape[0]
    out = np.empty(n + 1)
    out[0] = 0.0
    s = 0.0
    c = 0.0
    for i in range(n):
        v = values[i]
        t = s + v
        if abs(s) >= abs(v):
            c += (s - t) + v
        else:
            c += (v - t) + s
        s = t
        out[i + 1] = s + c
    return out


@njit(cache=True)
def first_exits(path, h, levels, start_m, exit_time, exit_value, next_index, overshoot):
    """Successive exits of a gridded path from corridors of half-width ``levels[m]``.

    The path is the linear interpolant of ``path[j]`` at times ``j * h``.
    Corridor ``m`` is centred on the previous exit value; the exit is located
    at the first grid point ``j`` with ``|path[j] - centre| >= levels[m]`` and
    the crossing of the level itself is interpolated inside cell ``j``, so
    ``exit_value[m] - centre = +/- levels[m]`` exactly.

    Results are written into the output arrays from index ``start_m``; the
    state to resume from is read from index ``start_m - 1``. Returns the
    number of corridors completed; stops early when the path runs out.
    """
    n = path.shape[0]
    m = start_m
    if m == 0:
        centre, t0, j = 0.0, 0.0, 1
    else:
        centre, t0, j = exit_value[m - 1], exit_time[m - 1], next_index[m - 1]
    while m < levels.shape[0]:
        level = levels[m]
        prev_t, prev_v = t0, centre
        found = False
        while j < n:
            w = path[j]
            if abs(w - centre) >= level:
                found = True
                break
            prev_t, prev_v = j * h, w
            j += 1
        if not found:
            return m
        w = path[j]
        target = centre + level if w > centre else centre - level
        lam = (target - prev_v) / (w - prev_v)
        t_cross = prev_t + lam * (j * h - prev_t)
        exit_time[m] = t_cross
        exit_value[m] = target
        overshoot[m] = abs(w - centre) - level
        if lam >= 1.0:
            j += 1
        next_index[m] = j
        centre, t0 = target, t_cross
        m += 1
    return m
