"""Exact stochastic simulation of continuous-time Markov jump processes.

``gillespie_simulate`` is a plain reference implementation for arbitrary
propensity functions. The compiled kernels below specialise it to the
epidemic and macrophage models, where millions of paths are needed.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from numba import njit


class ModelDefinitionError(ValueError):
    pass


def gillespie_simulate(
    propensities: Callable[[np.ndarray], Sequence[float]],
    updates: np.ndarray,
    initial: Sequence[int],
    record_times: Sequence[float],
    rng: np.random.Generator,
) -> np.ndarray:
    """Simulate one path and return the state at each record time.

    ``propensities(state)`` gives the rate of every event; event ``e`` adds
    ``updates[e]`` to the state. Record times must be sorted and
    non-negative. The state at ``t`` includes every event at or before ``t``.
    """
    times = np.asarray(record_times, dtype=float)
    state = np.array(initial, dtype=np.int64)
    out = np.empty((times.size, state.size), dtype=np.int64)
    if times.size == 0:
        return out
    if np.any(times < 0) or np.any(np.diff(times) < 0):
        raise ValueError("record times must be sorted and non-negative")
    updates = np.asarray(updates, dtype=np.int64)
    t = 0.0
    k = 0
    while k < times.size:
        rates = np.asarray(propensities(state), dtype=float)
        if np.any(rates < 0) or not np.all(np.isfinite(rates)):
            raise ModelDefinitionError(f"invalid rates {rates} in state {state}")
        total = rates.sum()
        t_next = t + rng.exponential(1.0 / total) if total > 0 else np.inf
        while k < times.size and times[k] < t_next:
            out[k] = state
            k += 1
        if k == times.size:
            break
        e = rng.choice(rates.size, p=rates / total)
        state = state + updates[e]
        t = t_next
    return out


# ---------------------------------------------------------------------------
# Epidemic kernels
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def epi_paths(model, b1, b2, gamma, N, times, horizon, seed):
    """Infected counts of one path per parameter row at the sorted ``times``.

    Models: 1 death, 2 SI, 3 SEI, 4 SEI2. Paths always run to ``horizon``
    so that a given seed produces the same trajectory for any record times.
    """
    np.random.seed(seed)
    J = b1.shape[0]
    T = times.shape[0]
    out = np.zeros((J, T), dtype=np.int64)
    for j in range(J):
        S = N
        E = 0
        I = 0
        t = 0.0
        k = 0
        while True:
            inf_rate = (b1[j] + b2[j] * I) * S
            if model >= 3:
                r1 = inf_rate
                r2 = gamma[j] * E
            else:
                r1 = inf_rate
                r2 = 0.0
            total = r1 + r2
            if total > 0.0:
                t_next = t + np.random.exponential(1.0 / total)
            else:
                t_next = np.inf
            while k < T and times[k] < t_next:
                out[j, k] = I
                k += 1
            if t_next > horizon:
                break
            if np.random.random() * total < r1:
                S -= 1
                if model >= 3:
                    E += 1
                else:
                    I += 1
            else:
                E -= 1
                I += 1
            t = t_next
        while k < T:
            out[j, k] = I
            k += 1
    return out


# ---------------------------------------------------------------------------
# Macrophage kernels
# ---------------------------------------------------------------------------

# parameter column order shared with models.macrophage
PHI, A, B, D, DELTA, EPS, P, Q = range(8)


@njit(cache=True, nogil=True)
def _cell_after_acquisition(model, th, refractory, t0, first_is_r, t_exp, t_end, pop_cap):
    """Continue one cell from its first acquisition at ``t0`` to ``t_end``.

    Returns the total bacteria count, or ``pop_cap`` once it is reached.
    """
    R = 1 if first_is_r else 0
    Dn = 1 - R
    t = t0
    phi = th[PHI]
    while True:
        acq = phi if t < t_exp else 0.0
        if model == 1:
            p = th[P]
            r_acq_r = acq * (1.0 - p)
            r_acq_d = acq * p
        elif refractory:
            r_acq_r = 0.0
            r_acq_d = acq
        else:
            r_acq_r = acq
            r_acq_d = 0.0
        if refractory:
            r_div = 0.0
        else:
            r_div = th[A] * np.exp(-th[B] * R) * R
        r_loss_r = th[D] * R
        r_loss_d = th[EPS] * Dn
        r_switch = th[DELTA] * R
        total = r_acq_r + r_acq_d + r_div + r_loss_r + r_loss_d + r_switch
        if total > 0.0:
            t_next = t + np.random.exponential(1.0 / total)
        else:
            t_next = np.inf
        # acquisition switches off at t_exp: restart the clock there
        if t < t_exp and t_next > t_exp and acq > 0.0:
            t = t_exp
            if t >= t_end:
                return R + Dn
            continue
        if t_next > t_end:
            return R + Dn
        u = np.random.random() * total
        if u < r_acq_r:
            R += 1
        elif u < r_acq_r + r_acq_d:
            Dn += 1
        elif u < r_acq_r + r_acq_d + r_div:
            R += 1
        elif u < r_acq_r + r_acq_d + r_div + r_loss_r:
            R -= 1
        elif u < r_acq_r + r_acq_d + r_div + r_loss_r + r_loss_d:
            Dn -= 1
        else:
            R -= 1
            Dn += 1
        t = t_next
        if R + Dn >= pop_cap:
            return pop_cap


@njit(cache=True, nogil=True)
def _acquiring_cell(model, th, t_acq, p_acq, t_exp, t_end, pop_cap):
    """Simulate a cell conditioned on acquiring before ``t_acq``."""
    refractory = False
    if model == 2:
        refractory = np.random.random() < th[Q]
    # first acquisition time from Exp(phi) truncated to [0, t_acq)
    u = np.random.random()
    t0 = -np.log1p(-u * p_acq) / th[PHI]
    if t0 >= t_acq:
        t0 = np.nextafter(t_acq, 0.0)
    if model == 1:
        first_is_r = np.random.random() >= th[P]
    else:
        first_is_r = not refractory
    return _cell_after_acquisition(model, th, refractory, t0, first_is_r, t_exp, t_end, pop_cap)


@njit(cache=True, nogil=True)
def macro_observe(model, th, t_exp, t_end, S, k_plus, max_cells, pop_cap, out, col):
    """Write [c, h_1..h_K+] for one observation time into ``out[col:]``.

    Cells that never acquire a bacterium are skipped in bulk: their number
    is binomial (sample 1) or geometric between acquiring cells (sample 2).
    Returns the attained size of the infected-cell sample.
    """
    phi = th[PHI]
    t_acq = min(t_exp, t_end)
    p_acq = -np.expm1(-phi * t_acq) if phi > 0.0 and t_acq > 0.0 else 0.0
    # sample 1: infected count among S cells
    c = 0
    if p_acq > 0.0:
        n_acq = np.random.binomial(S, p_acq)
        for _ in range(n_acq):
            if _acquiring_cell(model, th, t_acq, p_acq, t_exp, t_end, pop_cap) > 0:
                c += 1
    out[col] = c
    for k in range(k_plus):
        out[col + 1 + k] = 0
    # sample 2: scan cells until S infected ones are found or the cap is hit
    attained = 0
    if p_acq <= 0.0:
        return attained
    scanned = 0
    while attained < S:
        scanned += np.random.geometric(p_acq)
        if scanned > max_cells:
            break
        total = _acquiring_cell(model, th, t_acq, p_acq, t_exp, t_end, pop_cap)
        if total > 0:
            attained += 1
            b = min(total, k_plus) - 1
            out[col + 1 + b] += 1
    return attained


@njit(cache=True, nogil=True)
def macro_dataset(model, theta, t_exp, t_ends, S, k_plus, max_cells, pop_cap, seed):
    """Features for every parameter row: per time [c, h_1..h_K+]."""
    np.random.seed(seed)
    J = theta.shape[0]
    n = t_ends.shape[0]
    width = 1 + k_plus
    out = np.zeros((J, n * width), dtype=np.int64)
    attained = np.zeros((J, n), dtype=np.int64)
    for j in range(J):
        for i in range(n):
            attained[j, i] = macro_observe(
                model, theta[j], t_exp, t_ends[i], S, k_plus, max_cells, pop_cap, out[j], i * width
            )
    return out, attained
