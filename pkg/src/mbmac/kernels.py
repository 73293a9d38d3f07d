"""Hot inner loops with numba-compiled and pure-numpy implementations.

The randomized group max search runs hundreds of mini-slots per group per
simulated slot and dominates long synchronous runs, so it is compiled with
numba when available.  Setting the environment variable ``MBMAC_NO_NUMBA=1``
(or running without numba installed) selects the pure-numpy path instead.
Both paths consume the same pre-drawn uniforms and produce identical results;
``benchmarks/bench_kernels.py`` compares their throughput.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - environment without numba
    numba = None
    _HAVE_NUMBA = False


def numba_enabled() -> bool:
    return _HAVE_NUMBA and os.environ.get("MBMAC_NO_NUMBA", "") != "1"


def local_max_trial_numpy(
    gains: np.ndarray,
    p0: float,
    esc_every: int,
    total: int,
    esc_factor: float,
    u: np.ndarray,
) -> int:
    """Mini-slot contention for the max-gain candidate; returns winner index or -1.

    Candidates broadcast with a shared probability that starts at p0 and is
    multiplied by esc_factor every esc_every mini-slots.  A mini-slot succeeds
    iff exactly one live candidate draws below the probability; candidates
    with gain <= the announced gain then withdraw (the announcer stays live).
    ``u`` holds the pre-drawn uniforms, one row per mini-slot.
    """
    n = gains.shape[0]
    alive = np.ones(n, dtype=np.bool_)
    p = p0
    winner = -1
    for t in range(total):
        if t > 0 and t % esc_every == 0:
            p = min(p * esc_factor, 1.0)
        draws = (u[t] < p) & alive
        hits = np.flatnonzero(draws)
        if hits.shape[0] == 1:
            tx = int(hits[0])
            winner = tx
            alive &= gains > gains[tx]
            alive[tx] = True
    return winner


if _HAVE_NUMBA:

    @numba.njit(cache=True)
    def _local_max_trial_jit(gains, p0, esc_every, total, esc_factor, u):  # pragma: no cover
        n = gains.shape[0]
        alive = np.ones(n, dtype=np.bool_)
        p = p0
        winner = -1
        for t in range(total):
            if t > 0 and t % esc_every == 0:
                p = p * esc_factor
                if p > 1.0:
                    p = 1.0
            count = 0
            tx = -1
            for i in range(n):
                if alive[i] and u[t, i] < p:
                    count += 1
                    tx = i
            if count == 1:
                winner = tx
                g = gains[tx]
                for i in range(n):
                    if alive[i] and gains[i] <= g:
                        alive[i] = False
                alive[tx] = True
        return winner

    def local_max_trial_numba(gains, p0, esc_every, total, esc_factor, u) -> int:
        return int(_local_max_trial_jit(gains, p0, esc_every, total, esc_factor, u))

else:  # pragma: no cover
    local_max_trial_numba = None


def local_max_trial(gains, p0, esc_every, total, esc_factor, u) -> int:
    if numba_enabled():
        return local_max_trial_numba(gains, p0, esc_every, total, esc_factor, u)
    return local_max_trial_numpy(gains, p0, esc_every, total, esc_factor, u)


def max_weight_over_schedules(matrix: np.ndarray, scores: np.ndarray) -> tuple[float, int]:
    """Best total score over pre-enumerated schedules: (value, argmax row)."""
    totals = matrix @ scores
    best = int(np.argmax(totals))
    return float(totals[best]), best
