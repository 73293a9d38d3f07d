"""Throughput/delay bound calculators and empirical verification harnesses.

Closed-form factors relate the max-gain scheduler's stability region to the
exact one: mu = beta*(1+2(1+kappa)) for the base algorithm, with refinements
mu' (repeat-boosted success 1-eps) and mu'' (grouping spread sigma).  The
contraction harness re-derives the supporting inequality empirically against
the exhaustive max-weight oracle, and the stability-region oracle answers
polytope membership queries by linear programming over the enumerated
maximal schedules.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import linprog

from .errors import InvalidInputError
from .schedule import EXACT_CAP, LinkSystem, enumerate_maximal_schedules, service_vectors
from .sync import run_sync
from .traffic import uniform_specs


@dataclass(frozen=True)
class BoundReport:
    """All closed-form factors for one instance."""

    beta_max: int
    kappa_1: int
    sigma: int
    n_bands: int
    epsilon: float
    mu: float
    mu_prime: float
    mu_dprime: float
    theta: float
    alpha: float
    p_kj_lower: float
    p_kj_exact: float


def compute_bounds(
    beta_max: int, kappa_1: int, sigma: int, n_bands: int, epsilon: float = 0.0
) -> BoundReport:
    """Evaluate mu, mu', mu'', theta, alpha and the band-capture probability bound.

    theta = 1 - (1 - 1/M)^(1+kappa_1) is the chance some interfering group
    lands on a given band; alpha = 1 - (theta + theta/(2(1+kappa_1))) is the
    contraction factor and satisfies |alpha| < 1 for every M >= 1, kappa >= 0.
    The capture probability of a group's winner is at least
    theta/(1+kappa_1) = (1/M) E[1/(1 + Bin(kappa_1, 1/M))].
    """
    if beta_max < 1 or n_bands < 1 or kappa_1 < 0 or sigma < 0:
        raise InvalidInputError("beta_max >= 1, M >= 1, kappa_1 >= 0, sigma >= 0 required")
    if not 0.0 <= epsilon < 1.0:
        raise InvalidInputError("epsilon must lie in [0, 1)")
    mu = beta_max * (1.0 + 2.0 * (1.0 + kappa_1))
    mu_prime = beta_max * (1.0 + (1.0 + kappa_1) / (1.0 - epsilon))
    mu_dprime = beta_max * (1.0 + (1.0 + sigma) / (1.0 - epsilon))
    theta = 1.0 - (1.0 - 1.0 / n_bands) ** (1 + kappa_1)
    alpha = 1.0 - (theta + theta / (2.0 * (1.0 + kappa_1)))
    return BoundReport(
        beta_max=beta_max,
        kappa_1=kappa_1,
        sigma=sigma,
        n_bands=n_bands,
        epsilon=epsilon,
        mu=mu,
        mu_prime=mu_prime,
        mu_dprime=mu_dprime,
        theta=theta,
        alpha=alpha,
        p_kj_lower=theta / (1.0 + kappa_1),
        p_kj_exact=binomial_capture_probability(n_bands, kappa_1),
    )


def binomial_capture_probability(n_bands: int, kappa_1: int) -> float:
    """(1/M) * E[1/(1 + Bin(kappa_1, 1/M))], evaluated term by term."""
    p = 1.0 / n_bands
    total = 0.0
    for n in range(kappa_1 + 1):
        total += (
            math.comb(kappa_1, n)
            * p ** n
            * (1.0 - p) ** (kappa_1 - n)
            / (1.0 + n)
        )
    return p * total


# ---------------------------------------------------------------------------
# Stability region oracle
# ---------------------------------------------------------------------------


class StabilityRegionOracle:
    """Membership tests against the convex hull of feasible service vectors."""

    def __init__(self, links: LinkSystem, cap: int = EXACT_CAP):
        self.schedules = enumerate_maximal_schedules(links, cap)
        self.vectors = service_vectors(links, self.schedules)
        self.n_hops = links.n_hops

    def contains(self, rates: np.ndarray, rho: float = 1.0) -> bool:
        """Is the arrival vector within rho * Lambda (allowing dominance)?"""
        lam = np.asarray(rates, dtype=np.float64) / rho
        n_s = len(self.schedules)
        # feasibility: exists phi >= 0, sum phi = 1, V^T phi >= lam
        res = linprog(
            c=np.zeros(n_s),
            A_ub=-self.vectors.T,
            b_ub=-lam,
            A_eq=np.ones((1, n_s)),
            b_eq=np.array([1.0]),
            bounds=[(0.0, None)] * n_s,
            method="highs",
        )
        return bool(res.success)

    def max_scale(self, direction: np.ndarray) -> float:
        """Largest c with c * direction inside Lambda."""
        d = np.asarray(direction, dtype=np.float64)
        if np.all(d == 0):
            raise InvalidInputError("direction must be non-zero")
        n_s = len(self.schedules)
        # maximize c subject to c*d <= V^T phi, sum phi = 1, phi >= 0
        c_obj = np.zeros(n_s + 1)
        c_obj[-1] = -1.0
        a_ub = np.hstack([-self.vectors.T, d.reshape(-1, 1)])
        res = linprog(
            c=c_obj,
            A_ub=a_ub,
            b_ub=np.zeros(self.n_hops),
            A_eq=np.hstack([np.ones((1, n_s)), np.zeros((1, 1))]),
            b_eq=np.array([1.0]),
            bounds=[(0.0, None)] * (n_s + 1),
            method="highs",
        )
        if not res.success:
            raise RuntimeError(f"stability LP failed: {res.message}")
        return float(res.x[-1])


def reference_rates(
    links: LinkSystem, mu: float, fraction: float, direction: Optional[np.ndarray] = None,
    cap: int = EXACT_CAP,
) -> np.ndarray:
    """Arrival vector at ``fraction`` of the mu-scaled boundary along a direction."""
    if direction is None:
        direction = np.ones(links.n_hops)
    oracle = StabilityRegionOracle(links, cap)
    scale = oracle.max_scale(direction)
    return fraction * (scale / mu) * np.asarray(direction, dtype=np.float64)


# ---------------------------------------------------------------------------
# Stability detection and rate search
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StabilityVerdict:
    load: float
    stable: bool
    slope: float
    tail_mean: float
    slope_eps: float
    q_cap: float


def stability_verdict(
    qtot: np.ndarray, load: float, n_hops: int,
    slope_eps: float = 0.01, q_cap_per_hop: float = 50.0,
) -> StabilityVerdict:
    """Stable iff the tail-half queue trend is flat and the tail mean is small."""
    tail = np.asarray(qtot[len(qtot) // 2 :], dtype=np.float64)
    x = np.arange(tail.size, dtype=np.float64)
    xm = x.mean()
    denom = float(((x - xm) ** 2).sum())
    slope = float(((x - xm) * (tail - tail.mean())).sum() / denom) if denom else 0.0
    tail_mean = float(tail.mean())
    q_cap = q_cap_per_hop * n_hops
    return StabilityVerdict(
        load=load,
        stable=slope <= slope_eps and tail_mean < q_cap,
        slope=slope,
        tail_mean=tail_mean,
        slope_eps=slope_eps,
        q_cap=q_cap,
    )


@dataclass
class RateSearchResult:
    rho_star: float
    probes: list[tuple[float, bool, bool]] = field(default_factory=list)  # (rho, stable, mixed)
    warnings: list[str] = field(default_factory=list)


def max_stabilizable_rate(
    probe: Callable[[float, int], np.ndarray],
    seeds: Sequence[int],
    n_hops: int,
    lo: float = 0.0,
    hi: float = 1.0,
    tol: float = 0.02,
    slope_eps: float = 0.01,
    q_cap_per_hop: float = 50.0,
) -> RateSearchResult:
    """Binary search for the largest stable load scale.

    ``probe(rho, seed)`` runs one simulation and returns its total-queue
    series.  A load is stable only when every seed's verdict is stable; mixed
    verdicts attach a widened-confidence warning and count as unstable.
    """
    result = RateSearchResult(rho_star=lo)

    def check(rho: float) -> bool:
        verdicts = [
            stability_verdict(probe(rho, s), rho, n_hops, slope_eps, q_cap_per_hop).stable
            for s in seeds
        ]
        stable = all(verdicts)
        mixed = any(verdicts) and not stable
        result.probes.append((rho, stable, mixed))
        if mixed:
            result.warnings.append(
                f"verdicts disagree across seeds at rho={rho:.4f}; treated as unstable"
            )
        return stable

    if check(hi):
        result.warnings.append(f"upper bracket rho={hi} is stable; rho* >= {hi}")
        result.rho_star = hi
        return result
    good, bad = lo, hi
    while bad - good > tol:
        mid = (good + bad) / 2.0
        if check(mid):
            good = mid
        else:
            bad = mid
    result.rho_star = good
    return result


# ---------------------------------------------------------------------------
# Contraction / boundedness harness
# ---------------------------------------------------------------------------


@dataclass
class ContractionReport:
    mu: float
    alpha: float
    lhs_mean: float  # E[W* - mu W]
    rhs_mean: float  # alpha E[W* - mu W_{-1}]
    running_mean_slope: float
    identity_holds: bool
    delta_1: float
    delta_2: float
    final_running_mean: float


def contraction_check(
    links: LinkSystem,
    grouping,
    rates: np.ndarray,
    mu: float,
    alpha: float,
    horizon: int,
    seeds: Sequence[int],
    scheduler_params: Optional[dict] = None,
    arrival_kind: str = "bernoulli",
) -> ContractionReport:
    """Empirics for the drift inequality and the boundedness of W* - mu W.

    Per seed, runs the synchronous max-gain scheduler with the exhaustive
    max-weight oracle tracked each slot, asserts the gain/loss accounting
    identity W(t) - W_{-1}(t) = W+(t) - W-(t) exactly on every slot, then
    aggregates sample means of both sides of the contraction inequality and
    fits the trend of the running mean of W*(t) - mu W(t).
    """
    lhs_all = []
    rhs_all = []
    running_means = []
    identity = True
    delta_2 = 0.0
    for seed in seeds:
        specs = uniform_specs(links.n_hops, rates, kind=arrival_kind)
        res = run_sync(
            links,
            grouping,
            specs,
            "maxgain",
            horizon,
            seed=seed,
            scheduler_params=scheduler_params,
            track_oracle=True,
        )
        if not np.array_equal(res.w - res.w_prev, res.w_plus - res.w_minus):
            identity = False
        x = res.wstar.astype(np.float64) - mu * res.w.astype(np.float64)
        x_prev = res.wstar.astype(np.float64) - mu * res.w_prev.astype(np.float64)
        lhs_all.append(x.mean())
        rhs_all.append(alpha * x_prev.mean())
        running_means.append(np.cumsum(x) / np.arange(1, horizon + 1))
        delta_2 = max(delta_2, float(res.w_prev.max()))

    rm = np.mean(np.stack(running_means), axis=0)
    t = np.arange(rm.size, dtype=np.float64)
    tm = t.mean()
    slope = float(((t - tm) * (rm - rm.mean())).sum() / ((t - tm) ** 2).sum())
    return ContractionReport(
        mu=mu,
        alpha=alpha,
        lhs_mean=float(np.mean(lhs_all)),
        rhs_mean=float(np.mean(rhs_all)),
        running_mean_slope=slope,
        identity_holds=identity,
        delta_1=float(np.sum(rates)),
        delta_2=delta_2,
        final_running_mean=float(rm[-1]),
    )


# ---------------------------------------------------------------------------
# Delay metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunMetrics:
    """Aggregates of one run used for cross-scheduler comparison."""

    seed: int
    mean_qtot: float
    qtot: Optional[np.ndarray] = None
    node_queues: Optional[np.ndarray] = None  # (slots, nodes)
    sojourns: Optional[np.ndarray] = None


@dataclass
class DelayComparison:
    seeds: list[int]
    gain_ratios: list[float]
    median_ratio: float
    ccdf: list[tuple[float, float]]  # (ratio threshold, fraction of runs >= threshold)


def delay_metrics(baseline: Sequence[RunMetrics], test: Sequence[RunMetrics]) -> DelayComparison:
    """Per-seed delay gain ratios of baseline over test, and their CCDF."""
    base_by_seed = {m.seed: m for m in baseline}
    test_by_seed = {m.seed: m for m in test}
    if set(base_by_seed) != set(test_by_seed):
        missing = set(base_by_seed) ^ set(test_by_seed)
        raise InvalidInputError(f"mismatched run seeds: {sorted(missing)}")
    seeds = sorted(base_by_seed)
    ratios = []
    for s in seeds:
        denom = test_by_seed[s].mean_qtot
        num = base_by_seed[s].mean_qtot
        ratios.append(num / denom if denom > 0 else math.inf if num > 0 else 1.0)
    finite = sorted(r for r in ratios if math.isfinite(r))
    ccdf = []
    for r in sorted(set(finite)):
        ccdf.append((r, sum(1 for x in ratios if x >= r) / len(ratios)))
    med = float(np.median(ratios)) if ratios else math.nan
    return DelayComparison(seeds=seeds, gain_ratios=ratios, median_ratio=med, ccdf=ccdf)


def queue_cdf(values: np.ndarray, thresholds: Sequence[float]) -> list[tuple[float, float]]:
    """Empirical P(queue <= x) at each threshold."""
    v = np.asarray(values, dtype=np.float64)
    return [(float(x), float(np.mean(v <= x))) for x in thresholds]


def node_queue_series(q_series: np.ndarray, hop_sources: Sequence[int], nodes: Sequence[int]) -> np.ndarray:
    """Aggregate per-hop queues into per-source-node queues, slot by slot."""
    out = np.zeros((q_series.shape[0], len(nodes)), dtype=np.int64)
    index = {v: i for i, v in enumerate(nodes)}
    for h, src in enumerate(hop_sources):
        out[:, index[src]] += q_series[:, h]
    return out


def bottleneck_node(node_queues: np.ndarray) -> int:
    """Column index of the node with the largest time-average queue."""
    return int(np.argmax(node_queues.mean(axis=0)))


def loglog_slope(sizes: Sequence[float], values: Sequence[float]) -> float:
    """Least-squares slope of log(values) against log(sizes)."""
    return float(np.polyfit(np.log(np.asarray(sizes, dtype=np.float64)),
                            np.log(np.asarray(values, dtype=np.float64)), 1)[0])
