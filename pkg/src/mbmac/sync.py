"""Slotted schedulers: max-gain local search, greedy maximal, queue-CSMA, oracle.

Each slot the max-gain scheduler lets every group draw one band from its
shared seeded stream, computes per-node activation gains net of displacement
losses, finds each group's best candidate through randomized mini-slot
contention, resolves conflicts among group winners, and lets surviving
previous links continue.  Baselines share the same link system and queue
semantics so runs are comparable seed for seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidInputError, SizeLimitError
from .grouping import Grouping
from .kernels import local_max_trial, max_weight_over_schedules
from .schedule import (
    EXACT_CAP,
    LinkSystem,
    enumerate_maximal_schedules,
    schedule_matrix,
)
from .traffic import QueueState, TrafficSource, service_capacity

# Escalation constants of the randomized group max search.
C1 = 1.0 / math.log(9.0 / 8.0)
C2 = C1 / math.log(1.5)
ESC_FACTOR = 1.5

_GROUP_STREAM_TAG = 0x6B12
_CONTENTION_STREAM_TAG = 0x6B13
_QCSMA_STREAM_TAG = 0x6B14


def minislot_budget(group_size: int) -> int:
    """Mini-slots one group spends per search: ceil(C2 * ln N * (1 + ln N))."""
    if group_size <= 1:
        return 0
    ln = math.log(group_size)
    return math.ceil(C2 * ln * (1.0 + ln))


def escalation_period(group_size: int) -> int:
    """Mini-slots between broadcast-probability escalations: ceil(C1 * (1 + ln N))."""
    ln = math.log(group_size) if group_size > 1 else 0.0
    return max(1, math.ceil(C1 * (1.0 + ln)))


@dataclass(frozen=True)
class GainReport:
    """Result of one node's gain evaluation on one band."""

    node: int
    band: int
    best_link: Optional[int]
    gain: int
    loss: int
    displaced: tuple[int, ...]


@dataclass
class StepInfo:
    """Per-slot bookkeeping of a scheduler step."""

    hp: tuple[int, ...] = ()
    displaced: tuple[int, ...] = ()
    w_plus: int = 0
    w_minus: int = 0
    minislots: int = 0
    winners: tuple[tuple[int, int, int], ...] = ()  # (group, winner link, band)


def compute_loss(
    links: LinkSystem, weights: np.ndarray, node: int, band: int, prev_active: frozenset[int]
) -> tuple[int, tuple[int, ...]]:
    """Weighted rate that activating a new link at ``node`` on ``band`` would displace.

    If the node has an active link on the band, that link goes (all of them
    under adjacent-channel interference).  Otherwise, if every radio is busy,
    the incident active link with the smallest weighted rate goes.  Otherwise
    a radio is free and nothing is displaced.
    """
    scores = links.scores(weights)
    incident_active = [l for l in links.incident.get(node, ()) if l in prev_active]
    on_band = [l for l in incident_active if int(links.band[l]) == band]
    if on_band:
        return int(sum(scores[l] for l in on_band)), tuple(sorted(on_band))
    if len(incident_active) >= links.radios_at(node):
        victim = min(incident_active, key=lambda l: (scores[l], l))
        return int(scores[victim]), (victim,)
    return 0, ()


def compute_gain(
    links: LinkSystem,
    weights: np.ndarray,
    node: int,
    band: int,
    loss: int,
    displaced: tuple[int, ...],
    gain_form: str = "rate_weighted",
) -> GainReport:
    """Best net gain over the node's outgoing links on the band, clamped at zero.

    ``rate_weighted`` scores a candidate by w*r (consistent with the max-weight
    objective); ``unweighted`` scores by w alone.
    """
    best_link = None
    best_gain = 0
    for l in links.outgoing_on(node, band):
        w = int(weights[links.hop[l]])
        score = w * int(links.rate[l]) if gain_form == "rate_weighted" else w
        g = score - loss
        if g > best_gain:
            best_gain = g
            best_link = l
    if best_link is None:
        return GainReport(node, band, None, 0, loss, ())
    return GainReport(node, band, best_link, best_gain, loss, displaced)


def local_max(
    members: Sequence[int],
    gain_of: dict[int, int],
    rng: np.random.Generator,
    mode: str = "randomized",
    repeats: int = 1,
) -> tuple[Optional[int], bool]:
    """Find the group's max-gain node; returns (winner or None, success flag).

    Success means the reported winner's gain equals the true group maximum.
    The randomized mode simulates the mini-slot broadcast contention; a size-1
    group knows its own maximum trivially.
    """
    candidates = [v for v in members if gain_of.get(v, 0) > 0]
    if not candidates:
        return None, True
    true_max = max(gain_of[v] for v in candidates)
    if mode == "oracle":
        winner = min(v for v in candidates if gain_of[v] == true_max)
        return winner, True
    if mode != "randomized":
        raise InvalidInputError(f"unknown local max mode {mode!r}")

    n_group = len(members)
    if n_group == 1:
        return candidates[0], True

    gains = np.array([float(gain_of[v]) for v in candidates])
    total = minislot_budget(n_group)
    esc = escalation_period(n_group)
    p0 = 1.0 / (2.0 * n_group)
    best: Optional[tuple[int, int]] = None  # (gain, node), gain max then node min
    for _ in range(max(1, repeats)):
        u = rng.random((total, len(candidates)))
        idx = local_max_trial(gains, p0, esc, total, ESC_FACTOR, u)
        if idx < 0:
            continue
        node = candidates[idx]
        cand = (gain_of[node], node)
        if best is None or cand[0] > best[0] or (cand[0] == best[0] and cand[1] < best[1]):
            best = cand
    if best is None:
        return None, False
    return best[1], best[0] == true_max


def contention_resolve(
    winner_links: Sequence[int], links: LinkSystem, rng: np.random.Generator
) -> list[int]:
    """Uniform-random maximal conflict-free subset of the group winners.

    Repeatedly activates a uniformly chosen remaining winner and drops winners
    that interfere with it or would exhaust a shared node's radios, so at
    least one contender always wins and conflicting contenders win equally
    often.
    """
    remaining = sorted(winner_links)
    activated: list[int] = []
    used: dict[int, int] = {}
    while remaining:
        pick = remaining.pop(int(rng.integers(len(remaining))))
        activated.append(pick)
        for v in links.endpoints(pick):
            used[v] = used.get(v, 0) + 1
        keep = []
        for m in remaining:
            if m in links.conflict[pick]:
                continue
            if any(used.get(v, 0) >= links.radios_at(v) for v in links.endpoints(m)):
                continue
            keep.append(m)
        remaining = keep
    return activated


class MaxGainScheduler:
    """One local-search iteration per slot over the grouped link system."""

    def __init__(
        self,
        links: LinkSystem,
        grouping: Grouping,
        master_seed: int,
        mode: str = "randomized",
        repeats: int = 1,
        gain_form: str = "rate_weighted",
    ):
        self.links = links
        self.grouping = grouping
        self.mode = mode
        self.repeats = max(1, int(repeats))
        self.gain_form = gain_form
        self._group_rngs = [
            np.random.Generator(
                np.random.PCG64(
                    np.random.SeedSequence(entropy=master_seed, spawn_key=(_GROUP_STREAM_TAG, g))
                )
            )
            for g in range(grouping.n_groups)
        ]
        self._contention_rng = np.random.Generator(
            np.random.PCG64(
                np.random.SeedSequence(entropy=master_seed, spawn_key=(_CONTENTION_STREAM_TAG, 0))
            )
        )
        self._max_group = max(grouping.group_sizes()) if grouping.n_groups else 0

    def step(self, prev_active: frozenset[int], weights: np.ndarray) -> tuple[frozenset[int], StepInfo]:
        links = self.links
        scores = links.scores(weights)
        winner_reports: dict[int, GainReport] = {}
        winners_meta = []

        for g, members in enumerate(self.grouping.members):
            rng = self._group_rngs[g]
            band = 1 + int(rng.integers(links.n_bands))
            reports: dict[int, GainReport] = {}
            gain_of: dict[int, int] = {}
            for v in members:
                if not links.outgoing_on(v, band):
                    continue
                loss, displaced = compute_loss(links, weights, v, band, prev_active)
                rep = compute_gain(links, weights, v, band, loss, displaced, self.gain_form)
                if rep.gain > 0:
                    reports[v] = rep
                    gain_of[v] = rep.gain
            winner, _ = local_max(members, gain_of, rng, self.mode, self.repeats)
            if winner is not None:
                rep = reports[winner]
                winner_reports[rep.best_link] = rep
                winners_meta.append((g, rep.best_link, band))

        hp = contention_resolve(list(winner_reports), links, self._contention_rng)

        removed: set[int] = set()
        for l in hp:
            assert l not in prev_active
            removed.update(winner_reports[l].displaced)
            removed.update(links.conflict[l] & prev_active)
        survivors = set(prev_active) - removed

        # Radios freed by displacement may still be short at an activated link's
        # endpoints; drop the cheapest surviving links there, mirroring the
        # tail-side displacement rule.
        used: dict[int, list[int]] = {}
        for l in list(hp) + sorted(survivors):
            for v in links.endpoints(l):
                used.setdefault(v, []).append(l)
        for v in sorted(used):
            over = len(used[v]) - links.radios_at(v)
            if over <= 0:
                continue
            droppable = sorted(
                (l for l in used[v] if l in survivors), key=lambda l: (scores[l], l)
            )
            for l in droppable[:over]:
                survivors.discard(l)
                removed.add(l)

        new_active = frozenset(hp) | frozenset(survivors)
        minislots = self.grouping.chi * minislot_budget(self._max_group) * self.repeats
        info = StepInfo(
            hp=tuple(sorted(hp)),
            displaced=tuple(sorted(removed)),
            w_plus=int(sum(scores[l] for l in hp)),
            w_minus=int(sum(scores[l] for l in removed)),
            minislots=minislots,
            winners=tuple(winners_meta),
        )
        return new_active, info


def mw_oracle(
    links: LinkSystem, weights: np.ndarray, cap: int = EXACT_CAP
) -> tuple[int, frozenset[int]]:
    """Exact max-weight schedule by branch and bound over link subsets.

    Ties resolve to the lexicographically smallest link-id set; zero-score
    links never enter, so the all-zero instance yields the empty schedule.
    """
    if links.n > cap:
        raise SizeLimitError(f"{links.n} links exceed oracle cap {cap}")
    scores = links.scores(weights)
    order = [l for l in range(links.n) if scores[l] > 0]
    suffix = np.zeros(len(order) + 1, dtype=np.int64)
    for i in range(len(order) - 1, -1, -1):
        suffix[i] = suffix[i + 1] + scores[order[i]]

    best_w = 0
    best_set: tuple[int, ...] = ()
    chosen: list[int] = []
    chosen_set: set[int] = set()
    used: dict[int, int] = {}

    def rec(i: int, cur: int):
        nonlocal best_w, best_set
        if cur + suffix[i] <= best_w:
            return
        if i == len(order):
            if cur > best_w:
                best_w = cur
                best_set = tuple(chosen)
            return
        l = order[i]
        if links.addable(l, chosen_set, used):
            chosen.append(l)
            chosen_set.add(l)
            for v in links.endpoints(l):
                used[v] = used.get(v, 0) + 1
            rec(i + 1, cur + int(scores[l]))
            chosen.pop()
            chosen_set.discard(l)
            for v in links.endpoints(l):
                used[v] -= 1
        rec(i + 1, cur)

    rec(0, 0)
    return best_w, frozenset(best_set)


def gms_schedule(links: LinkSystem, weights: np.ndarray) -> frozenset[int]:
    """Greedy maximal schedule: descending weighted rate, lowest id on ties.

    Zero-backlog links are skipped, so the all-zero instance returns empty.
    """
    scores = links.scores(weights)
    order = sorted((l for l in range(links.n) if scores[l] > 0), key=lambda l: (-scores[l], l))
    active: set[int] = set()
    used: dict[int, int] = {}
    for l in order:
        if links.addable(l, active, used):
            active.add(l)
            for v in links.endpoints(l):
                used[v] = used.get(v, 0) + 1
    return frozenset(active)


class QcsmaScheduler:
    """Slotted queue-CSMA step: coin-gated contention among links whose
    neighborhoods were idle in the previous slot."""

    def __init__(self, links: LinkSystem, master_seed: int):
        self.links = links
        self._rng = np.random.Generator(
            np.random.PCG64(
                np.random.SeedSequence(entropy=master_seed, spawn_key=(_QCSMA_STREAM_TAG, 0))
            )
        )

    @staticmethod
    def activation_probability(score: int) -> float:
        """a(w) = e^f/(1+e^f) with f = log(1 + w*r); zero backlog never contends."""
        if score <= 0:
            return 0.0
        return (1.0 + score) / (2.0 + score)

    def step(self, prev_active: frozenset[int], weights: np.ndarray) -> tuple[frozenset[int], StepInfo]:
        links = self.links
        rng = self._rng
        scores = links.scores(weights)
        decision = [
            l for l in range(links.n) if not (links.conflict[l] & prev_active)
        ]
        contenders = []
        for l in decision:
            if scores[l] > 0 and rng.random() < self.activation_probability(int(scores[l])):
                contenders.append(l)

        new_active: set[int] = set()
        used: dict[int, int] = {}
        remaining = list(contenders)
        bands = sorted({int(links.band[l]) for l in remaining})
        for b in bands:
            while True:
                pool = [l for l in remaining if int(links.band[l]) == b]
                if not pool:
                    break
                pick = pool[int(rng.integers(len(pool)))]
                remaining.remove(pick)
                if all(used.get(v, 0) < links.radios_at(v) for v in links.endpoints(pick)):
                    new_active.add(pick)
                    for v in links.endpoints(pick):
                        used[v] = used.get(v, 0) + 1
                    remaining = [m for m in remaining if m not in links.conflict[pick]]

        return frozenset(new_active), StepInfo()


class GmsScheduler:
    def __init__(self, links: LinkSystem):
        self.links = links

    def step(self, prev_active, weights):
        return gms_schedule(self.links, weights), StepInfo()


class OracleScheduler:
    """Max-weight schedule each slot from the pre-enumerated maximal schedules."""

    def __init__(self, links: LinkSystem, cap: int = EXACT_CAP):
        self.links = links
        self.schedules = enumerate_maximal_schedules(links, cap)
        self.matrix = schedule_matrix(links, self.schedules)

    def step(self, prev_active, weights):
        _, row = max_weight_over_schedules(self.matrix, self.links.scores(weights).astype(np.float64))
        return self.schedules[row], StepInfo()


def make_scheduler(name: str, links: LinkSystem, grouping: Optional[Grouping], seed: int, **params):
    if name == "maxgain":
        if grouping is None:
            raise InvalidInputError("maxgain requires a grouping")
        return MaxGainScheduler(links, grouping, seed, **params)
    if name == "mb_qcsma":
        return QcsmaScheduler(links, seed)
    if name == "mb_gms":
        return GmsScheduler(links)
    if name == "mw_oracle":
        return OracleScheduler(links)
    raise InvalidInputError(f"unknown scheduler {name!r}")


@dataclass
class SyncResult:
    """Series and counters from one slotted run."""

    qtot: np.ndarray
    steps: int
    delivered: int
    w: np.ndarray
    w_prev: np.ndarray
    w_plus: np.ndarray
    w_minus: np.ndarray
    wstar: Optional[np.ndarray] = None
    q_series: Optional[np.ndarray] = None
    sojourns: list[int] = field(default_factory=list)
    minislots_total: int = 0
    schedule_log: Optional[list[tuple[int, ...]]] = None


def run_sync(
    links: LinkSystem,
    grouping: Optional[Grouping],
    traffic_specs,
    scheduler: str,
    horizon: int,
    seed: int,
    scheduler_params: Optional[dict] = None,
    record_queues: bool = False,
    record_delays: bool = False,
    track_oracle: bool = False,
    log_schedules: bool = False,
    oracle_cap: int = EXACT_CAP,
) -> SyncResult:
    """Run one slotted simulation; every slot's schedule is validated."""
    sched = make_scheduler(scheduler, links, grouping, seed, **(scheduler_params or {}))
    source = TrafficSource(traffic_specs, seed)
    queues = QueueState(links.n_hops, record_delays=record_delays)

    oracle_matrix = None
    if track_oracle:
        schedules = enumerate_maximal_schedules(links, oracle_cap)
        oracle_matrix = schedule_matrix(links, schedules)

    qtot = np.zeros(horizon, dtype=np.int64)
    w_arr = np.zeros(horizon, dtype=np.int64)
    w_prev_arr = np.zeros(horizon, dtype=np.int64)
    w_plus_arr = np.zeros(horizon, dtype=np.int64)
    w_minus_arr = np.zeros(horizon, dtype=np.int64)
    wstar_arr = np.zeros(horizon, dtype=np.int64) if track_oracle else None
    q_series = np.zeros((horizon, links.n_hops), dtype=np.int32) if record_queues else None
    sched_log = [] if log_schedules else None

    prev: frozenset[int] = frozenset()
    delivered = 0
    minislots = 0

    for t in range(horizon):
        queues.add_arrivals(source.draw(t), t)
        weights = queues.q.copy()
        scores = links.scores(weights)

        active, info = sched.step(prev, weights)
        violation = links.validate(active)
        assert violation is None, f"slot {t}: {violation}"

        w_arr[t] = sum(int(scores[l]) for l in active)
        w_prev_arr[t] = sum(int(scores[l]) for l in prev)
        w_plus_arr[t] = info.w_plus
        w_minus_arr[t] = info.w_minus
        minislots += info.minislots
        if track_oracle:
            best, _ = max_weight_over_schedules(oracle_matrix, scores.astype(np.float64))
            wstar_arr[t] = int(round(best))

        departures = queues.serve(service_capacity(links, active), t)
        delivered += int(departures.sum())

        qtot[t] = queues.total
        if record_queues:
            q_series[t] = queues.q
        if log_schedules:
            sched_log.append(tuple(sorted(active)))

        prev = frozenset(l for l in active if queues.q[links.hop[l]] > 0)

    return SyncResult(
        qtot=qtot,
        steps=horizon,
        delivered=delivered,
        w=w_arr,
        w_prev=w_prev_arr,
        w_plus=w_plus_arr,
        w_minus=w_minus_arr,
        wstar=wstar_arr,
        q_series=q_series,
        sojourns=queues.sojourns,
        minislots_total=minislots,
        schedule_log=sched_log,
    )
