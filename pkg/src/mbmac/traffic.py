"""Per-hop arrival processes and the queue recursion driving link weights.

Arrivals are drawn at the beginning of each slot from per-hop RNG streams
derived from the master seed, so swapping schedulers never perturbs the
traffic.  Queues follow q(t+1) = [q(t) + A(t) - D(t)]^+ with departures
capped by both backlog and scheduled service.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, InvalidInputError

_TRAFFIC_STREAM_TAG = 0x7A41


@dataclass(frozen=True)
class ArrivalSpec:
    """Arrival process of one hop (or, with per-hop scaling, all hops).

    kinds: ``bernoulli`` (one packet w.p. rate), ``poisson`` (Poisson(rate)),
    ``zipf_burst`` (bursts at exponential epochs, burst sizes truncated
    Zipf(zipf_exponent) on 1..zipf_max; truncation keeps the second moment
    finite, which exponent 1.6 alone would not).
    """

    kind: str = "bernoulli"
    rate: float = 0.1  # mean packets/slot
    zipf_exponent: float = 1.6
    zipf_max: int = 64
    mean_interburst_slots: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("bernoulli", "poisson", "zipf_burst"):
            raise ConfigurationError(f"unknown arrival kind {self.kind!r}")
        if self.rate < 0:
            raise ConfigurationError("arrival rate must be >= 0")
        if self.kind == "bernoulli" and self.rate > 1:
            raise ConfigurationError("bernoulli rate must be <= 1")
        if self.zipf_exponent <= 1:
            raise ConfigurationError("zipf exponent must be > 1")


def zipf_pmf(exponent: float, support_max: int) -> np.ndarray:
    """Truncated Zipf pmf over 1..support_max."""
    k = np.arange(1, support_max + 1, dtype=np.float64)
    w = k ** (-exponent)
    return w / w.sum()


def zipf_mean(exponent: float, support_max: int) -> float:
    pmf = zipf_pmf(exponent, support_max)
    return float(np.dot(pmf, np.arange(1, support_max + 1)))


class TrafficSource:
    """Drawn arrivals for all hops, one independent stream per hop."""

    def __init__(self, specs: Sequence[ArrivalSpec], master_seed: int):
        self.specs = tuple(specs)
        self.n_hops = len(self.specs)
        self._rngs = [
            np.random.Generator(
                np.random.PCG64(
                    np.random.SeedSequence(entropy=master_seed, spawn_key=(_TRAFFIC_STREAM_TAG, h))
                )
            )
            for h in range(self.n_hops)
        ]
        self._zipf_cdf = {}
        self._burst_rate = {}
        for h, spec in enumerate(self.specs):
            if spec.kind == "zipf_burst":
                pmf = zipf_pmf(spec.zipf_exponent, spec.zipf_max)
                self._zipf_cdf[h] = np.cumsum(pmf)
                mean_burst = zipf_mean(spec.zipf_exponent, spec.zipf_max)
                if spec.mean_interburst_slots is not None:
                    self._burst_rate[h] = 1.0 / spec.mean_interburst_slots
                else:
                    self._burst_rate[h] = spec.rate / mean_burst

    def draw(self, slot: int) -> np.ndarray:
        """Arrivals for every hop in this slot (i.i.d. across slots)."""
        out = np.zeros(self.n_hops, dtype=np.int64)
        for h, spec in enumerate(self.specs):
            rng = self._rngs[h]
            if spec.kind == "bernoulli":
                out[h] = 1 if rng.random() < spec.rate else 0
            elif spec.kind == "poisson":
                out[h] = rng.poisson(spec.rate)
            else:
                n_bursts = rng.poisson(self._burst_rate[h])
                total = 0
                for _ in range(n_bursts):
                    total += int(np.searchsorted(self._zipf_cdf[h], rng.random()) + 1)
                out[h] = total
        return out

    def mean_rates(self) -> np.ndarray:
        rates = np.zeros(self.n_hops)
        for h, spec in enumerate(self.specs):
            if spec.kind == "zipf_burst":
                rates[h] = self._burst_rate[h] * zipf_mean(spec.zipf_exponent, spec.zipf_max)
            else:
                rates[h] = spec.rate
        return rates


def uniform_specs(n_hops: int, per_hop_rate: np.ndarray | float, kind: str = "bernoulli",
                  **kwargs) -> list[ArrivalSpec]:
    rates = np.broadcast_to(np.asarray(per_hop_rate, dtype=np.float64), (n_hops,))
    return [ArrivalSpec(kind=kind, rate=float(r), **kwargs) for r in rates]


class QueueState:
    """Per-hop backlogs with optional per-packet delay accounting."""

    def __init__(self, n_hops: int, record_delays: bool = False):
        self.q = np.zeros(n_hops, dtype=np.int64)
        self.record_delays = record_delays
        self._stamps: list[deque] = [deque() for _ in range(n_hops)] if record_delays else []
        self.sojourns: list[int] = []
        self.total_arrived = np.zeros(n_hops, dtype=np.int64)
        self.total_departed = np.zeros(n_hops, dtype=np.int64)

    def add_arrivals(self, arrivals: np.ndarray, slot: int):
        if np.any(arrivals < 0):
            raise InvalidInputError("negative arrivals")
        self.q += arrivals
        self.total_arrived += arrivals
        if self.record_delays:
            for h in np.flatnonzero(arrivals):
                self._stamps[h].extend([slot] * int(arrivals[h]))

    def serve(self, capacity: np.ndarray, slot: int) -> np.ndarray:
        """Depart min(backlog, capacity) packets per hop; FIFO for delay stats."""
        departures = np.minimum(self.q, capacity.astype(np.int64))
        self.q -= departures
        self.total_departed += departures
        if self.record_delays:
            for h in np.flatnonzero(departures):
                st = self._stamps[h]
                for _ in range(int(departures[h])):
                    self.sojourns.append(slot - st.popleft() + 1)
        return departures

    @property
    def total(self) -> int:
        return int(self.q.sum())


def service_capacity(links, active: Sequence[int]) -> np.ndarray:
    """Packets/slot available to each hop under a schedule (rates add across bands)."""
    cap = np.zeros(links.n_hops, dtype=np.int64)
    for l in active:
        cap[links.hop[l]] += links.rate[l]
    return cap


def apply_service(queues: QueueState, active: Sequence[int], links, slot: int) -> np.ndarray:
    """One service step of the queue recursion; the schedule must be feasible."""
    violation = links.validate(active)
    assert violation is None, f"infeasible schedule passed to apply_service: {violation}"
    return queues.serve(service_capacity(links, active), slot)
