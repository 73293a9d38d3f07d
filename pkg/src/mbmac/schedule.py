"""Schedules over generalized links: feasibility, validation, exhaustive enumeration.

A feasible schedule activates links so that (SI) no two mutual interferers are
both active and (MR) every node hosts at most K active links, each on a
distinct band.  Same-band links sharing a node always interfere, so SI already
forces the distinct-band part; MR adds the per-node radio count.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import SizeLimitError
from .topology import Deployment, GeneralizedLink

EXACT_CAP = 24  # exhaustive enumeration guard


class LinkSystem:
    """Array-backed view of the generalized links used by every scheduler."""

    def __init__(
        self,
        links: Sequence[GeneralizedLink],
        n_hops: int,
        n_bands: int,
        radios: int | Mapping[int, int],
        nodes: Sequence[int],
    ):
        self.links = tuple(links)
        self.n = len(self.links)
        self.n_hops = n_hops
        self.n_bands = n_bands
        self.nodes = tuple(sorted(nodes))
        self._radios = radios

        self.rate = np.array([l.rate for l in self.links], dtype=np.int64)
        self.hop = np.array([l.hop for l in self.links], dtype=np.int64)
        self.band = np.array([l.band for l in self.links], dtype=np.int64)  # 1-based
        self.tail = np.array([l.tail for l in self.links], dtype=np.int64)
        self.head = np.array([l.head for l in self.links], dtype=np.int64)

        self.conflict: tuple[frozenset[int], ...] = tuple(l.interferers for l in self.links)
        self.incident: dict[int, tuple[int, ...]] = {v: () for v in self.nodes}
        inc: dict[int, list[int]] = {v: [] for v in self.nodes}
        out: dict[tuple[int, int], list[int]] = {}
        for l in self.links:
            inc[l.tail].append(l.id)
            inc[l.head].append(l.id)
            out.setdefault((l.tail, l.band), []).append(l.id)
        self.incident = {v: tuple(sorted(ids)) for v, ids in inc.items()}
        self.outgoing = {k: tuple(sorted(ids)) for k, ids in out.items()}

    @classmethod
    def from_deployment(cls, deployment: Deployment, links: Sequence[GeneralizedLink]):
        return cls(
            links,
            n_hops=len(deployment.hop_pairs),
            n_bands=len(deployment.bands),
            radios=deployment.radios,
            nodes=deployment.node_ids,
        )

    def radios_at(self, node: int) -> int:
        if isinstance(self._radios, int):
            return self._radios
        return self._radios[node]

    def scores(self, weights: np.ndarray) -> np.ndarray:
        """Per-link weighted rate w_l * r_l with w_l the backlog of the link's hop."""
        return weights[self.hop] * self.rate

    def outgoing_on(self, node: int, band: int) -> tuple[int, ...]:
        return self.outgoing.get((node, band), ())

    def endpoints(self, l: int) -> tuple[int, int]:
        return (int(self.tail[l]), int(self.head[l]))

    def validate(self, active: Iterable[int]) -> Optional[str]:
        """None if feasible, else a description of the first violation found."""
        act = sorted(set(active))
        act_set = set(act)
        for l in act:
            hit = self.conflict[l] & act_set
            if hit:
                return f"SI violation: links {l} and {min(hit)} interfere"
        used: dict[int, list[int]] = {}
        for l in act:
            for v in self.endpoints(l):
                used.setdefault(v, []).append(l)
        for v in sorted(used):
            if len(used[v]) > self.radios_at(v):
                return (
                    f"MR violation: node {v} has {len(used[v])} active links "
                    f"with {self.radios_at(v)} radios"
                )
            bands = [int(self.band[l]) for l in used[v]]
            if len(set(bands)) != len(bands):
                return f"MR violation: node {v} has two active links on one band"
        return None

    def addable(self, l: int, active: set[int], used: Mapping[int, int]) -> bool:
        """Can link l join the partial schedule without breaking SI or MR?"""
        if l in active or (self.conflict[l] & active):
            return False
        for v in self.endpoints(l):
            if used.get(v, 0) >= self.radios_at(v):
                return False
        return True


@dataclass(frozen=True)
class Schedule:
    """A validated set of active links with its per-band and per-node views."""

    active: frozenset[int]
    by_band: Mapping[int, frozenset[int]]
    radios_used: Mapping[int, int]

    @classmethod
    def build(cls, links: LinkSystem, active: Iterable[int]) -> "Schedule":
        act = frozenset(active)
        by_band: dict[int, set[int]] = {}
        used: dict[int, int] = {}
        for l in act:
            by_band.setdefault(int(links.band[l]), set()).add(l)
            for v in links.endpoints(l):
                used[v] = used.get(v, 0) + 1
        return cls(
            active=act,
            by_band={b: frozenset(s) for b, s in by_band.items()},
            radios_used=used,
        )


def validate_schedule(active: Iterable[int], links: LinkSystem) -> Optional[str]:
    return links.validate(active)


def enumerate_maximal_schedules(links: LinkSystem, cap: int = EXACT_CAP) -> list[frozenset[int]]:
    """All maximal feasible schedules (no link can be added), Bron-Kerbosch style.

    With non-negative scores, maximizing over maximal schedules equals
    maximizing over all feasible schedules, and the stability polytope is the
    downward closure of their service vectors.
    """
    if links.n > cap:
        raise SizeLimitError(f"{links.n} links exceed exhaustive cap {cap}")

    out: list[frozenset[int]] = []

    def addable_after(l: int, chosen: list[int], used: dict[int, int]) -> bool:
        if any(l in links.conflict[c] for c in chosen):
            return False
        return all(used.get(v, 0) < links.radios_at(v) for v in links.endpoints(l))

    def extend(chosen: list[int], used: dict[int, int], cand: list[int], dead: list[int]):
        if not cand and not dead:
            out.append(frozenset(chosen))
            return
        for i, v in enumerate(cand):
            chosen.append(v)
            used2 = dict(used)
            for node in links.endpoints(v):
                used2[node] = used2.get(node, 0) + 1
            cand2 = [u for u in cand[i + 1 :] if addable_after(u, chosen, used2)]
            dead2 = [u for u in dead + cand[:i] if addable_after(u, chosen, used2)]
            extend(chosen, used2, cand2, dead2)
            chosen.pop()

    extend([], {}, list(range(links.n)), [])
    if not out:
        out.append(frozenset())
    return out


def schedule_matrix(links: LinkSystem, schedules: Sequence[frozenset[int]]) -> np.ndarray:
    """0/1 membership matrix (n_schedules x n_links)."""
    mat = np.zeros((len(schedules), links.n), dtype=np.int64)
    for i, s in enumerate(schedules):
        for l in s:
            mat[i, l] = 1
    return mat


def service_vectors(links: LinkSystem, schedules: Sequence[frozenset[int]]) -> np.ndarray:
    """Per-hop service rate of each schedule (n_schedules x n_hops)."""
    vec = np.zeros((len(schedules), links.n_hops), dtype=np.float64)
    for i, s in enumerate(schedules):
        for l in s:
            vec[i, links.hop[l]] += links.rate[l]
    return vec
