"""One-time partition of nodes into leader-centered star groups on the lowest band.

Leaders form an independent dominating set of the lowest-band connectivity
graph; every other node follows one adjacent leader.  Groups are colored so
that no two groups with interfering links share a color, which lets groups
run their max-gain search in disjoint mini-slot windows.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidInputError
from .topology import BandGraph, GeneralizedLink


@dataclass(frozen=True)
class Grouping:
    """Star partition of the nodes plus coloring and interference spread sigma."""

    leaders: tuple[int, ...]
    members: tuple[tuple[int, ...], ...]  # per group, leader included, sorted
    colors: tuple[int, ...]  # per group
    chi: int
    sigma: int
    singleton_isolated: tuple[int, ...]  # nodes with no lowest-band neighbors

    @property
    def n_groups(self) -> int:
        return len(self.leaders)

    def group_of(self, node: int) -> int:
        for g, mem in enumerate(self.members):
            if node in mem:
                return g
        raise InvalidInputError(f"node {node} not in any group")

    def group_sizes(self) -> tuple[int, ...]:
        return tuple(len(m) for m in self.members)


def compute_independent_dominating_set(
    band_graph: BandGraph, nodes: Sequence[int], seed: int
) -> set[int]:
    """Randomized-permutation greedy: nodes activate in seeded random order and
    join if no neighbor joined before them.  Output is maximal independent,
    hence independent and dominating."""
    order = list(nodes)
    rng = np.random.default_rng(seed)
    rng.shuffle(order)
    adj = _adjacency(band_graph, nodes)
    leaders: set[int] = set()
    for v in order:
        if not (adj[v] & leaders):
            leaders.add(v)
    return leaders


def form_groups(
    band_graph: BandGraph, nodes: Sequence[int], leaders: set[int]
) -> tuple[tuple[int, ...], tuple[tuple[int, ...], ...]]:
    """Attach every non-leader to its lowest-id adjacent leader."""
    adj = _adjacency(band_graph, nodes)
    for v in nodes:
        if v not in leaders and not (adj[v] & leaders):
            raise InvalidInputError(f"leader set does not dominate node {v}")
    for u in leaders:
        if adj[u] & leaders:
            raise InvalidInputError("leader set is not independent")
    ordered = tuple(sorted(leaders))
    groups = {u: [u] for u in ordered}
    for v in sorted(nodes):
        if v in leaders:
            continue
        groups[min(adj[v] & leaders)].append(v)
    return ordered, tuple(tuple(sorted(g)) for g in (groups[u] for u in ordered))


def color_groups(
    members: Sequence[Sequence[int]], links: Sequence[GeneralizedLink]
) -> tuple[tuple[int, ...], int]:
    """Greedy proper coloring of the group-conflict graph, highest degree first.

    Groups conflict when a link with tail in one interferes with a link whose
    tail is in the other (on any band).
    """
    n = len(members)
    group_of = {v: g for g, mem in enumerate(members) for v in mem}
    by_id = {l.id: l for l in links}
    conflict = [set() for _ in range(n)]
    for l in links:
        g = group_of[l.tail]
        for j in l.interferers:
            gj = group_of[by_id[j].tail]
            if gj != g:
                conflict[g].add(gj)
                conflict[gj].add(g)
    order = sorted(range(n), key=lambda g: (-len(conflict[g]), g))
    colors = [-1] * n
    for g in order:
        used = {colors[h] for h in conflict[g] if colors[h] >= 0}
        c = 0
        while c in used:
            c += 1
        colors[g] = c
    chi = max(colors) + 1 if colors else 0
    return tuple(colors), chi


def compute_sigma(
    members: Sequence[Sequence[int]], links: Sequence[GeneralizedLink]
) -> int:
    """Max over links of the number of distinct foreign groups interfering with it."""
    group_of = {v: g for g, mem in enumerate(members) for v in mem}
    by_id = {l.id: l for l in links}
    sigma = 0
    for l in links:
        own = group_of[l.tail]
        foreign = {group_of[by_id[j].tail] for j in l.interferers} - {own}
        sigma = max(sigma, len(foreign))
    return sigma


def build_grouping(
    band_graph: BandGraph,
    nodes: Sequence[int],
    links: Sequence[GeneralizedLink],
    seed: int,
) -> Grouping:
    """Full one-time grouping pipeline on the lowest-band graph."""
    adj = _adjacency(band_graph, nodes)
    leaders = compute_independent_dominating_set(band_graph, nodes, seed)
    ordered, members = form_groups(band_graph, nodes, leaders)
    colors, chi = color_groups(members, links)
    sigma = compute_sigma(members, links)
    isolated = tuple(
        u for u, mem in zip(ordered, members) if len(mem) == 1 and not adj[u]
    )
    return Grouping(
        leaders=ordered,
        members=members,
        colors=colors,
        chi=chi,
        sigma=sigma,
        singleton_isolated=isolated,
    )


def _adjacency(band_graph: BandGraph, nodes: Sequence[int]) -> dict[int, set[int]]:
    adj: dict[int, set[int]] = {v: set() for v in nodes}
    for u, v in band_graph.edges:
        adj[u].add(v)
        adj[v].add(u)
    return adj
