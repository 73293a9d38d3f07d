"""Radio topology: per-band connectivity graphs, generalized links, graph parameters.

A node deployment plus a threshold PHY model yields, per frequency band, a
connectivity graph (who can exchange data) and a decode graph (who can hear
whom at the lowest modulation, used for interference).  Every (hop, band)
combination with a non-zero data rate becomes one generalized link, the
atomic schedulable unit, carrying its own rate and interference set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import (
    ConfigurationError,
    GenerationError,
    InvalidDeploymentError,
    InvalidInputError,
    SizeLimitError,
)

# TV whitespace plan: 6 MHz channels covering 512-698 MHz.
WHITESPACE_LOW_MHZ = 512.0
WHITESPACE_HIGH_MHZ = 698.0
WHITESPACE_WIDTH_MHZ = 6.0


@dataclass(frozen=True)
class Band:
    """A contiguous slice of spectrum. Indices are 1-based and frequency-ordered."""

    index: int
    center_mhz: float
    width_mhz: float


@dataclass(frozen=True)
class Deployment:
    """Node positions, radio counts, band plan and traffic hop pairs."""

    nodes: tuple[tuple[int, float, float], ...]
    radios: int | Mapping[int, int]
    bands: tuple[Band, ...]
    hop_pairs: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        ids = [n[0] for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise InvalidDeploymentError("duplicate node ids")
        if not self.bands:
            raise InvalidDeploymentError("at least one band required")
        centers = [b.center_mhz for b in self.bands]
        if sorted(centers) != centers:
            raise InvalidDeploymentError("bands must be ordered by center frequency")
        if [b.index for b in self.bands] != list(range(1, len(self.bands) + 1)):
            raise InvalidDeploymentError("band indices must be contiguous from 1")
        for b in self.bands:
            if b.width_mhz <= 0:
                raise InvalidDeploymentError(f"band {b.index} has non-positive width")

    @property
    def node_ids(self) -> tuple[int, ...]:
        return tuple(n[0] for n in self.nodes)

    def position(self, node: int) -> tuple[float, float]:
        for nid, x, y in self.nodes:
            if nid == node:
                return (x, y)
        raise InvalidInputError(f"unknown node {node}")

    def radios_at(self, node: int) -> int:
        if isinstance(self.radios, int):
            return self.radios
        return self.radios[node]

    def distance(self, u: int, v: int) -> float:
        ux, uy = self.position(u)
        vx, vy = self.position(v)
        return math.hypot(ux - vx, uy - vy)


@dataclass(frozen=True)
class PhyModel:
    """Threshold PHY: fixed transmit power, path-loss model, discrete rate table.

    ``rate_table`` maps a link-budget margin (SNR, dB) to packets/slot: entries
    are (min_margin_db, rate) sorted ascending, closed lower boundary.  Below
    the lowest entry there is no connectivity.  ``decode_margin_db`` is the
    more sensitive threshold at which a node can still decode the lowest
    possible modulation; it defines interference range and defaults to 10 dB
    below the connectivity threshold.
    """

    tx_power_dbm: float = 20.0
    noise_floor_dbm: float = -94.0
    loss_model: str = "freespace"
    rate_table: tuple[tuple[float, int], ...] = ((30.0, 1), (40.0, 2), (50.0, 3))
    decode_margin_db: Optional[float] = None

    def __post_init__(self):
        if not self.rate_table:
            raise ConfigurationError("rate table must not be empty")
        margins = [m for m, _ in self.rate_table]
        if sorted(margins) != margins:
            raise ConfigurationError("rate table margins must be ascending")
        if self.decode_margin_db is None:
            object.__setattr__(self, "decode_margin_db", margins[0] - 10.0)

    def margin_db(self, distance_m: float, freq_mhz: float) -> float:
        """Link-budget margin (SNR in dB) at a given distance and frequency."""
        loss = path_loss_db(distance_m, freq_mhz, self.loss_model)
        return self.tx_power_dbm - loss - self.noise_floor_dbm

    def rate(self, distance_m: float, freq_mhz: float) -> int:
        return rate_table_lookup(self.margin_db(distance_m, freq_mhz), self.rate_table)

    def can_decode(self, distance_m: float, freq_mhz: float) -> bool:
        return self.margin_db(distance_m, freq_mhz) >= self.decode_margin_db


@dataclass(frozen=True)
class BandGraph:
    """Undirected connectivity graph of one band."""

    band: Band
    edges: frozenset[tuple[int, int]]  # normalized (min, max) node pairs
    max_degree: int

    def neighbors(self, node: int) -> set[int]:
        out = set()
        for u, v in self.edges:
            if u == node:
                out.add(v)
            elif v == node:
                out.add(u)
        return out


@dataclass(frozen=True)
class GeneralizedLink:
    """One (hop direction, band) transmission opportunity."""

    id: int
    tail: int
    head: int
    band: int  # 1-based band index
    rate: int  # packets per slot
    hop: int  # index into Deployment.hop_pairs
    interferers: frozenset[int] = field(default_factory=frozenset)


@dataclass(frozen=True)
class GraphParams:
    """Interference degree, per-band 2-hop MIS cover and max degree."""

    beta_max: int
    kappa: tuple[int, ...]  # per band, same order as Deployment.bands
    delta: int
    exact: bool

    @property
    def kappa_1(self) -> int:
        return self.kappa[0]

    @property
    def kappa_max(self) -> int:
        return max(self.kappa)


def path_loss_db(distance_m: float, freq_mhz: float, model: str = "freespace") -> float:
    """Path loss in dB; monotone non-decreasing in both distance and frequency.

    ``freespace``: 20*log10(d_km) + 20*log10(f_MHz) + 32.45 (inverse square in
    both distance and carrier frequency).  ``itu_indoor``: the ITU indoor
    model with distance power decay 30 and no floor penetration,
    20*log10(f_MHz) + 30*log10(d_m) - 28.
    """
    if distance_m <= 0 or freq_mhz <= 0:
        raise InvalidInputError("distance and frequency must be positive")
    if model == "freespace":
        return 20.0 * math.log10(distance_m / 1000.0) + 20.0 * math.log10(freq_mhz) + 32.45
    if model == "itu_indoor":
        return 20.0 * math.log10(freq_mhz) + 30.0 * math.log10(distance_m) - 28.0
    raise InvalidInputError(f"unknown path loss model {model!r}")


def rate_table_lookup(margin_db: float, rate_table: Sequence[tuple[float, int]]) -> int:
    """Highest rate whose margin threshold is met; 0 below connectivity."""
    if not rate_table:
        raise ConfigurationError("rate table must not be empty")
    rate = 0
    for min_margin, r in rate_table:
        if margin_db >= min_margin:
            rate = r
        else:
            break
    return rate


def whitespace_band_plan(count: int, seed: Optional[int] = None) -> tuple[Band, ...]:
    """Pick ``count`` distinct 6 MHz TV whitespace channels (sorted, reindexed)."""
    n_channels = int((WHITESPACE_HIGH_MHZ - WHITESPACE_LOW_MHZ) // WHITESPACE_WIDTH_MHZ)
    if not 1 <= count <= n_channels:
        raise InvalidInputError(f"band count must be in [1, {n_channels}]")
    if seed is None:
        chosen = list(range(count))
    else:
        rng = np.random.default_rng(seed)
        chosen = sorted(rng.choice(n_channels, size=count, replace=False).tolist())
    return tuple(
        Band(
            index=i + 1,
            center_mhz=WHITESPACE_LOW_MHZ + WHITESPACE_WIDTH_MHZ * ch + WHITESPACE_WIDTH_MHZ / 2,
            width_mhz=WHITESPACE_WIDTH_MHZ,
        )
        for i, ch in enumerate(chosen)
    )


def single_band_plan(center_mhz: float = 600.0, width_mhz: float = 6.0) -> tuple[Band, ...]:
    return (Band(index=1, center_mhz=center_mhz, width_mhz=width_mhz),)


def build_band_graph(deployment: Deployment, band: Band, phy: PhyModel) -> BandGraph:
    """Connectivity graph: edge iff the pair decodes data (non-zero rate) on the band."""
    return _threshold_graph(deployment, band, phy, decode=False)


def build_decode_graph(deployment: Deployment, band: Band, phy: PhyModel) -> BandGraph:
    """Audibility graph at the lowest possible modulation (interference range)."""
    return _threshold_graph(deployment, band, phy, decode=True)


def _threshold_graph(deployment, band, phy, decode):
    ids = deployment.node_ids
    edges = set()
    degree = {nid: 0 for nid in ids}
    for i, u in enumerate(ids):
        for v in ids[i + 1 :]:
            d = deployment.distance(u, v)
            if decode:
                connected = phy.can_decode(d, band.center_mhz)
            else:
                connected = phy.rate(d, band.center_mhz) > 0
            if connected:
                edges.add((min(u, v), max(u, v)))
                degree[u] += 1
                degree[v] += 1
    max_deg = max(degree.values()) if degree else 0
    return BandGraph(band=band, edges=frozenset(edges), max_degree=max_deg)


def enumerate_generalized_links(
    deployment: Deployment,
    phy: PhyModel,
    aci_window_mhz: Optional[float] = None,
) -> list[GeneralizedLink]:
    """One link per (hop pair, band) with non-zero rate, interference sets populated.

    Two links on the same band interfere if they share an endpoint node or any
    endpoint of one can decode an endpoint of the other at the lowest
    modulation (secondary interference).  With ACI enabled, links on bands
    whose centers are within the window additionally interfere when they share
    an endpoint node.
    """
    if not deployment.hop_pairs:
        raise InvalidDeploymentError("deployment has no hop pairs")
    decode_edges = {
        b.index: build_decode_graph(deployment, b, phy).edges for b in deployment.bands
    }
    centers = {b.index: b.center_mhz for b in deployment.bands}

    raw = []
    for h, (u, v) in enumerate(deployment.hop_pairs):
        d = deployment.distance(u, v)
        found = False
        for b in deployment.bands:
            r = phy.rate(d, b.center_mhz)
            if r > 0:
                raw.append((h, b.index, u, v, r))
                found = True
        if not found:
            raise InvalidDeploymentError(f"hop pair {(u, v)} has zero rate on all bands")

    raw.sort(key=lambda t: (t[0], t[1]))
    links = [
        GeneralizedLink(id=i, tail=u, head=v, band=bi, rate=r, hop=h)
        for i, (h, bi, u, v, r) in enumerate(raw)
    ]

    interferers: list[set[int]] = [set() for _ in links]
    for a in links:
        ends_a = (a.tail, a.head)
        for b in links[a.id + 1 :]:
            ends_b = (b.tail, b.head)
            shared = bool(set(ends_a) & set(ends_b))
            conflict = False
            if a.band == b.band:
                if shared:
                    conflict = True
                else:
                    dec = decode_edges[a.band]
                    conflict = any(
                        (min(x, y), max(x, y)) in dec for x in ends_a for y in ends_b
                    )
            elif aci_window_mhz is not None and shared:
                conflict = abs(centers[a.band] - centers[b.band]) <= aci_window_mhz
            if conflict:
                interferers[a.id].add(b.id)
                interferers[b.id].add(a.id)

    return [replace(l, interferers=frozenset(interferers[l.id])) for l in links]


# ---------------------------------------------------------------------------
# Graph parameters (interference degree, 2-hop MIS cover)
# ---------------------------------------------------------------------------


def _mis_size(nbr_masks: list[int], verts: int) -> int:
    """Maximum independent set size over a vertex bitmask (branch and bound)."""
    best = 0

    def rec(remaining: int, count: int):
        nonlocal best
        if count + bin(remaining).count("1") <= best:
            return
        if remaining == 0:
            if count > best:
                best = count
            return
        # Branch on the remaining vertex of highest degree.
        pivot, pivot_deg = -1, -1
        m = remaining
        while m:
            v = (m & -m).bit_length() - 1
            deg = bin(nbr_masks[v] & remaining).count("1")
            if deg > pivot_deg:
                pivot, pivot_deg = v, deg
            m &= m - 1
        rec(remaining & ~(1 << pivot) & ~nbr_masks[pivot], count + 1)
        rec(remaining & ~(1 << pivot), count)

    rec(verts, 0)
    return best


def _mis_upper_bound(nbr_masks: list[int], verts: int) -> int:
    """Greedy matching bound: an IS holds at most one endpoint per matched edge."""
    n = bin(verts).count("1")
    matched = 0
    used = 0
    m = verts
    while m:
        v = (m & -m).bit_length() - 1
        m &= m - 1
        if used & (1 << v):
            continue
        partners = nbr_masks[v] & verts & ~used
        if partners:
            w = (partners & -partners).bit_length() - 1
            used |= (1 << v) | (1 << w)
            matched += 1
    return n - matched


def compute_graph_params(
    links: Sequence[GeneralizedLink],
    band_graphs: Sequence[BandGraph],
    mode: str = "exact",
    cap: int = 24,
) -> GraphParams:
    """Interference degree beta_max and per-band 2-hop MIS cover kappa_j.

    Exact mode enumerates maximum independent sets (beta over each link's
    closed interference neighborhood in its band's link-conflict graph, kappa
    over each node's 2-hop neighborhood in the connectivity graph) and refuses
    instances above ``cap``.  Bound mode returns sound greedy upper bounds
    flagged ``exact=False``.
    """
    if mode not in ("exact", "bound"):
        raise InvalidInputError(f"unknown mode {mode!r}")
    exact = mode == "exact"

    by_band: dict[int, list[GeneralizedLink]] = {}
    for l in links:
        by_band.setdefault(l.band, []).append(l)

    beta_max = 1
    for band_links in by_band.values():
        if exact and len(band_links) > cap:
            raise SizeLimitError(
                f"{len(band_links)} links on one band exceeds exact cap {cap}"
            )
        idx = {l.id: i for i, l in enumerate(band_links)}
        same = {l.id for l in band_links}
        masks = [0] * len(band_links)
        for l in band_links:
            for j in l.interferers:
                if j in same:
                    masks[idx[l.id]] |= 1 << idx[j]
        for l in band_links:
            i = idx[l.id]
            verts = (1 << i) | masks[i]
            size = _mis_size(masks, verts) if exact else _mis_upper_bound(masks, verts)
            beta_max = max(beta_max, size)

    kappa = []
    for bg in band_graphs:
        nodes = sorted({n for e in bg.edges for n in e})
        adj = {n: set() for n in nodes}
        for u, v in bg.edges:
            adj[u].add(v)
            adj[v].add(u)
        k_band = 0
        for v in nodes:
            two_hop = {v} | adj[v] | {w for u in adj[v] for w in adj[u]}
            sub = sorted(two_hop)
            if exact and len(sub) > cap:
                raise SizeLimitError(
                    f"2-hop neighborhood of node {v} has {len(sub)} nodes, above cap {cap}"
                )
            pos = {n: i for i, n in enumerate(sub)}
            masks = [0] * len(sub)
            for u in sub:
                for w in adj[u]:
                    if w in pos:
                        masks[pos[u]] |= 1 << pos[w]
            verts = (1 << len(sub)) - 1
            size = _mis_size(masks, verts) if exact else _mis_upper_bound(masks, verts)
            k_band = max(k_band, size)
        kappa.append(max(k_band, 1) if nodes else 0)

    delta = max((bg.max_degree for bg in band_graphs), default=0)
    return GraphParams(beta_max=beta_max, kappa=tuple(kappa), delta=delta, exact=exact)


# ---------------------------------------------------------------------------
# Deployment generators
# ---------------------------------------------------------------------------


def generate_grid(
    n_side: int,
    spacing_m: float,
    bands: tuple[Band, ...],
    radios: int = 1,
) -> Deployment:
    """Square lattice of n_side x n_side nodes."""
    if n_side < 1 or spacing_m <= 0:
        raise InvalidInputError("n_side >= 1 and spacing > 0 required")
    nodes = tuple(
        (r * n_side + c, c * spacing_m, r * spacing_m)
        for r in range(n_side)
        for c in range(n_side)
    )
    return Deployment(nodes=nodes, radios=radios, bands=bands)


def generate_random(
    n: int,
    area_m2: float,
    min_dist_m: float,
    bands: tuple[Band, ...],
    seed: int,
    radios: int = 1,
    max_tries: int = 20000,
) -> Deployment:
    """Uniform placement in a square area, rejecting points closer than min_dist."""
    if n < 1 or area_m2 <= 0 or min_dist_m < 0:
        raise InvalidInputError("n >= 1, positive area and non-negative min_dist required")
    side = math.sqrt(area_m2)
    rng = np.random.default_rng(seed)
    pts: list[tuple[float, float]] = []
    tries = 0
    while len(pts) < n:
        if tries >= max_tries:
            raise GenerationError(
                f"could not place {n} nodes with min distance {min_dist_m} m "
                f"in {area_m2} m^2 after {max_tries} tries"
            )
        tries += 1
        x, y = rng.uniform(0.0, side, size=2)
        if all(math.hypot(x - px, y - py) >= min_dist_m for px, py in pts):
            pts.append((float(x), float(y)))
    nodes = tuple((i, x, y) for i, (x, y) in enumerate(pts))
    return Deployment(nodes=nodes, radios=radios, bands=bands)


def generate_chain(
    n: int,
    spacing_m: float,
    bands: tuple[Band, ...],
    radios: int = 1,
) -> Deployment:
    """Linear chain of n nodes with consecutive hop pairs (n-1 hops)."""
    if n < 1 or spacing_m <= 0:
        raise InvalidInputError("n >= 1 and spacing > 0 required")
    nodes = tuple((i, i * spacing_m, 0.0) for i in range(n))
    hops = tuple((i, i + 1) for i in range(n - 1))
    return Deployment(nodes=nodes, radios=radios, bands=bands, hop_pairs=hops)


def choose_hop_pairs(
    deployment: Deployment, phy: PhyModel, count: int, seed: int
) -> Deployment:
    """Sample ``count`` distinct ordered hop pairs among band-connected node pairs."""
    candidates = []
    for b in deployment.bands:
        for u, v in build_band_graph(deployment, b, phy).edges:
            candidates.append((u, v))
            candidates.append((v, u))
    candidates = sorted(set(candidates))
    if count > len(candidates):
        raise GenerationError(
            f"requested {count} hop pairs but only {len(candidates)} connected pairs exist"
        )
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(candidates), size=count, replace=False)
    hops = tuple(candidates[i] for i in sorted(chosen.tolist()))
    return replace(deployment, hop_pairs=hops)
