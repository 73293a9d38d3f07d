import numpy as np
import pytest

from mbmac import grouping as G
from mbmac import topology as T
from mbmac.errors import InvalidInputError


def graph_from_edges(edges, center=600.0):
    band = T.Band(1, center, 6.0)
    return T.BandGraph(band=band, edges=frozenset((min(u, v), max(u, v)) for u, v in edges),
                       max_degree=0)


def check_ids(bg, nodes, leaders):
    adj = {v: set() for v in nodes}
    for u, v in bg.edges:
        adj[u].add(v)
        adj[v].add(u)
    for u in leaders:
        assert not (adj[u] & leaders), "leaders not independent"
    for v in nodes:
        assert v in leaders or (adj[v] & leaders), "leaders not dominating"


def test_ids_single_node():
    bg = graph_from_edges([])
    assert G.compute_independent_dominating_set(bg, [0], seed=1) == {0}


def test_ids_star_graph():
    n = 6
    bg = graph_from_edges([(0, i) for i in range(1, n)])
    for seed in range(10):
        leaders = G.compute_independent_dominating_set(bg, range(n), seed)
        assert leaders == {0} or leaders == set(range(1, n))
        check_ids(bg, range(n), leaders)


def test_ids_grid_graph_properties():
    # 5x5 lattice adjacency
    edges = []
    for r in range(5):
        for c in range(5):
            v = r * 5 + c
            if c < 4:
                edges.append((v, v + 1))
            if r < 4:
                edges.append((v, v + 5))
    bg = graph_from_edges(edges)
    leaders = G.compute_independent_dominating_set(bg, range(25), seed=1)
    check_ids(bg, range(25), leaders)


def test_ids_deterministic():
    edges = [(i, i + 1) for i in range(9)]
    bg = graph_from_edges(edges)
    a = G.compute_independent_dominating_set(bg, range(10), seed=42)
    b = G.compute_independent_dominating_set(bg, range(10), seed=42)
    assert a == b


def test_form_groups_path():
    bg = graph_from_edges([(0, 1), (1, 2)])
    leaders, members = G.form_groups(bg, [0, 1, 2], {1})
    assert leaders == (1,)
    assert members == ((0, 1, 2),)


def test_form_groups_isolated_singletons():
    bg = graph_from_edges([])
    leaders, members = G.form_groups(bg, [3, 8], {3, 8})
    assert leaders == (3, 8)
    assert members == ((3,), (8,))


def test_form_groups_rejects_non_dominating():
    bg = graph_from_edges([(0, 1), (2, 3)])
    with pytest.raises(InvalidInputError):
        G.form_groups(bg, [0, 1, 2, 3], {0})


def test_form_groups_partition_random():
    edges = [(i, j) for i in range(12) for j in range(i + 1, 12) if (i * 7 + j) % 3 == 0]
    bg = graph_from_edges(edges)
    leaders = G.compute_independent_dominating_set(bg, range(12), seed=5)
    ordered, members = G.form_groups(bg, range(12), leaders)
    assert len(ordered) == len(leaders)
    all_nodes = [v for mem in members for v in mem]
    assert sorted(all_nodes) == list(range(12))  # partition, no overlap
    adj = {v: set() for v in range(12)}
    for u, v in bg.edges:
        adj[u].add(v)
        adj[v].add(u)
    for leader, mem in zip(ordered, members):
        for v in mem:
            assert v == leader or leader in adj[v]  # star property


def _two_group_links():
    """Two hops in separate groups whose links interfere."""
    dep = T.Deployment(
        nodes=((0, 0.0, 0.0), (1, 50.0, 0.0), (2, 100.0, 0.0), (3, 150.0, 0.0)),
        radios=1,
        bands=T.single_band_plan(),
        hop_pairs=((0, 1), (2, 3)),
    )
    phy = T.PhyModel(rate_table=((48.0, 1),), decode_margin_db=40.0)
    return T.enumerate_generalized_links(dep, phy)


def test_color_groups():
    links = _two_group_links()
    assert links[1].id in links[0].interferers
    colors, chi = G.color_groups([(0, 1), (2, 3)], links)
    assert chi == 2
    assert colors[0] != colors[1]
    colors1, chi1 = G.color_groups([(0, 1, 2, 3)], links)
    assert chi1 == 1


def test_color_groups_propriety_and_bound(chain7):
    dep, phy, links, linksys, bgs, grouping = chain7
    group_of = {v: g for g, mem in enumerate(grouping.members) for v in mem}
    by_id = {l.id: l for l in links}
    conflict_deg = [0] * grouping.n_groups
    conflicts = set()
    for l in links:
        for j in l.interferers:
            a, b = group_of[l.tail], group_of[by_id[j].tail]
            if a != b:
                conflicts.add((min(a, b), max(a, b)))
    for a, b in conflicts:
        assert grouping.colors[a] != grouping.colors[b]
        conflict_deg[a] += 1
        conflict_deg[b] += 1
    assert grouping.chi <= max(conflict_deg, default=0) + 1


def test_sigma_single_group():
    links = _two_group_links()
    assert G.compute_sigma([(0, 1, 2, 3)], links) == 0


def test_sigma_chain_direct_scan(chain5):
    dep, phy, links, linksys, bgs, _ = chain5
    members = [(0, 1), (2, 3, 4)]
    group_of = {0: 0, 1: 0, 2: 1, 3: 1, 4: 1}
    by_id = {l.id: l for l in links}
    expected = 0
    for l in links:
        foreign = {group_of[by_id[j].tail] for j in l.interferers} - {group_of[l.tail]}
        expected = max(expected, len(foreign))
    assert G.compute_sigma(members, links) == expected


def test_sigma_upper_bound_random():
    rng = np.random.default_rng(0)
    for trial in range(5):
        bands = T.whitespace_band_plan(2, seed=trial)
        dep = T.generate_random(12, 2500.0, 8.0, bands, seed=trial, radios=2)
        phy = T.PhyModel(rate_table=((40.0, 1),))
        dep = T.choose_hop_pairs(dep, phy, count=6, seed=trial + 100)
        links = T.enumerate_generalized_links(dep, phy)
        bg = T.build_band_graph(dep, dep.bands[0], phy)
        grouping = G.build_grouping(bg, dep.node_ids, links, seed=trial)
        assert grouping.sigma <= grouping.n_groups - 1


def test_build_grouping_deterministic(chain7):
    dep, phy, links, _, bgs, grouping = chain7
    again = G.build_grouping(bgs[0], dep.node_ids, links, seed=1)
    assert again == grouping


def test_build_grouping_flags_isolated():
    dep = T.Deployment(
        nodes=((0, 0.0, 0.0), (1, 50.0, 0.0), (2, 5000.0, 0.0), (3, 5050.0, 0.0)),
        radios=1,
        bands=(T.Band(1, 515.0, 6.0), T.Band(2, 695.0, 6.0)),
        hop_pairs=((0, 1), (2, 3)),
    )
    # band 2 still connects adjacent pairs; band 1 graph keeps them all
    phy = T.PhyModel(rate_table=((48.0, 1),), decode_margin_db=40.0)
    bg1 = T.build_band_graph(dep, dep.bands[0], phy)
    links = T.enumerate_generalized_links(dep, phy)
    grouping = G.build_grouping(bg1, dep.node_ids, links, seed=0)
    # nodes 0-1 and 2-3 are far apart: two edges, no isolated nodes
    assert grouping.singleton_isolated == ()
    union = sorted(v for mem in grouping.members for v in mem)
    assert union == [0, 1, 2, 3]
