import math

import numpy as np
import pytest

from mbmac import sync as S
from mbmac import topology as T
from mbmac.errors import SizeLimitError
from mbmac.schedule import LinkSystem, enumerate_maximal_schedules
from mbmac.traffic import uniform_specs

from conftest import chain_setup
from oracles import brute_feasible_subsets, brute_max_weight


def three_band_star():
    """Node 0 with hops to 1 and 2, three bands, everything in range."""
    bands = tuple(T.Band(i + 1, 515.0 + 30 * i, 6.0) for i in range(3))
    dep = T.Deployment(
        nodes=((0, 0.0, 0.0), (1, 30.0, 0.0), (2, 0.0, 30.0)),
        radios=2,
        bands=bands,
        hop_pairs=((0, 1), (0, 2)),
    )
    phy = T.PhyModel(rate_table=((30.0, 1),))
    links = T.enumerate_generalized_links(dep, phy)
    return dep, LinkSystem.from_deployment(dep, links)


def test_validate_empty_ok(chain5):
    _, _, _, linksys, _, _ = chain5
    assert linksys.validate([]) is None


def test_validate_si_violation(chain5):
    _, _, _, linksys, _, _ = chain5
    msg = linksys.validate([0, 1])
    assert msg is not None and "SI" in msg and "0" in msg and "1" in msg


def test_validate_mr_violation():
    _, linksys = three_band_star()
    # three of node 0's links on distinct bands exceed its two radios
    by_key = {(int(linksys.hop[l]), int(linksys.band[l])): l for l in range(linksys.n)}
    active = [by_key[(0, 1)], by_key[(0, 2)], by_key[(1, 3)]]
    msg = linksys.validate(active)
    assert msg is not None and "MR" in msg and "node 0" in msg


def test_compute_loss_idle_node():
    _, linksys = three_band_star()
    w = np.zeros(2, dtype=np.int64)
    loss, displaced = S.compute_loss(linksys, w, 0, 1, frozenset())
    assert loss == 0 and displaced == ()


def test_compute_loss_active_on_band():
    _, linksys = three_band_star()
    by_key = {(int(linksys.hop[l]), int(linksys.band[l])): l for l in range(linksys.n)}
    l_b1 = by_key[(0, 1)]
    w = np.array([7, 0], dtype=np.int64)  # hop 0 weight 7, rate 1
    loss, displaced = S.compute_loss(linksys, w, 0, 1, frozenset({l_b1}))
    assert loss == 7 and displaced == (l_b1,)


def test_compute_loss_all_radios_busy_min_victim():
    _, linksys = three_band_star()
    by_key = {(int(linksys.hop[l]), int(linksys.band[l])): l for l in range(linksys.n)}
    active = frozenset({by_key[(0, 2)], by_key[(1, 3)]})  # node 0 busy on bands 2,3
    w = np.array([4, 9], dtype=np.int64)
    loss, displaced = S.compute_loss(linksys, w, 0, 1, active)
    assert loss == 4
    assert displaced == (by_key[(0, 2)],)


def test_compute_gain_examples():
    bands = T.single_band_plan()
    dep = T.Deployment(
        nodes=((0, 0.0, 0.0), (1, 30.0, 0.0)),
        radios=1,
        bands=bands,
        hop_pairs=((0, 1),),
    )
    phy = T.PhyModel(rate_table=((30.0, 2),))
    links = T.enumerate_generalized_links(dep, phy)
    ls = LinkSystem.from_deployment(dep, links)

    rep = S.compute_gain(ls, np.array([10]), 0, 1, loss=5, displaced=())
    assert rep.gain == 15 and rep.best_link == 0  # (10*2 - 5)^+

    rep = S.compute_gain(ls, np.array([1]), 0, 1, loss=5, displaced=())
    assert rep.gain == 0 and rep.best_link is None  # clamped

    rep = S.compute_gain(ls, np.array([10]), 1, 1, loss=0, displaced=())
    assert rep.gain == 0 and rep.best_link is None  # no outgoing link on band


def test_local_max_oracle_mode():
    members = list(range(8))
    gains = {v: 10 + v for v in members}
    rng = np.random.default_rng(0)
    winner, ok = S.local_max(members, gains, rng, mode="oracle")
    assert winner == 7 and ok


def test_local_max_all_zero():
    rng = np.random.default_rng(0)
    winner, ok = S.local_max([0, 1, 2], {}, rng, mode="randomized")
    assert winner is None and ok


def test_local_max_single_node_group():
    rng = np.random.default_rng(0)
    winner, ok = S.local_max([4], {4: 3}, rng, mode="randomized")
    assert winner == 4 and ok


def test_local_max_single_candidate_wins_often():
    rng = np.random.default_rng(7)
    members = list(range(4))
    wins = 0
    trials = 2000
    for _ in range(trials):
        winner, ok = S.local_max(members, {2: 5}, rng, mode="randomized")
        if winner == 2:
            wins += 1
    assert wins / trials >= 0.5 - 3 * math.sqrt(0.25 / trials)


def test_local_max_repeats_reduce_failures():
    rng = np.random.default_rng(11)
    members = list(range(8))
    gains = {v: 1 + v for v in members}
    fail1 = fail4 = 0
    trials = 1500
    for _ in range(trials):
        _, ok = S.local_max(members, gains, rng, mode="randomized", repeats=1)
        fail1 += not ok
        _, ok = S.local_max(members, gains, rng, mode="randomized", repeats=4)
        fail4 += not ok
    assert fail1 / trials <= 0.5  # per-run success probability at least 1/2
    assert fail4 <= fail1
    assert fail4 / trials <= 0.12


def test_contention_resolve_cases(chain7):
    _, _, _, linksys, _, _ = chain7
    rng = np.random.default_rng(3)
    assert S.contention_resolve([], linksys, rng) == []
    # links 0 and 5 on a 7-node chain do not conflict
    assert sorted(S.contention_resolve([0, 5], linksys, rng)) == [0, 5]
    # links 0 and 2 conflict: exactly one survives, about half each
    wins0 = 0
    trials = 4000
    for _ in range(trials):
        act = S.contention_resolve([0, 2], linksys, rng)
        assert len(act) == 1
        wins0 += act == [0]
    p = wins0 / trials
    assert abs(p - 0.5) <= 3 * math.sqrt(0.25 / trials)


def test_contention_resolve_respects_radios():
    _, linksys = three_band_star()
    by_key = {(int(linksys.hop[l]), int(linksys.band[l])): l for l in range(linksys.n)}
    # three winner links all incident to node 0 on distinct bands; K=2
    winners = [by_key[(0, 1)], by_key[(0, 2)], by_key[(1, 3)]]
    rng = np.random.default_rng(5)
    for _ in range(200):
        act = S.contention_resolve(winners, linksys, rng)
        assert len(act) == 2
        assert linksys.validate(act) is None


def test_maximal_gain_step_activates_unique_candidate(chain5):
    dep, phy, links, linksys, bgs, grouping = chain5
    sched = S.MaxGainScheduler(linksys, grouping, master_seed=1, mode="oracle")
    w = np.array([5, 0, 0, 0], dtype=np.int64)
    active, info = sched.step(frozenset(), w)
    assert active == frozenset({0})
    assert info.hp == (0,)
    assert info.w_plus == 5 and info.w_minus == 0


def test_maximal_gain_step_idle_when_no_gain(chain5):
    dep, phy, links, linksys, bgs, grouping = chain5
    sched = S.MaxGainScheduler(linksys, grouping, master_seed=1, mode="oracle")
    prev = frozenset({0})
    w = np.array([9, 0, 0, 0], dtype=np.int64)
    active, info = sched.step(prev, w)
    # only positive-gain moves displace; the previous schedule persists
    assert active == prev
    assert info.hp == ()


def test_maximal_gain_step_feasible_and_identity_random():
    dep, phy, links, linksys, bgs, grouping = chain_setup(9, radios=1)
    sched = S.MaxGainScheduler(linksys, grouping, master_seed=5)
    rng = np.random.default_rng(8)
    prev = frozenset()
    for t in range(300):
        w = rng.integers(0, 20, size=linksys.n_hops)
        scores = linksys.scores(w)
        active, info = sched.step(prev, w)
        assert linksys.validate(active) is None
        w_now = sum(int(scores[l]) for l in active)
        w_prev = sum(int(scores[l]) for l in prev)
        assert w_now - w_prev == info.w_plus - info.w_minus
        assert set(info.hp) <= active
        prev = active


def test_mw_oracle_examples():
    dep, phy, links, linksys, bgs, _ = chain_setup(3, rate_table=((30.0, 1),), decode_db=20.0)
    # 2 hops, both links mutually interfering (decode range spans the chain)
    w_star, best = S.mw_oracle(linksys, np.array([5, 3]))
    assert w_star == 5 and best == frozenset({0})

    bands = (T.Band(1, 515.0, 6.0),)
    dep2 = T.Deployment(
        nodes=((0, 0.0, 0.0), (1, 30.0, 0.0), (2, 5000.0, 0.0), (3, 5030.0, 0.0)),
        radios=1,
        bands=bands,
        hop_pairs=((0, 1), (2, 3)),
    )
    phy2 = T.PhyModel(rate_table=((30.0, 1),))
    ls2 = LinkSystem.from_deployment(dep2, T.enumerate_generalized_links(dep2, phy2))
    w_star, best = S.mw_oracle(ls2, np.array([5, 3]))
    assert w_star == 8 and best == frozenset({0, 1})


def test_mw_oracle_matches_brute_force_random():
    rng = np.random.default_rng(21)
    for trial in range(25):
        n_nodes = int(rng.integers(5, 9))
        bands = T.whitespace_band_plan(2, seed=trial)
        dep = T.generate_random(n_nodes, 2500.0, 8.0, bands, seed=trial, radios=int(rng.integers(1, 3)))
        phy = T.PhyModel(rate_table=((40.0, 1), (55.0, 2)))
        try:
            dep = T.choose_hop_pairs(dep, phy, count=int(rng.integers(2, 6)), seed=trial)
        except Exception:
            continue
        links = T.enumerate_generalized_links(dep, phy)
        ls = LinkSystem.from_deployment(dep, links)
        if ls.n > 10:
            continue
        w = rng.integers(0, 15, size=ls.n_hops)
        expected = brute_max_weight(links, dep.radios_at, w)
        got, best_set = S.mw_oracle(ls, w)
        assert got == expected
        assert ls.validate(best_set) is None


def test_mw_oracle_zero_weights_empty():
    dep, phy, links, linksys, bgs, _ = chain_setup(5)
    w_star, best = S.mw_oracle(linksys, np.zeros(4, dtype=np.int64))
    assert w_star == 0 and best == frozenset()


def test_mw_oracle_cap():
    dep, phy, links, linksys, bgs, _ = chain_setup(30)
    with pytest.raises(SizeLimitError):
        S.mw_oracle(linksys, np.ones(29, dtype=np.int64), cap=24)


def test_gms_chain_example():
    # middle link conflicts with both ends; weights 5, 4, 3
    bands = T.single_band_plan()
    dep = T.Deployment(
        nodes=(
            (0, 0.0, 0.0), (1, 50.0, 0.0),      # end hop A
            (2, 125.0, 0.0), (3, 175.0, 0.0),   # middle hop, audible to both
            (4, 250.0, 0.0), (5, 300.0, 0.0),   # end hop B, out of A's earshot
        ),
        radios=1,
        bands=bands,
        hop_pairs=((0, 1), (2, 3), (4, 5)),
    )
    phy = T.PhyModel(rate_table=((48.0, 1),), decode_margin_db=43.0)
    links = T.enumerate_generalized_links(dep, phy)
    ls = LinkSystem.from_deployment(dep, links)
    assert ls.conflict[1] == frozenset({0, 2})  # middle conflicts with both ends
    assert 2 not in ls.conflict[0]  # end links independent
    w = np.array([5, 4, 3], dtype=np.int64)
    sched = S.gms_schedule(ls, w)
    assert sched == frozenset({0, 2})  # picks 5 then 3
    w_star, _ = S.mw_oracle(ls, w)
    assert sum(int(ls.scores(w)[l]) for l in sched) == w_star == 8


def test_gms_zero_weights_empty(chain5):
    _, _, _, linksys, _, _ = chain5
    assert S.gms_schedule(linksys, np.zeros(4, dtype=np.int64)) == frozenset()


def test_gms_maximal_among_backlogged(chain7):
    _, _, _, linksys, _, _ = chain7
    rng = np.random.default_rng(2)
    for _ in range(50):
        w = rng.integers(1, 10, size=linksys.n_hops)
        sched = S.gms_schedule(linksys, w)
        assert linksys.validate(sched) is None
        used = {}
        for l in sched:
            for v in linksys.endpoints(l):
                used[v] = used.get(v, 0) + 1
        for l in range(linksys.n):
            if l not in sched and linksys.scores(w)[l] > 0:
                assert not linksys.addable(l, set(sched), used)


def test_qcsma_zero_queue_empties():
    dep, phy, links, linksys, bgs, _ = chain_setup(5)
    sched = S.QcsmaScheduler(linksys, master_seed=4)
    active = frozenset({0})
    w = np.zeros(4, dtype=np.int64)
    for _ in range(10):
        active, _ = sched.step(active, w)
    assert active == frozenset()


def test_qcsma_single_link_activates():
    bands = T.single_band_plan()
    dep = T.Deployment(
        nodes=((0, 0.0, 0.0), (1, 30.0, 0.0)),
        radios=1,
        bands=bands,
        hop_pairs=((0, 1),),
    )
    phy = T.PhyModel(rate_table=((30.0, 1),))
    ls = LinkSystem.from_deployment(dep, T.enumerate_generalized_links(dep, phy))
    sched = S.QcsmaScheduler(ls, master_seed=9)
    w = np.array([10 ** 6], dtype=np.int64)
    hits = 0
    active = frozenset()
    for _ in range(500):
        active, _ = sched.step(active, w)
        hits += bool(active)
    assert hits / 500 > 0.95  # a(w) -> 1 for huge backlog
    assert S.QcsmaScheduler.activation_probability(0) == 0.0
    assert S.QcsmaScheduler.activation_probability(10 ** 9) > 0.999999


def test_qcsma_feasibility_random(chain7):
    _, _, _, linksys, _, _ = chain7
    sched = S.QcsmaScheduler(linksys, master_seed=12)
    rng = np.random.default_rng(1)
    active = frozenset()
    for t in range(400):
        w = rng.integers(0, 12, size=linksys.n_hops)
        active, _ = sched.step(active, w)
        assert linksys.validate(active) is None


def test_run_sync_deterministic(chain7):
    dep, phy, links, linksys, bgs, grouping = chain7
    specs = uniform_specs(linksys.n_hops, 0.05)
    a = S.run_sync(linksys, grouping, specs, "maxgain", 400, seed=17, log_schedules=True)
    b = S.run_sync(linksys, grouping, specs, "maxgain", 400, seed=17, log_schedules=True)
    assert np.array_equal(a.qtot, b.qtot)
    assert a.schedule_log == b.schedule_log
    c = S.run_sync(linksys, grouping, specs, "maxgain", 400, seed=18, log_schedules=True)
    assert a.schedule_log != c.schedule_log


def test_run_sync_eq5_identity_and_oracle(chain7):
    dep, phy, links, linksys, bgs, grouping = chain7
    specs = uniform_specs(linksys.n_hops, 0.08)
    res = S.run_sync(
        linksys, grouping, specs, "maxgain", 500, seed=3, track_oracle=True
    )
    # accounting identity holds exactly every slot
    assert np.array_equal(res.w - res.w_prev, res.w_plus - res.w_minus)
    # oracle dominates any schedule's weight
    assert np.all(res.wstar >= res.w)


def test_run_sync_all_schedulers_feasible(chain7):
    dep, phy, links, linksys, bgs, grouping = chain7
    specs = uniform_specs(linksys.n_hops, 0.06)
    for name in ("maxgain", "mb_qcsma", "mb_gms", "mw_oracle"):
        res = S.run_sync(linksys, grouping, specs, name, 300, seed=5)
        assert res.steps == 300  # every slot validated inside run_sync


def test_minislot_budget_constants():
    assert S.C1 == pytest.approx(1.0 / math.log(9.0 / 8.0))
    assert S.C2 == pytest.approx(S.C1 / math.log(1.5))
    # N=2: ceil(C2 * ln2 * (1+ln2)) = 25 mini-slots, escalation every 15
    assert S.minislot_budget(2) == 25
    assert S.escalation_period(2) == 15
    assert S.minislot_budget(1) == 0


def test_maximal_gain_golden_trace():
    # frozen from the first verified run of this instance (oracle local max,
    # seed 11); replay must be bit-identical
    dep, phy, links, linksys, bgs, grouping = chain_setup(9, seed=5)
    assert grouping.leaders == (1, 4, 7)
    specs = uniform_specs(linksys.n_hops, 0.15)
    res = S.run_sync(
        linksys, grouping, specs, "maxgain", 30, seed=11,
        scheduler_params={"mode": "oracle"}, log_schedules=True,
    )
    assert res.qtot.tolist() == [
        0, 0, 0, 0, 0, 0, 0, 1, 2, 1, 0, 0, 1, 2, 3, 4, 4, 3, 4, 3,
        2, 1, 0, 0, 0, 0, 0, 0, 1, 2,
    ]
    assert res.schedule_log == [
        (7,), (1,), (2,), (), (5,), (), (6,), (3,), (2,), (4,),
        (2,), (4,), (1,), (3,), (1, 5), (3,), (2,), (2, 6), (4,), (3, 7),
        (2, 7), (0, 5), (2,), (2,), (0, 4), (0, 5), (1,), (0, 6), (1, 7), (4,),
    ]
    assert res.delivered == 37
