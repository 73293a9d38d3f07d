"""Event-driven asynchronous MAC engine with a dedicated control band.

Every node has one extra control radio; RTS/CTS exchanges on the control band
reserve a data band before any transmission, so the active set is feasible at
every instant by construction (a validator still checks each start).  The
max-gain discipline maps onto per-radio priority lists: links named by a
leader broadcast are high priority and win disjoint low contention-window
slots, links that transmitted before are medium, everything else is low.
Baselines (periodic greedy maximal and slotted queue-CSMA) run inside the
same engine, sharing traffic, queues, tracing and validation.

Time is integer microseconds; ties break on (time, kind, node, sequence), so
a (scenario, seed) pair reproduces its trace bit for bit.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, InvalidInputError
from .grouping import Grouping
from .schedule import LinkSystem
from .sync import QcsmaScheduler, gms_schedule
from .topology import BandGraph
from .traffic import TrafficSource

_ASYNC_STREAM_TAG = 0x5A01
_ASYNC_GROUP_TAG = 0x5A02

# control message kinds
RTS, CTS, LEADER_BCAST, QLEN_UPDATE = "RTS", "CTS", "LEADER_BCAST", "QLEN_UPDATE"

# event kinds in deterministic tie-break order
_EVENT_ORDER = {
    "arrival": 0,
    "epoch": 1,
    "leader": 2,
    "walk": 3,
    "sense": 4,
    "attempt": 5,
    "ctl_end": 6,
    "data_start": 7,
    "data_end": 8,
}


@dataclass(frozen=True)
class AsyncConfig:
    """Timing and protocol knobs of the asynchronous MAC."""

    cw: int = 32
    slot_time_us: int = 20
    rts_us: int = 50
    cts_us: int = 50
    packet_us: int = 1000
    txopt_us: int = 5000
    leader_period_us: int = 4000
    retune_us: int = 500
    arrival_slot_us: int = 5000
    control_loss_prob: float = 0.0
    loss_exempt_destination: bool = True
    leaderless: bool = False
    qlen_update_threshold: int = 8

    def __post_init__(self):
        if self.cw % 4 != 0 or self.cw <= 0:
            raise ConfigurationError("contention window must be positive and divisible by 4")
        if self.txopt_us < self.packet_us:
            raise ConfigurationError("TXOPT must cover at least one packet duration")
        if not 0.0 <= self.control_loss_prob <= 1.0:
            raise ConfigurationError("control loss probability must lie in [0, 1]")

    def window(self, priority: str) -> tuple[int, int]:
        """Backoff slot range [lo, hi] of a priority class."""
        if priority == "HP":
            return 0, self.cw // 2 - 1
        if priority == "MP":
            return self.cw // 2, 3 * self.cw // 4 - 1
        if priority == "LP":
            return 3 * self.cw // 4, self.cw - 1
        raise InvalidInputError(f"unknown priority {priority!r}")


@dataclass(frozen=True)
class ControlMessage:
    kind: str
    link: int
    dest: int
    band: int
    qlen: int  # saturates at 255 on the wire
    rate: int
    radio: int
    displaced: Optional[int] = None  # LEADER_BCAST only

    def wire_size(self) -> int:
        """Payload bytes beyond the base header: 6B MAC + 1B band + 1B queue + 1B radio."""
        return 6 + 1 + 1 + 1

    def wire_qlen(self) -> int:
        return min(self.qlen, 255)


def inject_control_loss(
    receivers: Sequence[int],
    dest: Optional[int],
    p: float,
    rng: np.random.Generator,
    exempt_destination: bool,
) -> list[int]:
    """Independent per-receiver drops; the addressed destination may be exempt."""
    out = []
    for r in sorted(receivers):
        if exempt_destination and dest is not None and r == dest:
            out.append(r)
        elif p <= 0.0 or rng.random() >= p:
            out.append(r)
    return out


class _Radio:
    __slots__ = ("node", "idx", "band", "busy_until", "token", "state")

    def __init__(self, node: int, idx: int):
        self.node = node
        self.idx = idx
        self.band = 0  # 0 = untuned
        self.busy_until = 0
        self.token = 0
        self.state = "idle"  # idle | retune | backoff | handshake | data

    def bump(self) -> int:
        self.token += 1
        return self.token


@dataclass
class AsyncResult:
    qtot: np.ndarray
    q_series: Optional[np.ndarray]
    delivered: int
    steps: int
    violations: int
    sojourns_us: list[int]
    trace: Optional[list[tuple]]
    control_stats: dict
    epoch_agreement: Optional[tuple[int, int]] = None  # (agreeing member checks, total)
    horizon_us: int = 0


class AsyncEngine:
    """One deterministic event-driven run."""

    def __init__(
        self,
        links: LinkSystem,
        grouping: Grouping,
        traffic_specs,
        config: AsyncConfig,
        seed: int,
        scheduler: str = "maxgain",
        control_audibility: Optional[BandGraph] = None,
        record_trace: bool = False,
        record_queues: bool = False,
        track_replicas: bool = False,
    ):
        if scheduler not in ("maxgain", "mb_qcsma", "mb_gms"):
            raise InvalidInputError(f"unknown async scheduler {scheduler!r}")
        self.links = links
        self.grouping = grouping
        self.cfg = config
        self.scheduler = scheduler
        self.rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(_ASYNC_STREAM_TAG, 0)))
        )
        self.group_rngs = [
            np.random.Generator(
                np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(_ASYNC_GROUP_TAG, g)))
            )
            for g in range(grouping.n_groups)
        ]
        self.source = TrafficSource(traffic_specs, seed)

        # audibility on the control band: default everyone hears everyone
        if control_audibility is None:
            self.audible = {v: set(links.nodes) - {v} for v in links.nodes}
        else:
            adj = {v: set() for v in links.nodes}
            for u, v in control_audibility.edges:
                adj[u].add(v)
                adj[v].add(u)
            self.audible = adj

        self.radios = {
            v: [_Radio(v, i) for i in range(links.radios_at(v))] for v in links.nodes
        }
        self.control_busy: dict[int, int] = {v: 0 for v in links.nodes}  # per-node tx side
        self.hp: dict[tuple[int, int], list[int]] = {}
        self.mp: dict[tuple[int, int], list[int]] = {}
        self.q = np.zeros(links.n_hops, dtype=np.int64)
        self.stamps: list[list[int]] = [[] for _ in range(links.n_hops)]
        self.advertised = np.zeros(links.n_hops, dtype=np.int64)

        self.group_of_node = {v: g for g, mem in enumerate(grouping.members) for v in mem}
        self.outgoing_of_node: dict[int, list[int]] = {v: [] for v in links.nodes}
        for l in range(links.n):
            self.outgoing_of_node[int(links.tail[l])].append(l)

        # leader (or per-node replica) views: link -> [weight, rate, active_until]
        def fresh_view():
            return {l: [0, int(links.rate[l]), 0] for l in range(links.n)}

        self.view = {g: fresh_view() for g in range(grouping.n_groups)}
        self.track_replicas = track_replicas
        self.replicas = (
            {(g, v): fresh_view() for g, mem in enumerate(grouping.members) for v in mem}
            if track_replicas
            else {}
        )
        self.agree_checks = 0
        self.agree_total = 0

        # channel state
        self.active_tx: dict[int, tuple[int, int, int, int]] = {}  # link -> (start, end, tail_radio, head_radio)
        self.reservations: dict[int, tuple[int, int]] = {}  # link -> (start, end)
        self.control_ongoing: list[dict] = []  # {start,end,node,msg,collided}
        self.pending_handshake: dict[int, bool] = {v: False for v in links.nodes}

        self.now = 0
        self._heap: list = []
        self._seq = 0
        self.delivered = 0
        self.steps = 0
        self.violations = 0
        self.sojourns: list[int] = []
        self.trace: Optional[list[tuple]] = [] if record_trace else None
        self.record_queues = record_queues
        self.stats = {
            "rts": 0,
            "cts": 0,
            "collisions": 0,
            "bcast": 0,
            "qlen_updates": 0,
            "dropped_rx": 0,
            "unknown_link_rx": 0,
            "mp_losses": 0,
        }
        self._qcsma = QcsmaScheduler(links, seed) if scheduler == "mb_qcsma" else None
        self._prev_epoch_active: frozenset[int] = frozenset()

    # ------------------------------------------------------------------
    # event plumbing
    # ------------------------------------------------------------------

    def _push(self, t: int, kind: str, node: int, data: tuple):
        self._seq += 1
        heapq.heappush(self._heap, (t, _EVENT_ORDER[kind], node, self._seq, kind, data))

    def _log(self, node: int, radio: int, band: int, event: str, link: int, qlen: int):
        if self.trace is not None:
            self.trace.append((self.now, node, radio, band, event, link, qlen))

    # ------------------------------------------------------------------
    # queue helpers
    # ------------------------------------------------------------------

    def _arrive(self, slot: int):
        arrivals = self.source.draw(slot)
        t = self.now
        for h in np.flatnonzero(arrivals):
            n = int(arrivals[h])
            self.q[h] += n
            self.stamps[h].extend([t] * n)
            self._log(int(self.links.tail[self.links.outgoing_hop(h)]) if False else -1, -1, -1, "arrival", int(h), int(self.q[h]))
        return arrivals

    def _depart(self, hop: int, n: int, t_end: int) -> int:
        served = min(int(self.q[hop]), n)
        if served > 0:
            self.q[hop] -= served
            st = self.stamps[hop]
            for _ in range(served):
                self.sojourns.append(t_end - st.pop(0))
            self.delivered += served
        return served

    # ------------------------------------------------------------------
    # channel state helpers
    # ------------------------------------------------------------------

    def _data_conflict(self, link: int, start: int, end: int) -> bool:
        """Would transmitting ``link`` over [start, end) break SI or MR?"""
        conf = self.links.conflict[link]
        for m, (s, e, *_rest) in self.active_tx.items():
            if e > start and s < end and m in conf:
                return True
        for m, (s, e) in self.reservations.items():
            if m != link and e > start and s < end and m in conf:
                return True
        for v in self.links.endpoints(link):
            used = 0
            bands = set()
            for m, (s, e, *_rest) in self.active_tx.items():
                if e > start and s < end and v in self.links.endpoints(m):
                    used += 1
                    bands.add(int(self.links.band[m]))
            for m, (s, e) in self.reservations.items():
                if m != link and e > start and s < end and v in self.links.endpoints(m):
                    used += 1
                    bands.add(int(self.links.band[m]))
            if used >= self.links.radios_at(v):
                return True
            if int(self.links.band[link]) in bands:
                return True
        return False

    def _carrier_busy(self, link: int, t: int) -> Optional[int]:
        """Earliest end of an ongoing conflicting data transmission, if any."""
        ends = [
            e
            for m, (s, e, *_rest) in self.active_tx.items()
            if m in self.links.conflict[link] and e > t
        ]
        return min(ends) if ends else None

    def _control_channel_end(self, node: int, t: int) -> Optional[int]:
        """End of an audible ongoing control transmission, if the band is busy."""
        ends = [
            rec["end"]
            for rec in self.control_ongoing
            if rec["end"] > t and (rec["node"] == node or rec["node"] in self.audible[node])
        ]
        return max(ends) if ends else None

    # ------------------------------------------------------------------
    # priority lists
    # ------------------------------------------------------------------

    def _hp_list(self, node: int, radio: int) -> list[int]:
        return self.hp.setdefault((node, radio), [])

    def _mp_list(self, node: int, radio: int) -> list[int]:
        return self.mp.setdefault((node, radio), [])

    def _in_any_list(self, link: int) -> bool:
        node = int(self.links.tail[link])
        for r in range(len(self.radios[node])):
            if link in self._hp_list(node, r) or link in self._mp_list(node, r):
                return True
        return False

    def _walk_pick(self, node: int, radio: int) -> Optional[tuple[int, str]]:
        """First inactive backlogged link in HP, MP then LP order."""
        for priority, lst in (("HP", self._hp_list(node, radio)), ("MP", self._mp_list(node, radio))):
            for l in lst:
                if l not in self.active_tx and l not in self.reservations and self.q[self.links.hop[l]] > 0:
                    return l, priority
        for l in self.outgoing_of_node[node]:
            if self._in_any_list(l):
                continue
            if l not in self.active_tx and l not in self.reservations and self.q[self.links.hop[l]] > 0:
                return l, "LP"
        return None

    def _remove_hp(self, link: int):
        node = int(self.links.tail[link])
        for r in range(len(self.radios[node])):
            lst = self._hp_list(node, r)
            if link in lst:
                lst.remove(link)
                mp = self._mp_list(node, r)
                if link not in mp:
                    mp.append(link)

    def _demote_mp(self, link: int):
        node = int(self.links.tail[link])
        for r in range(len(self.radios[node])):
            lst = self._mp_list(node, r)
            if link in lst:
                lst.remove(link)
                self.stats["mp_losses"] += 1

    def _deactivate_listed(self, link: int):
        """A displaced link drops out of HP and MP (falls to LP)."""
        node = int(self.links.tail[link])
        for r in range(len(self.radios[node])):
            hp = self._hp_list(node, r)
            if link in hp:
                hp.remove(link)
            mp = self._mp_list(node, r)
            if link in mp:
                mp.remove(link)

    # ------------------------------------------------------------------
    # max-gain radio state machine
    # ------------------------------------------------------------------

    def _wake_radios(self, node: int):
        for radio in self.radios[node]:
            if radio.state == "idle":
                self._push(self.now, "walk", node, (radio.idx, radio.bump()))

    def _ev_walk(self, node: int, data):
        radio_idx, token = data
        radio = self.radios[node][radio_idx]
        if radio.token != token or radio.state != "idle":
            return
        pick = self._walk_pick(node, radio_idx)
        if pick is None:
            return
        link, priority = pick
        band = int(self.links.band[link])
        if radio.band != band:
            radio.state = "retune"
            radio.band = band
            radio.busy_until = self.now + self.cfg.retune_us
            self._log(node, radio_idx, band, "retune", link, int(self.q[self.links.hop[link]]))
            self._push(radio.busy_until, "sense", node, (radio_idx, link, priority, radio.bump()))
        else:
            self._push(self.now, "sense", node, (radio_idx, link, priority, radio.bump()))

    def _ev_sense(self, node: int, data):
        radio_idx, link, priority, token = data
        radio = self.radios[node][radio_idx]
        if radio.token != token:
            return
        if link in self.active_tx or link in self.reservations or self.q[self.links.hop[link]] == 0:
            radio.state = "idle"
            self._push(self.now, "walk", node, (radio_idx, radio.bump()))
            return
        busy_end = self._carrier_busy(link, self.now)
        if busy_end is not None:
            # busy medium: wait it out and walk the lists again (no demotion)
            radio.state = "idle"
            self._log(node, radio_idx, radio.band, "busy", link, int(self.q[self.links.hop[link]]))
            self._push(busy_end + 1, "walk", node, (radio_idx, radio.bump()))
            return
        lo, hi = self.cfg.window(priority)
        slot = int(self.rng.integers(lo, hi + 1))
        radio.state = "backoff"
        self._push(self.now + slot * self.cfg.slot_time_us, "attempt", node, (radio_idx, link, priority, radio.bump()))

    def _ev_attempt(self, node: int, data):
        radio_idx, link, priority, token = data
        radio = self.radios[node][radio_idx]
        if radio.token != token:
            return
        # a conflicting transmission that began during our backoff means the
        # band was contended and lost (medium-priority links fall to LP)
        if self._carrier_busy(link, self.now) is not None or self._data_conflict(
            link, self.now, self.now + 1
        ):
            if priority == "MP":
                self._demote_mp(link)
            self._log(node, radio_idx, radio.band, "lost", link, int(self.q[self.links.hop[link]]))
            radio.state = "idle"
            self._push(self.now + 1, "walk", node, (radio_idx, radio.bump()))
            return
        ctl_end = self._control_channel_end(node, self.now)
        if ctl_end is not None and not self._collides_now(node):
            # control band busy since before this slot: redraw in own window
            lo, hi = self.cfg.window(priority)
            slot = int(self.rng.integers(lo, hi + 1))
            self._push(ctl_end + 1 + slot * self.cfg.slot_time_us, "attempt", node, (radio_idx, link, priority, radio.bump()))
            return
        if self.pending_handshake[node] or self.control_busy[node] > self.now:
            lo, hi = self.cfg.window(priority)
            slot = int(self.rng.integers(lo, hi + 1))
            self._push(max(self.control_busy[node], self.now) + 1 + slot * self.cfg.slot_time_us,
                       "attempt", node, (radio_idx, link, priority, radio.bump()))
            return
        # transmit the RTS
        hop = int(self.links.hop[link])
        msg = ControlMessage(
            kind=RTS,
            link=link,
            dest=int(self.links.head[link]),
            band=int(self.links.band[link]),
            qlen=int(self.q[hop]),
            rate=int(self.links.rate[link]),
            radio=radio_idx,
        )
        self.stats["rts"] += 1
        radio.state = "handshake"
        self.pending_handshake[node] = True
        self._start_control(node, msg, self.cfg.rts_us, context=(radio_idx, priority))
        self._log(node, radio_idx, msg.band, "rts", link, msg.wire_qlen())

    def _collides_now(self, node: int) -> bool:
        return any(
            rec["start"] == self.now and (rec["node"] == node or rec["node"] in self.audible[node])
            for rec in self.control_ongoing
        )

    def _start_control(self, node: int, msg: ControlMessage, dur: int, context=None):
        rec = {
            "start": self.now,
            "end": self.now + dur,
            "node": node,
            "msg": msg,
            "collided": False,
            "context": context,
        }
        for other in self.control_ongoing:
            if other["end"] > self.now and (
                other["node"] == node or other["node"] in self.audible[node]
            ):
                # same-microsecond starts collide; carrier sense prevents the rest
                other["collided"] = True
                rec["collided"] = True
        self.control_ongoing.append(rec)
        self.control_busy[node] = rec["end"]
        self._push(rec["end"], "ctl_end", node, (id(rec),))
        self._gc_control()

    def _gc_control(self):
        if len(self.control_ongoing) > 64:
            self.control_ongoing = [r for r in self.control_ongoing if r["end"] >= self.now]

    def _ev_ctl_end(self, node: int, data):
        (rec_id,) = data
        rec = next((r for r in self.control_ongoing if id(r) == rec_id), None)
        if rec is None:
            return
        msg: ControlMessage = rec["msg"]
        if rec["collided"]:
            self.stats["collisions"] += 1
            self._log(node, -1, msg.band, "collision", msg.link, msg.wire_qlen())
            if msg.kind == RTS:
                radio_idx, priority = rec["context"]
                radio = self.radios[node][radio_idx]
                self.pending_handshake[node] = False
                radio.state = "idle"
                # collided contenders all redraw in their own window
                lo, hi = self.cfg.window(priority)
                slot = int(self.rng.integers(lo, hi + 1))
                self._push(self.now + 1 + slot * self.cfg.slot_time_us, "sense", node,
                           (radio_idx, msg.link, priority, radio.bump()))
            elif msg.kind == LEADER_BCAST:
                self._schedule_bcast_retry(node, msg)
            return

        receivers = inject_control_loss(
            [v for v in self.audible[node]],
            msg.dest if msg.kind in (RTS, CTS) else None,
            self.cfg.control_loss_prob,
            self.rng,
            self.cfg.loss_exempt_destination,
        )
        self.stats["dropped_rx"] += len(self.audible[node]) - len(receivers)
        for v in receivers:
            self._hear_control(v, msg)

        if msg.kind == RTS:
            radio_idx, priority = rec["context"]
            self._rts_delivered(node, radio_idx, priority, msg, node_heard=receivers)
        elif msg.kind == CTS:
            pass  # grant already took effect when the CTS started
        elif msg.kind == LEADER_BCAST:
            self.stats["bcast"] += 1

    # ------------------------------------------------------------------
    # overhearing and leader state
    # ------------------------------------------------------------------

    def _view_update(self, view: dict, msg: ControlMessage, t: int):
        if msg.link not in view:
            self.stats["unknown_link_rx"] += 1
            return
        if msg.kind in (RTS, CTS, QLEN_UPDATE):
            view[msg.link][0] = msg.wire_qlen()
            view[msg.link][1] = msg.rate
        if msg.kind == CTS:
            dur = self.cfg.txopt_us  # leaders assume the grant is held
            view[msg.link][2] = t + dur

    def _hear_control(self, v: int, msg: ControlMessage):
        if msg.kind in (RTS, CTS, QLEN_UPDATE):
            g = self.group_of_node[v]
            if not self.cfg.leaderless:
                if v == self.grouping.leaders[g]:
                    self._view_update(self.view[g], msg, self.now)
            else:
                self._view_update(self.view[g], msg, self.now) if v == self.grouping.leaders[g] else None
                self._view_update(self.replicas.setdefault((g, v), {}), msg, self.now) if False else None
            if self.track_replicas:
                self._view_update(self.replicas[(g, v)], msg, self.now)
            if self.cfg.leaderless:
                # every member keeps its own replica for local selection
                self.replicas.setdefault((g, v), {l: [0, int(self.links.rate[l]), 0] for l in range(self.links.n)})
                self._view_update(self.replicas[(g, v)], msg, self.now)
        elif msg.kind == LEADER_BCAST:
            if v == int(self.links.tail[msg.link]):
                self._add_hp(msg.link, msg.radio)
            if msg.displaced is not None and v == int(self.links.tail[msg.displaced]):
                self._deactivate_listed(msg.displaced)
                self._log(v, -1, msg.band, "displace", msg.displaced, 0)

    def _add_hp(self, link: int, radio_idx: int):
        node = int(self.links.tail[link])
        radio_idx = radio_idx % len(self.radios[node])
        hp = self._hp_list(node, radio_idx)
        if link not in hp:
            hp.append(link)
            self._log(node, radio_idx, int(self.links.band[link]), "hp_add", link,
                      int(self.q[self.links.hop[link]]))
        self._wake_radios(node)

    # ------------------------------------------------------------------
    # RTS outcome, CTS grant, data transfer
    # ------------------------------------------------------------------

    def _rts_delivered(self, node: int, radio_idx: int, priority: str, msg: ControlMessage, node_heard):
        link = msg.link
        dest = msg.dest
        radio = self.radios[node][radio_idx]
        dest_heard = dest in node_heard or (
            self.cfg.loss_exempt_destination and dest in self.audible[node]
        )
        grant = False
        head_radio_idx = None
        duration = self.cfg.txopt_us if priority == "HP" else self.cfg.packet_us
        data_start = self.now + self.cfg.cts_us
        if dest_heard:
            for r in self.radios[dest]:
                if r.busy_until <= self.now and r.state in ("idle",):
                    head_radio_idx = r.idx
                    break
            retune = 0
            if head_radio_idx is not None:
                r = self.radios[dest][head_radio_idx]
                retune = self.cfg.retune_us if r.band != msg.band else 0
            data_start = self.now + self.cfg.cts_us + (retune if head_radio_idx is not None else 0)
            if head_radio_idx is not None and not self._data_conflict(link, data_start, data_start + duration):
                grant = True
        if not grant:
            # clean RTS without CTS: this contention is lost
            self.pending_handshake[node] = False
            radio.state = "idle"
            if priority == "MP":
                self._demote_mp(link)
            self._log(node, radio_idx, msg.band, "no_cts", link, msg.wire_qlen())
            self._push(self.now + self.cfg.cts_us + 1, "walk", node, (radio_idx, radio.bump()))
            return
        # grant: reserve both radios and the band now, CTS airs for cts_us
        self.stats["cts"] += 1
        head_radio = self.radios[dest][head_radio_idx]
        head_radio.state = "data"
        head_radio.band = msg.band
        data_end = data_start + duration
        head_radio.busy_until = data_end
        radio.state = "data"
        radio.busy_until = data_end
        self.pending_handshake[node] = False
        self.reservations[link] = (data_start, data_end)
        cts = ControlMessage(
            kind=CTS, link=link, dest=node, band=msg.band, qlen=msg.qlen,
            rate=msg.rate, radio=head_radio_idx,
        )
        self._start_control(dest, cts, self.cfg.cts_us)
        self._log(dest, head_radio_idx, msg.band, "cts", link, cts.wire_qlen())
        self._push(data_start, "data_start", node, (link, radio_idx, head_radio_idx, data_end, priority))

    def _ev_data_start(self, node: int, data):
        link, tail_radio, head_radio, data_end, priority = data
        self.reservations.pop(link, None)
        # instantaneous feasibility check against everything on the air
        self.steps += 1
        conf = self.links.conflict[link]
        ok = all(m not in conf for m in self.active_tx)
        for v in self.links.endpoints(link):
            inc = [m for m in self.active_tx if v in self.links.endpoints(m)]
            if len(inc) + 1 > self.links.radios_at(v):
                ok = False
            if any(int(self.links.band[m]) == int(self.links.band[link]) for m in inc):
                ok = False
        if not ok:
            self.violations += 1
            raise AssertionError(f"infeasible data start for link {link} at {self.now}")
        self.active_tx[link] = (self.now, data_end, tail_radio, head_radio)
        if priority == "HP":
            self._remove_hp(link)
        self._log(node, tail_radio, int(self.links.band[link]), "data_start", link,
                  int(self.q[self.links.hop[link]]))
        self._push(data_end, "data_end", node, (link, tail_radio, head_radio))

    def _ev_data_end(self, node: int, data):
        link, tail_radio_idx, head_radio_idx = data
        start, end, *_ = self.active_tx.pop(link)
        frames = (end - start) // self.cfg.packet_us
        capacity = int(self.links.rate[link]) * max(1, frames)
        served = self._depart(int(self.links.hop[link]), capacity, end)
        self._log(node, tail_radio_idx, int(self.links.band[link]), "data_end", link, served)
        dest = int(self.links.head[link])
        tr = self.radios[node][tail_radio_idx]
        hr = self.radios[dest][head_radio_idx]
        for r in (tr, hr):
            r.state = "idle"
            r.busy_until = self.now
        self._push(self.now, "walk", node, (tail_radio_idx, tr.bump()))
        self._push(self.now, "walk", dest, (head_radio_idx, hr.bump()))

    # ------------------------------------------------------------------
    # leader selection
    # ------------------------------------------------------------------

    def _gain_from_view(self, view: dict, group: int, band: int, t: int):
        """Max-gain link of the group on a band, from possibly stale information."""
        members = self.grouping.members[group]
        best = None  # (gain, link, displaced)
        for v in members:
            active = [
                l
                for l in range(self.links.n)
                if view[l][2] > t and v in self.links.endpoints(l)
            ]
            on_band = [l for l in active if int(self.links.band[l]) == band]
            if on_band:
                loss = sum(view[l][0] * view[l][1] for l in on_band)
                victim = min(on_band)
            elif len(active) >= self.links.radios_at(v):
                victim = min(active, key=lambda l: (view[l][0] * view[l][1], l))
                loss = view[victim][0] * view[victim][1]
            else:
                loss, victim = 0, None
            for l in self.outgoing_of_node[v]:
                if int(self.links.band[l]) != band or view[l][2] > t:
                    continue
                gain = view[l][0] * view[l][1] - loss
                if gain > 0 and (best is None or gain > best[0] or (gain == best[0] and l < best[1])):
                    best = (gain, l, victim)
        return best

    def _ev_leader(self, node: int, data):
        (group,) = data
        band = 1 + int(self.group_rngs[group].integers(self.links.n_bands))
        t = self.now
        if self.track_replicas and not self.cfg.leaderless:
            leader_best = self._gain_from_view(self.view[group], group, band, t)
            for v in self.grouping.members[group]:
                self.agree_total += 1
                member_best = self._gain_from_view(self.replicas[(group, v)], group, band, t)
                got = member_best[1] if member_best else None
                want = leader_best[1] if leader_best else None
                if got == want:
                    self.agree_checks += 1
        if self.cfg.leaderless:
            for v in self.grouping.members[group]:
                view = self.replicas.setdefault(
                    (group, v), {l: [0, int(self.links.rate[l]), 0] for l in range(self.links.n)}
                )
                best = self._gain_from_view(view, group, band, t)
                if best is not None:
                    gain, link, victim = best
                    if v == int(self.links.tail[link]):
                        self._add_hp(link, link % max(1, len(self.radios[v])))
                    if victim is not None and v == int(self.links.tail[victim]):
                        self._deactivate_listed(victim)
        else:
            best = self._gain_from_view(self.view[group], group, band, t)
            if best is not None:
                gain, link, victim = best
                leader = self.grouping.leaders[group]
                k = len(self.radios[int(self.links.tail[link])])
                msg = ControlMessage(
                    kind=LEADER_BCAST, link=link, dest=int(self.links.tail[link]),
                    band=band, qlen=self.view[group][link][0], rate=self.view[group][link][1],
                    radio=link % max(1, k), displaced=victim,
                )
                self._send_bcast(leader, msg)
        self._push(t + self.cfg.leader_period_us, "leader", node, (group,))

    def _send_bcast(self, leader: int, msg: ControlMessage):
        lo, hi = self.cfg.window("HP")
        slot = int(self.rng.integers(lo, hi + 1))
        self._push(self.now + slot * self.cfg.slot_time_us, "attempt_bcast", leader, (msg,))

    def _schedule_bcast_retry(self, leader: int, msg: ControlMessage):
        self._send_bcast(leader, msg)

    def _ev_attempt_bcast(self, node: int, data):
        (msg,) = data
        ctl_end = self._control_channel_end(node, self.now)
        if (ctl_end is not None and not self._collides_now(node)) or self.control_busy[node] > self.now:
            lo, hi = self.cfg.window("HP")
            slot = int(self.rng.integers(lo, hi + 1))
            base = max(ctl_end or self.now, self.control_busy[node], self.now)
            self._push(base + 1 + slot * self.cfg.slot_time_us, "attempt_bcast", node, (msg,))
            return
        self._start_control(node, msg, self.cfg.rts_us)
        self._log(node, -1, msg.band, "bcast", msg.link, msg.wire_qlen())

    # ------------------------------------------------------------------
    # QLEN updates
    # ------------------------------------------------------------------

    def _maybe_qlen_updates(self):
        thr = self.cfg.qlen_update_threshold
        for h in range(self.links.n_hops):
            if abs(int(self.q[h]) - int(self.advertised[h])) < thr:
                continue
            links_of_hop = [l for l in range(self.links.n) if int(self.links.hop[l]) == h]
            if not links_of_hop:
                continue
            l = links_of_hop[0]
            node = int(self.links.tail[l])
            if self.control_busy[node] > self.now or self._control_channel_end(node, self.now):
                continue  # opportunistic: skip when the band is busy
            msg = ControlMessage(
                kind=QLEN_UPDATE, link=l, dest=int(self.links.head[l]),
                band=int(self.links.band[l]), qlen=int(self.q[h]),
                rate=int(self.links.rate[l]), radio=0,
            )
            self.advertised[h] = self.q[h]
            self.stats["qlen_updates"] += 1
            self._start_control(node, msg, self.cfg.rts_us)

    # ------------------------------------------------------------------
    # baseline epochs
    # ------------------------------------------------------------------

    def _ev_epoch(self, node: int, data):
        (period,) = data
        if self.scheduler == "mb_gms":
            active = gms_schedule(self.links, self.q.copy())
        else:
            active, _ = self._qcsma.step(self._prev_epoch_active, self.q.copy())
        self._prev_epoch_active = frozenset(active)
        t = self.now
        overhead = self.cfg.rts_us + self.cfg.cts_us
        for i, l in enumerate(sorted(active)):
            if self.scheduler == "mb_gms":
                start = t + (i + 1) * overhead  # serialized RTS/CTS on the control band
                self._log(int(self.links.tail[l]), -1, int(self.links.band[l]), "rts", l,
                          int(min(self.q[self.links.hop[l]], 255)))
                self.stats["rts"] += 1
                self.stats["cts"] += 1
            else:
                start = t  # contention resolved in per-band control partitions
            end = t + period
            if start >= end:
                continue
            self._push(start, "data_start", int(self.links.tail[l]), (l, 0, 0, end, "EPOCH"))
        self._push(t + period, "epoch", 0, (period,))

    # ------------------------------------------------------------------
    # main loop
    # ------------------------------------------------------------------

    def run(self, horizon_us: int) -> AsyncResult:
        cfg = self.cfg
        n_slots = horizon_us // cfg.arrival_slot_us
        qtot = np.zeros(n_slots, dtype=np.int64)
        q_series = (
            np.zeros((n_slots, self.links.n_hops), dtype=np.int32) if self.record_queues else None
        )

        for s in range(n_slots):
            self._push(s * cfg.arrival_slot_us, "arrival", 0, (s,))
        if self.scheduler == "maxgain":
            for g in range(self.grouping.n_groups):
                phase = (g * cfg.leader_period_us) // max(1, self.grouping.n_groups)
                self._push(cfg.leader_period_us + phase, "leader", self.grouping.leaders[g], (g,))
        else:
            period = cfg.txopt_us if self.scheduler == "mb_gms" else cfg.packet_us
            self._push(0, "epoch", 0, (period,))

        handlers = {
            "walk": self._ev_walk,
            "sense": self._ev_sense,
            "attempt": self._ev_attempt,
            "attempt_bcast": self._ev_attempt_bcast,
            "ctl_end": self._ev_ctl_end,
            "data_start": self._ev_data_start,
            "data_end": self._ev_data_end,
            "leader": self._ev_leader,
        }
        _EVENT_ORDER.setdefault("attempt_bcast", 5)

        while self._heap:
            t, _prio, node, _seq, kind, data = heapq.heappop(self._heap)
            if t > horizon_us:
                break
            self.now = t
            if kind == "arrival":
                (s,) = data
                self._arrive(s)
                if self.scheduler == "maxgain":
                    self._maybe_qlen_updates()
                    for h in range(self.links.n_hops):
                        if self.q[h] > 0:
                            for l in range(self.links.n):
                                if int(self.links.hop[l]) == h:
                                    self._wake_radios(int(self.links.tail[l]))
                                    break
                if s > 0:
                    qtot[s - 1] = int(self.q.sum())
                    if self.record_queues:
                        q_series[s - 1] = self.q
                if s == n_slots - 1:
                    qtot[s] = int(self.q.sum())
                    if self.record_queues:
                        q_series[s] = self.q
            elif kind == "epoch":
                self._ev_epoch(node, data)
            else:
                handlers[kind](node, data)

        return AsyncResult(
            qtot=qtot,
            q_series=q_series,
            delivered=self.delivered,
            steps=self.steps,
            violations=self.violations,
            sojourns_us=self.sojourns,
            trace=self.trace,
            control_stats=dict(self.stats),
            epoch_agreement=(self.agree_checks, self.agree_total) if self.track_replicas else None,
            horizon_us=horizon_us,
        )


def run_async(
    links: LinkSystem,
    grouping: Grouping,
    traffic_specs,
    scheduler: str,
    horizon_us: int,
    seed: int,
    config: Optional[AsyncConfig] = None,
    control_audibility: Optional[BandGraph] = None,
    record_trace: bool = False,
    record_queues: bool = False,
    track_replicas: bool = False,
) -> AsyncResult:
    """Run one asynchronous simulation to the virtual-time horizon."""
    engine = AsyncEngine(
        links,
        grouping,
        traffic_specs,
        config or AsyncConfig(),
        seed,
        scheduler=scheduler,
        control_audibility=control_audibility,
        record_trace=record_trace,
        record_queues=record_queues,
        track_replicas=track_replicas,
    )
    return engine.run(horizon_us)


def validate_trace_feasibility(trace: Sequence[tuple], links: LinkSystem) -> int:
    """Continuous validator: replay data intervals from a trace, return violations."""
    intervals = {}
    events = []
    for rec in trace:
        t, node, radio, band, event, link, qlen = rec
        if event == "data_start":
            intervals[link] = t
        elif event == "data_end" and link in intervals:
            events.append((intervals.pop(link), t, link))
    violations = 0
    for i, (s1, e1, l1) in enumerate(events):
        for s2, e2, l2 in events[i + 1 :]:
            if e1 > s2 and s1 < e2:
                if l2 in links.conflict[l1]:
                    violations += 1
    # radio counts per node over time
    points = sorted({s for s, _, _ in events} | {e for _, e, _ in events})
    for p in points:
        ongoing = [l for s, e, l in events if s <= p < e]
        used = {}
        for l in ongoing:
            for v in links.endpoints(l):
                used.setdefault(v, []).append(int(links.band[l]))
        for v, bands in used.items():
            if len(bands) > links.radios_at(v) or len(bands) != len(set(bands)):
                violations += 1
    return violations
