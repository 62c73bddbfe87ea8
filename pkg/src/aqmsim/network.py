"""Hosts, routers, duplex links, and the dumbbell topology.

An EgressPort owns one direction of a link: a queue discipline plus a
transmitter. Serialization is tracked arithmetically (busy_until) so that a
packet costs one delivery event per hop, plus one wakeup event only while the
queue is backlogged on links with propagation delay.
"""
from __future__ import annotations

from .aqm import AqmParams, TailDrop, make_discipline
from .engine import MS, SECOND
from .packets import ECT0, F_ACK, F_ECE, F_SYN, Packet


class EgressPort:
    """Unidirectional transmitter with an attached queue discipline."""

    __slots__ = ("sim", "bandwidth_bps", "prop_ns", "q", "dst", "busy_until",
                 "_kick_pending", "_chained")

    def __init__(self, sim, bandwidth_bps: int, prop_ns: int, discipline, dst):
        if bandwidth_bps <= 0:
            raise ValueError("bandwidth_bps must be positive")
        self.sim = sim
        self.bandwidth_bps = bandwidth_bps
        self.prop_ns = prop_ns
        self.q = discipline
        self.dst = dst
        self.busy_until = 0
        self._kick_pending = False
        self._chained = prop_ns == 0

    def send(self, pkt) -> None:
        self.q.enqueue(pkt, self.sim.now)
        if self.busy_until <= self.sim.now:
            self._pump()
        elif not self._chained and not self._kick_pending:
            self._kick_pending = True
            self.sim.schedule(self.busy_until, self._kick)

    def _pump(self) -> None:
        sim = self.sim
        pkt = self.q.dequeue(sim.now)
        if pkt is None:
            return
        bw = self.bandwidth_bps
        done = sim.now + (pkt.size_bytes * 8 * SECOND + bw // 2) // bw
        self.busy_until = done
        if self._chained:
            sim.schedule(done, self._deliver_chain, pkt)
        else:
            sim.schedule(done + self.prop_ns, self.dst.receive, pkt)
            if len(self.q) and not self._kick_pending:
                self._kick_pending = True
                sim.schedule(done, self._kick)

    def _kick(self) -> None:
        self._kick_pending = False
        if self.sim.now >= self.busy_until:
            self._pump()
        elif len(self.q):
            self._kick_pending = True
            self.sim.schedule(self.busy_until, self._kick)

    def _deliver_chain(self, pkt) -> None:
        self.dst.receive(pkt)
        if self.sim.now >= self.busy_until:
            self._pump()


class Host:
    """End host with a single uplink; dispatches packets to its connections."""

    __slots__ = ("sim", "node_id", "name", "egress", "conns", "tap")

    def __init__(self, sim, node_id: int, name: str):
        self.sim = sim
        self.node_id = node_id
        self.name = name
        self.egress = None
        self.conns = {}
        self.tap = None

    def attach(self, conn, receiver_end: bool) -> None:
        self.conns[conn.cid] = (conn, receiver_end)

    def receive(self, pkt) -> None:
        if self.tap is not None:
            self.tap(pkt)
        conn, receiver_end = self.conns[pkt.flow_id]
        if receiver_end:
            conn.on_receiver_receive(pkt)
        else:
            conn.on_sender_receive(pkt)


class Router:
    """Static routing by destination node id, with an optional tap that
    counts ECE-flagged, non-negotiation packets headed to one side."""

    __slots__ = ("sim", "node_id", "name", "routes", "ece_count_ids", "ece_hook")

    def __init__(self, sim, node_id: int, name: str):
        self.sim = sim
        self.node_id = node_id
        self.name = name
        self.routes = {}
        self.ece_count_ids = frozenset()
        self.ece_hook = None

    def receive(self, pkt) -> None:
        if pkt.dst_id in self.ece_count_ids:
            f = pkt.flags
            if f & F_ECE and not f & F_SYN:
                self.ece_hook(self.sim.now)
        self.routes[pkt.dst_id].send(pkt)


class PingProbe:
    """Request/response probe between the monitor hosts.

    With the default 64 B request this measures the path round trip; with a
    data-sized request it times single-segment probe transfers. The
    responder echoes each request immediately with a 64 B reply. Round-trip
    samples land in `samples` (ns). Probes travel as ECT so a control-law
    action marks them instead of eating them; a CE mark does not affect the
    timing. Lost probes (overflow) simply never produce a sample.
    """

    REPLY_SIZE = 64

    def __init__(self, sim, fid: int, src, dst, interval_ns: int = 100 * MS,
                 start_ns: int = 0, request_size: int = 64):
        self.sim = sim
        self.fid = fid
        self.src = src
        self.dst = dst
        self.interval_ns = interval_ns
        self.start_ns = start_ns
        self.request_size = request_size
        self.samples = []
        self._seq = 0
        src.attach(self, receiver_end=False)
        dst.attach(self, receiver_end=True)

    @property
    def cid(self) -> int:
        return self.fid

    def start(self) -> None:
        self.sim.schedule(self.start_ns, self._send_request)

    def _send_request(self) -> None:
        now = self.sim.now
        pkt = Packet(self.fid, self._seq, self.request_size, ECT0, F_ACK,
                     now, self.dst.node_id, is_probe=True)
        self._seq += 1
        self.src.egress.send(pkt)
        self.sim.schedule(now + self.interval_ns, self._send_request)

    def on_receiver_receive(self, pkt) -> None:
        reply = Packet(self.fid, pkt.seq, self.REPLY_SIZE, ECT0, F_ACK,
                       pkt.sent_at, self.src.node_id, is_probe=True)
        self.dst.egress.send(reply)

    def on_sender_receive(self, pkt) -> None:
        self.samples.append(self.sim.now - pkt.sent_at)


class Topology:
    """Dumbbell: sender hosts behind edge router R1, one bottleneck link to
    R2, receiver hosts behind R2, and one monitor pair."""

    def __init__(self, sim, cfg, rng_hub):
        self.sim = sim
        self.cfg = cfg
        n = cfg.pairs
        ids = iter(range(2 * n + 4))
        self.hosts_b = [Host(sim, next(ids), f"b{i}") for i in range(n)]
        self.hosts_a = [Host(sim, next(ids), f"a{i}") for i in range(n)]
        self.mon_b = Host(sim, next(ids), "monB")
        self.mon_a = Host(sim, next(ids), "monA")
        self.r1 = Router(sim, next(ids), "R1")
        self.r2 = Router(sim, next(ids), "R2")

        access = []
        if cfg.random_topology:
            rng = rng_hub.stream("topology")
            for _ in range(n):
                bw = int(rng.integers(cfg.rand_access_bw_min_mbps,
                                      cfg.rand_access_bw_max_mbps + 1)) * 10**6
                prop = int(rng.integers(cfg.rand_prop_min_ms,
                                        cfg.rand_prop_max_ms + 1)) * MS
                access.append((bw, prop))
        else:
            access = [(cfg.access_bw_bps, cfg.access_prop_ns)] * n

        def taildrop():
            return TailDrop(AqmParams(hard_limit=cfg.hard_limit))

        hash_seed = int(rng_hub.stream("fq-hash").integers(0, 2**63))
        self.aqm_params = AqmParams(cfg.target_ns, cfg.interval_ns,
                                    cfg.hard_limit, cfg.ecn)
        self.bottleneck = make_discipline(cfg.disc, self.aqm_params, hash_seed)

        a_side = frozenset(h.node_id for h in self.hosts_a) | {self.mon_a.node_id}

        # B-side uplinks and R1 return ports.
        for host, (bw, prop) in zip(self.hosts_b, access):
            host.egress = EgressPort(sim, bw, prop, taildrop(), self.r1)
            self.r1.routes[host.node_id] = EgressPort(sim, bw, prop, taildrop(), host)
        self.mon_b.egress = EgressPort(sim, cfg.access_bw_bps, cfg.access_prop_ns,
                                       taildrop(), self.r1)
        self.r1.routes[self.mon_b.node_id] = EgressPort(
            sim, cfg.access_bw_bps, cfg.access_prop_ns, taildrop(), self.mon_b)

        # The single bottleneck R1 -> R2 carries every A-bound packet.
        bport = EgressPort(sim, cfg.bottleneck_bw_bps, cfg.bottleneck_prop_ns,
                           self.bottleneck, self.r2)
        for dst_id in a_side:
            self.r1.routes[dst_id] = bport
        self.bottleneck_port = bport

        # A-side links and the reverse bottleneck direction (plain FIFO).
        for host in self.hosts_a:
            host.egress = EgressPort(sim, cfg.exit_bw_bps, cfg.exit_prop_ns,
                                     taildrop(), self.r2)
            self.r2.routes[host.node_id] = EgressPort(
                sim, cfg.exit_bw_bps, cfg.exit_prop_ns, taildrop(), host)
        self.mon_a.egress = EgressPort(sim, cfg.exit_bw_bps, cfg.exit_prop_ns,
                                       taildrop(), self.r2)
        self.r2.routes[self.mon_a.node_id] = EgressPort(
            sim, cfg.exit_bw_bps, cfg.exit_prop_ns, taildrop(), self.mon_a)

        rev = EgressPort(sim, cfg.bottleneck_bw_bps, cfg.bottleneck_prop_ns,
                         taildrop(), self.r1)
        for host in self.hosts_b:
            self.r2.routes[host.node_id] = rev
        self.r2.routes[self.mon_b.node_id] = rev

    def base_rtt_ns(self) -> int:
        """Idle round trip on the monitor path (propagation only)."""
        cfg = self.cfg
        return 2 * (cfg.access_prop_ns + cfg.bottleneck_prop_ns + cfg.exit_prop_ns)
