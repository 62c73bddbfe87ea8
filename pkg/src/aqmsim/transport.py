"""ECN-capable TCP abstraction with CUBIC-style congestion control.

The feedback chain under study is primary here: a CE-marked data packet makes
the receiver echo ECE on every ACK until it sees a CWR-flagged data packet;
the sender reduces its window at most once per round trip no matter how many
ECE or loss signals arrive inside that window. Delayed ACKs, SACK and Nagle
are deliberately absent.
"""
from __future__ import annotations

from .engine import MS, SECOND
from .packets import (CE, ECT0, NOT_ECT, F_ACK, F_CWR, F_ECE, F_SYN, Packet)

MSS = 1500
ACK_SIZE = 64
MIN_RTO = 200 * MS
INITIAL_RTO = SECOND
INITIAL_CWND = 10.0


class CubicParams:
    """Growth constant and multiplicative decrease factor."""

    __slots__ = ("C", "beta")

    def __init__(self, C: float = 0.4, beta: float = 0.7):
        if C <= 0:
            raise ValueError("C must be positive")
        if not 0 < beta < 1:
            raise ValueError("beta must be in (0, 1)")
        self.C = C
        self.beta = beta


DEFAULT_CUBIC = CubicParams()


def cubic_window(t_since_epoch: float, w_max: float, params: CubicParams = DEFAULT_CUBIC) -> float:
    """Window size C*(t-K)^3 + w_max in packets, floored at one packet."""
    if t_since_epoch < 0:
        raise ValueError("t_since_epoch must be >= 0")
    if w_max < 1:
        raise ValueError("w_max must be >= 1")
    k = (w_max * (1.0 - params.beta) / params.C) ** (1.0 / 3.0)
    w = params.C * (t_since_epoch - k) ** 3 + w_max
    return w if w > 1.0 else 1.0


def aimd_rate(params: CubicParams = DEFAULT_CUBIC) -> float:
    """Reno-equivalent additive increase (packets per RTT) used for the
    TCP-friendly region: 3 * (1 - beta) / (1 + beta)."""
    return 3.0 * (1.0 - params.beta) / (1.0 + params.beta)


def negotiate_ecn(initiator_capable: bool, responder_capable: bool) -> bool:
    """Outcome of the SYN / SYN-ACK ECN handshake."""
    return initiator_capable and responder_capable


def syn_flags(initiator_capable: bool) -> int:
    return F_SYN | F_ECE | F_CWR if initiator_capable else F_SYN


def synack_flags(responder_capable: bool) -> int:
    return F_SYN | F_ACK | F_ECE if responder_capable else F_SYN | F_ACK


class Connection:
    """One unidirectional bulk transfer: sender on src host, receiver on dst.

    The object owns both endpoint state machines; the network between them is
    real (packets are routed and queued), so all ECN signaling travels
    in-band.
    """

    __slots__ = (
        "sim", "cid", "src", "dst", "ecn_capable", "is_probe", "params",
        "start_ns", "mss", "ack_size",
        # sender
        "cwnd", "ssthresh", "w_max", "w_est", "epoch_start_ns", "in_cwr_until",
        "cwr_pending", "ecn_negotiated", "established", "snd_nxt", "snd_una",
        "dup_acks", "recover_seq", "send_ns", "retx_seqs", "srtt_ns",
        "rto_deadline", "rto_pending", "rto_backoff", "syn_sent_ns",
        "sent_segments", "retx_segments", "reduction_log",
        # receiver
        "rcv_nxt", "ooo", "ece_pending", "delivered_bytes",
        # hooks
        "rtt_cb", "receiver_log",
    )

    def __init__(self, sim, cid: int, src, dst, *, ecn_capable: bool = True,
                 start_ns: int = 0, is_probe: bool = False,
                 params: CubicParams = DEFAULT_CUBIC,
                 mss: int = MSS, ack_size: int = ACK_SIZE):
        self.sim = sim
        self.cid = cid
        self.src = src
        self.dst = dst
        self.ecn_capable = ecn_capable
        self.is_probe = is_probe
        self.params = params
        self.start_ns = start_ns
        self.mss = mss
        self.ack_size = ack_size

        self.cwnd = INITIAL_CWND
        self.ssthresh = float("inf")
        self.w_max = INITIAL_CWND
        self.w_est = INITIAL_CWND
        self.epoch_start_ns = 0
        self.in_cwr_until = -1
        self.cwr_pending = False
        self.ecn_negotiated = False
        self.established = False
        self.snd_nxt = 0
        self.snd_una = 0
        self.dup_acks = 0
        self.recover_seq = 0
        self.send_ns = {}
        self.retx_seqs = set()
        self.srtt_ns = 0
        self.rto_deadline = 0
        self.rto_pending = False
        self.rto_backoff = 1
        self.syn_sent_ns = 0
        self.sent_segments = 0
        self.retx_segments = 0
        self.reduction_log = []

        self.rcv_nxt = 0
        self.ooo = set()
        self.ece_pending = False
        self.delivered_bytes = 0

        self.rtt_cb = None
        self.receiver_log = None

        src.attach(self, receiver_end=False)
        dst.attach(self, receiver_end=True)

    # -- setup ------------------------------------------------------------

    def start(self) -> None:
        self.sim.schedule(self.start_ns, self._send_syn)

    def _send_syn(self) -> None:
        now = self.sim.now
        self.syn_sent_ns = now
        pkt = Packet(self.cid, 0, self.ack_size, NOT_ECT,
                     syn_flags(self.ecn_capable), now, self.dst.node_id,
                     is_probe=self.is_probe)
        self.src.egress.send(pkt)
        self.rto_deadline = now + INITIAL_RTO * self.rto_backoff
        self._schedule_rto(self.rto_deadline)

    # -- sender side ------------------------------------------------------

    def on_sender_receive(self, pkt) -> None:
        now = self.sim.now
        if pkt.flags & F_SYN:  # SYN-ACK completes the handshake
            if self.established:
                return
            self.established = True
            self.ecn_negotiated = negotiate_ecn(self.ecn_capable,
                                                bool(pkt.flags & F_ECE))
            self._rtt_sample(now - self.syn_sent_ns)
            self.rto_backoff = 1
            self._try_send()
            return
        ack = pkt.seq
        if ack > self.snd_una:
            self._ack_advance(ack, bool(pkt.flags & F_ECE))
        elif ack == self.snd_una and self.snd_nxt > self.snd_una:
            self.dup_acks += 1
            if pkt.flags & F_ECE:
                self._congestion_signal("ece")
            if self.dup_acks == 3 and self.snd_una >= self.recover_seq:
                self._congestion_signal("loss")
            self._try_send()

    def _ack_advance(self, ack: int, ece: bool) -> None:
        now = self.sim.now
        newly = 0
        sample = -1
        seq = self.snd_una
        while seq < ack:
            t0 = self.send_ns.pop(seq, None)
            if t0 is not None and seq not in self.retx_seqs:
                sample = now - t0
            self.retx_seqs.discard(seq)
            newly += 1
            seq += self.mss
        if sample >= 0:
            self._rtt_sample(sample)
        self.snd_una = ack
        self.dup_acks = 0
        if ece:
            self._congestion_signal("ece")
        self._grow(newly)
        if self.snd_una < self.recover_seq:
            # Partial ack exposes the next hole; fill it without a new cut.
            self._retransmit(self.snd_una)
        self.rto_backoff = 1
        self.rto_deadline = now + self._rto()
        self._try_send()

    def _rtt_sample(self, sample_ns: int) -> None:
        if self.srtt_ns == 0:
            self.srtt_ns = sample_ns
        else:
            self.srtt_ns = (7 * self.srtt_ns + sample_ns) // 8
        if self.rtt_cb is not None:
            self.rtt_cb(sample_ns)

    def _rto(self) -> int:
        base = 2 * self.srtt_ns if self.srtt_ns else INITIAL_RTO
        if base < MIN_RTO:
            base = MIN_RTO
        return base * self.rto_backoff

    def _grow(self, newly_acked: int) -> None:
        p = self.params
        aimd = aimd_rate(p)
        for _ in range(newly_acked):
            if self.cwnd < self.ssthresh:
                self.cwnd += 1.0
                self.w_est = self.cwnd
            else:
                t = (self.sim.now - self.epoch_start_ns + self.srtt_ns) / SECOND
                target = cubic_window(t, self.w_max, p)
                if target > self.cwnd:
                    self.cwnd += (target - self.cwnd) / self.cwnd
                else:
                    self.cwnd += 0.01 / self.cwnd
                # TCP-friendly region: never grow slower than a Reno-rate
                # window started from the same reduction.
                self.w_est += aimd / self.cwnd
                if self.w_est > self.cwnd:
                    self.cwnd = self.w_est

    def _congestion_signal(self, kind: str) -> None:
        now = self.sim.now
        if now >= self.in_cwr_until:
            self.w_max = self.cwnd
            self.cwnd = max(self.params.beta * self.cwnd, 1.0)
            self.ssthresh = self.cwnd
            self.w_est = self.cwnd
            self.epoch_start_ns = now
            self.in_cwr_until = now + (self.srtt_ns if self.srtt_ns else INITIAL_RTO)
            self.reduction_log.append((now, self.srtt_ns))
            if kind == "ece":
                self.cwr_pending = True
        if kind == "loss":
            self.recover_seq = self.snd_nxt
            self._retransmit(self.snd_una)

    def _retransmit(self, seq: int) -> None:
        now = self.sim.now
        self.retx_seqs.add(seq)
        self.send_ns.pop(seq, None)
        self.retx_segments += 1
        pkt = Packet(self.cid, seq, self.mss,
                     ECT0 if self.ecn_negotiated else NOT_ECT,
                     F_ACK, now, self.dst.node_id, is_probe=self.is_probe)
        self.src.egress.send(pkt)
        self.rto_deadline = now + self._rto()
        self._schedule_rto(self.rto_deadline)

    def _try_send(self) -> None:
        now = self.sim.now
        limit = int(self.cwnd) * self.mss
        while self.snd_nxt - self.snd_una < limit:
            flags = F_ACK
            if self.cwr_pending:
                flags |= F_CWR
                self.cwr_pending = False
            pkt = Packet(self.cid, self.snd_nxt, self.mss,
                         ECT0 if self.ecn_negotiated else NOT_ECT,
                         flags, now, self.dst.node_id, is_probe=self.is_probe)
            self.send_ns[self.snd_nxt] = now
            self.snd_nxt += self.mss
            self.sent_segments += 1
            self.src.egress.send(pkt)
        if self.snd_nxt > self.snd_una:
            if self.rto_deadline <= now:
                self.rto_deadline = now + self._rto()
            self._schedule_rto(self.rto_deadline)

    # -- retransmission timer ----------------------------------------------

    def _schedule_rto(self, deadline: int) -> None:
        if not self.rto_pending:
            self.rto_pending = True
            self.sim.schedule(deadline, self._on_rto)

    def _on_rto(self) -> None:
        self.rto_pending = False
        now = self.sim.now
        if self.established and self.snd_nxt == self.snd_una:
            return
        if now < self.rto_deadline:
            self._schedule_rto(self.rto_deadline)
            return
        if not self.established:
            self.rto_backoff = min(self.rto_backoff * 2, 8)
            self._send_syn()
            return
        # Timeout: collapse to one segment and restart from the first hole.
        self.w_max = max(self.cwnd, 1.0)
        self.ssthresh = max(self.params.beta * self.cwnd, 2.0)
        self.cwnd = 1.0
        self.w_est = 1.0
        self.epoch_start_ns = now
        self.in_cwr_until = now + (self.srtt_ns if self.srtt_ns else INITIAL_RTO)
        self.dup_acks = 0
        self.recover_seq = self.snd_nxt
        self.rto_backoff = min(self.rto_backoff * 2, 8)
        self._retransmit(self.snd_una)

    # -- receiver side -----------------------------------------------------

    def on_receiver_receive(self, pkt) -> None:
        now = self.sim.now
        if pkt.flags & F_SYN:
            reply = Packet(self.cid, 0, self.ack_size, NOT_ECT,
                           synack_flags(self.ecn_capable), now, self.src.node_id,
                           is_probe=self.is_probe)
            self.dst.egress.send(reply)
            return
        if pkt.flags & F_CWR:
            self.ece_pending = False
        if pkt.ecn == CE:
            self.ece_pending = True
        if self.receiver_log is not None:
            self.receiver_log.append(("data", pkt.ecn, pkt.flags))
        seq = pkt.seq
        if seq == self.rcv_nxt:
            self.rcv_nxt += self.mss
            while self.rcv_nxt in self.ooo:
                self.ooo.remove(self.rcv_nxt)
                self.rcv_nxt += self.mss
            self.delivered_bytes = self.rcv_nxt
        elif seq > self.rcv_nxt:
            self.ooo.add(seq)
        flags = F_ACK | F_ECE if self.ece_pending else F_ACK
        ack = Packet(self.cid, self.rcv_nxt, self.ack_size, NOT_ECT,
                     flags, now, self.src.node_id, is_probe=self.is_probe)
        if self.receiver_log is not None:
            self.receiver_log.append(("ack", self.ece_pending, flags))
        self.dst.egress.send(ack)
