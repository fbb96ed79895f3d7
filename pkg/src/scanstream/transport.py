"""Paced datagram transport: fragmentation, sender queue, reassembly, feedback.

The sender fragments serialized scan units into MTU-sized packets, admits
each packet through the congestion window gate, and smooths emission with a
sliding-window pacing limiter: every packet send checks the bytes emitted in
the trailing pacing window, which bounds the bytes inside *any* window of
that length (the window anchored at the latest send inside an arbitrary
interval contains all of that interval's sends).

There is no retransmission.  Late or lost scan data is worthless to the
consumer, so loss surfaces as missing scans plus controller backoff.
"""
from __future__ import annotations

import struct
from collections import deque
from dataclasses import dataclass, field

from .codec import DecodeError, EncodedUnit, pack_unit, unpack_unit
from .congestion import CongestionState, ControlParams, FeedbackReport, can_send

NOT_ECT = 0
ECT1 = 1
CE = 3
_ECN_VALUES = (NOT_ECT, ECT1, CE)

PACKET_MAGIC = b"SSP1"
FEEDBACK_MAGIC = b"SSF1"
# u32 seq | u32 scan_id | u16 frag_index | u16 frag_count | u64 send_ns | u8 ecn | u16 len
_PACKET_HEADER = struct.Struct("<4sIIHHQBH")
# u32 highest_seq | u64 acked_bytes | u64 ce_bytes | u32 lost | u64 recv_ns | u64 echo_ns
_FEEDBACK_WIRE = struct.Struct("<4sIQQIQQ")

PACKET_HEADER_BYTES = _PACKET_HEADER.size
FEEDBACK_WIRE_BYTES = _FEEDBACK_WIRE.size


class WireFormatError(ValueError):
    """Datagram bytes do not parse as a versioned packet or report."""


@dataclass
class Packet:
    seq: int
    scan_id: int
    frag_index: int
    frag_count: int
    send_time: float
    ecn: int
    payload: bytes


def packet_wire_size(pkt: Packet) -> int:
    return PACKET_HEADER_BYTES + len(pkt.payload)


def pack_packet(pkt: Packet) -> bytes:
    if not (0 <= pkt.frag_index < pkt.frag_count):
        raise WireFormatError(f"frag_index {pkt.frag_index} outside frag_count {pkt.frag_count}")
    header = _PACKET_HEADER.pack(
        PACKET_MAGIC,
        pkt.seq,
        pkt.scan_id,
        pkt.frag_index,
        pkt.frag_count,
        round(pkt.send_time * 1e9),
        pkt.ecn,
        len(pkt.payload),
    )
    return header + pkt.payload


def unpack_packet(raw: bytes) -> Packet:
    if len(raw) < PACKET_HEADER_BYTES:
        raise WireFormatError(f"datagram of {len(raw)} bytes is shorter than a packet header")
    magic, seq, scan_id, idx, cnt, send_ns, ecn, length = _PACKET_HEADER.unpack_from(raw)
    if magic != PACKET_MAGIC:
        raise WireFormatError(f"bad packet magic {magic!r}")
    if ecn not in _ECN_VALUES:
        raise WireFormatError(f"unknown ecn codepoint {ecn}")
    if idx >= cnt:
        raise WireFormatError(f"frag_index {idx} outside frag_count {cnt}")
    payload = raw[PACKET_HEADER_BYTES:]
    if len(payload) != length:
        raise WireFormatError(f"payload length {len(payload)} != header length {length}")
    return Packet(seq, scan_id, idx, cnt, send_ns / 1e9, ecn, payload)


def pack_feedback(report: FeedbackReport) -> bytes:
    return _FEEDBACK_WIRE.pack(
        FEEDBACK_MAGIC,
        report.highest_acked_seq,
        report.cumulative_acked_bytes,
        report.cumulative_ce_marked_bytes,
        report.cumulative_lost_packets,
        round(report.receiver_timestamp * 1e9),
        round(report.echo_timestamp * 1e9),
    )


def unpack_feedback(raw: bytes) -> FeedbackReport:
    if len(raw) != FEEDBACK_WIRE_BYTES:
        raise WireFormatError(f"feedback datagram must be {FEEDBACK_WIRE_BYTES} bytes, got {len(raw)}")
    magic, highest, acked, ce, lost, recv_ns, echo_ns = _FEEDBACK_WIRE.unpack(raw)
    if magic != FEEDBACK_MAGIC:
        raise WireFormatError(f"bad feedback magic {magic!r}")
    return FeedbackReport(
        highest_acked_seq=highest,
        cumulative_acked_bytes=acked,
        cumulative_ce_marked_bytes=ce,
        cumulative_lost_packets=lost,
        receiver_timestamp=recv_ns / 1e9,
        echo_timestamp=echo_ns / 1e9,
    )


@dataclass(frozen=True)
class TransportParams:
    mtu_payload: int = 1200
    sender_queue_cap: int = 20  # units; oldest dropped beyond this
    pacing_headroom: float = 1.25
    pacing_window: float = 0.010  # seconds
    feedback_interval: float = 0.010  # seconds
    feedback_every_packets: int = 2

    def validate(self) -> None:
        if self.mtu_payload <= 0 or self.mtu_payload > 65535:
            raise ValueError(f"mtu_payload must be in (0, 65535], got {self.mtu_payload}")
        if self.sender_queue_cap < 1:
            raise ValueError(f"sender_queue_cap must be >= 1, got {self.sender_queue_cap}")
        if self.pacing_headroom < 1.0:
            raise ValueError(f"pacing_headroom must be >= 1, got {self.pacing_headroom}")
        if self.pacing_window <= 0 or self.feedback_interval <= 0:
            raise ValueError("pacing_window and feedback_interval must be positive")
        if self.feedback_every_packets < 1:
            raise ValueError("feedback_every_packets must be >= 1")


@dataclass(frozen=True)
class DropRecord:
    time: float
    scan_id: int
    unit_bytes: int


@dataclass
class _QueuedUnit:
    scan_id: int
    blob: bytes
    enqueue_time: float


@dataclass
class _Frame:
    scan_id: int
    chunks: list[bytes]
    next_index: int = 0
    sent_bytes: int = 0


class DatagramSender:
    """Sender half: unit queue, fragmentation, window gate, pacing limiter."""

    def __init__(self, params: TransportParams):
        params.validate()
        self.params = params
        self.queue: deque[_QueuedUnit] = deque()
        self.queue_bytes = 0
        self.drop_log: list[DropRecord] = []
        self.next_seq = 1  # seq 0 is reserved for "nothing acked yet"
        self.sent_packets = 0
        self.sent_wire_bytes = 0
        self.blocked_reason = "idle"
        self._frame: _Frame | None = None
        self._window: deque[tuple[float, int]] = deque()
        self._window_bytes = 0
        self._tokens = 0.0
        self._token_stamp: float | None = None
        self._pace_wake = 0.0
        self._inflight: dict[int, int] = {}  # seq -> wire bytes, for exact BIF accounting

    # ------------------------------------------------------------- queueing

    def enqueue_unit(self, unit: EncodedUnit, now: float) -> None:
        """Append a unit; beyond the cap the oldest queued unit is dropped."""
        blob = pack_unit(unit)
        if len(self.queue) >= self.params.sender_queue_cap:
            victim = self.queue.popleft()
            self.queue_bytes -= len(victim.blob)
            self.drop_log.append(DropRecord(now, victim.scan_id, len(victim.blob)))
        self.queue.append(_QueuedUnit(unit.scan_id, blob, now))
        self.queue_bytes += len(blob)

    @property
    def queue_depth(self) -> int:
        return len(self.queue) + (1 if self._frame is not None else 0)

    @property
    def scans_dropped(self) -> int:
        return len(self.drop_log)

    def head_age(self, now: float) -> float:
        if not self.queue:
            return 0.0
        return now - self.queue[0].enqueue_time

    # -------------------------------------------------------------- sending

    def _evict_window(self, now: float) -> None:
        horizon = now - self.params.pacing_window
        while self._window and self._window[0][0] <= horizon:
            self._window_bytes -= self._window[0][1]
            self._window.popleft()

    def _pacing_budget(self, pacing_rate: float) -> float:
        return self.params.pacing_headroom * pacing_rate * self.params.pacing_window / 8.0

    def pace_and_send(
        self,
        cc_state: CongestionState | None,
        cc_params: ControlParams | None,
        pacing_rate: float,
        now: float,
    ) -> list[Packet]:
        """Emit every packet currently allowed by the window and pacing gates.

        Pacing is a token bucket refilled at headroom x pacing_rate with a
        one-packet burst, so emissions spread out instead of leaving in
        window-sized clumps; the sliding-window budget stays on as the hard
        bound on bytes per pacing_window (with a one-packet minimum grant
        when the window is empty). cc_state None disables the congestion
        window gate entirely (fixed-rate baseline operation); pacing still
        applies.
        """
        if pacing_rate <= 0:
            raise ValueError(f"pacing_rate must be positive, got {pacing_rate}")
        out: list[Packet] = []
        self._evict_window(now)
        budget = self._pacing_budget(pacing_rate)
        mtu = self.params.mtu_payload
        rate_bytes = self.params.pacing_headroom * pacing_rate / 8.0
        bucket = float(PACKET_HEADER_BYTES + mtu)
        if self._token_stamp is None:
            self._tokens = bucket
        else:
            self._tokens = min(bucket, self._tokens + (now - self._token_stamp) * rate_bytes)
        self._token_stamp = now

        while True:
            if self._frame is None:
                if not self.queue:
                    self.blocked_reason = "idle"
                    break
                unit = self.queue.popleft()
                self.queue_bytes -= len(unit.blob)
                chunks = [unit.blob[i : i + mtu] for i in range(0, len(unit.blob), mtu)]
                if len(chunks) > 65535:
                    raise ValueError(f"unit of {len(unit.blob)} bytes exceeds 65535 fragments")
                self._frame = _Frame(unit.scan_id, chunks)
            frame = self._frame
            payload = frame.chunks[frame.next_index]
            wire = PACKET_HEADER_BYTES + len(payload)
            if cc_state is not None and not can_send(cc_state, cc_params, wire, frame.sent_bytes):
                self.blocked_reason = "cwnd"
                break
            # empty window always grants one packet: at very low rates the
            # budget can be smaller than a single MTU and would stall forever
            if self._window and self._window_bytes + wire > budget:
                self.blocked_reason = "pacing"
                # +1 ns guards against float roundoff leaving the entry un-evicted
                self._pace_wake = self._window[0][0] + self.params.pacing_window + 1e-9
                break
            if wire > self._tokens:
                self.blocked_reason = "pacing"
                self._pace_wake = now + (wire - self._tokens) / rate_bytes + 1e-9
                break
            pkt = Packet(
                seq=self.next_seq,
                scan_id=frame.scan_id,
                frag_index=frame.next_index,
                frag_count=len(frame.chunks),
                send_time=now,
                ecn=ECT1,
                payload=payload,
            )
            out.append(pkt)
            self.next_seq += 1
            self.sent_packets += 1
            self.sent_wire_bytes += wire
            self._window.append((now, wire))
            self._window_bytes += wire
            self._tokens -= wire
            self._inflight[pkt.seq] = wire
            if cc_state is not None:
                cc_state.bytes_in_flight += wire
            frame.sent_bytes += len(payload)
            frame.next_index += 1
            if frame.next_index == len(frame.chunks):
                self._frame = None
        return out

    def next_send_opportunity(self, now: float) -> float | None:
        """Earliest time pacing frees room for another packet.

        Only meaningful after a pace_and_send call blocked on pacing; cwnd
        and queue blocks clear on feedback/enqueue events instead of timers.
        """
        if self.blocked_reason != "pacing":
            return None
        return max(self._pace_wake, now)

    def reconcile_inflight(self, cc_state: CongestionState, highest_acked_seq: int) -> None:
        """Resync bytes_in_flight with the per-seq ledger after feedback.

        The link delivers in order, so every seq at or below the highest
        acked one has either arrived (acked) or been dropped; both must
        leave the in-flight count or losses would inflate it forever.
        """
        for seq in [s for s in self._inflight if s <= highest_acked_seq]:
            del self._inflight[seq]
        cc_state.bytes_in_flight = sum(self._inflight.values())


@dataclass
class _PartialScan:
    frag_count: int
    fragments: dict[int, bytes] = field(default_factory=dict)
    received_bytes: int = 0


class DatagramReceiver:
    """Receiver half: loss/CE accounting, reassembly, feedback snapshots."""

    def __init__(self, params: TransportParams):
        params.validate()
        self.params = params
        self.highest_seq = 0
        self.cumulative_acked_bytes = 0
        self.cumulative_ce_bytes = 0
        self.cumulative_lost_packets = 0
        self.duplicate_packets = 0
        self.malformed_datagrams = 0
        self.malformed_units = 0
        self.delivered_scans = 0
        self.newest_send_time = 0.0
        self.newest_arrival_time = 0.0
        self.packets_since_report = 0
        self.last_report_time = 0.0
        self._partial: dict[int, _PartialScan] = {}
        self._delivered: set[int] = set()

    def receive_datagram(self, raw: bytes, now: float) -> EncodedUnit | None:
        try:
            pkt = unpack_packet(raw)
        except WireFormatError:
            self.malformed_datagrams += 1
            return None
        return self.receive_packet(pkt, now)

    def receive_packet(self, pkt: Packet, now: float) -> EncodedUnit | None:
        """Account one arrival; returns the reassembled unit when complete.

        The forward path is a FIFO link, so packets arrive in seq order and
        any gap is loss; an already-seen seq can only be a duplicate.
        """
        if pkt.seq <= self.highest_seq:
            self.duplicate_packets += 1
            return None
        self.cumulative_lost_packets += pkt.seq - self.highest_seq - 1
        self.highest_seq = pkt.seq
        wire = packet_wire_size(pkt)
        self.cumulative_acked_bytes += wire
        if pkt.ecn == CE:
            self.cumulative_ce_bytes += wire
        self.newest_send_time = pkt.send_time
        self.newest_arrival_time = now
        self.packets_since_report += 1

        if pkt.scan_id in self._delivered:
            self.duplicate_packets += 1
            return None
        part = self._partial.get(pkt.scan_id)
        if part is None:
            part = self._partial[pkt.scan_id] = _PartialScan(pkt.frag_count)
        if pkt.frag_count != part.frag_count or pkt.frag_index in part.fragments:
            self.duplicate_packets += 1
            return None
        part.fragments[pkt.frag_index] = pkt.payload
        part.received_bytes += len(pkt.payload)
        if len(part.fragments) < part.frag_count:
            return None

        blob = b"".join(part.fragments[i] for i in range(part.frag_count))
        del self._partial[pkt.scan_id]
        self._delivered.add(pkt.scan_id)
        try:
            unit = unpack_unit(blob)
        except DecodeError:
            self.malformed_units += 1
            return None
        self.delivered_scans += 1
        return unit

    def incomplete_scans(self) -> int:
        return len(self._partial)

    def expire_partials_below(self, scan_id: int) -> list[int]:
        """Drop partial scans older than an arriving one; returns their ids.

        Frames leave the sender in scan order over an in-order link, so once
        any fragment of a newer scan arrives, missing fragments of older
        scans can never show up: that reassembly state is dead.
        """
        dead = [sid for sid in self._partial if sid < scan_id]
        for sid in dead:
            del self._partial[sid]
        return dead

    def should_report(self, now: float) -> bool:
        if self.packets_since_report >= self.params.feedback_every_packets:
            return True
        return now - self.last_report_time >= self.params.feedback_interval

    def make_feedback(self, now: float) -> FeedbackReport:
        """Cumulative-counter snapshot; echoes the newest packet's send time."""
        self.packets_since_report = 0
        self.last_report_time = now
        return FeedbackReport(
            highest_acked_seq=self.highest_seq,
            cumulative_acked_bytes=self.cumulative_acked_bytes,
            cumulative_ce_marked_bytes=self.cumulative_ce_bytes,
            cumulative_lost_packets=self.cumulative_lost_packets,
            receiver_timestamp=self.newest_arrival_time,
            echo_timestamp=self.newest_send_time,
        )
