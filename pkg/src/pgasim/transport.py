"""
Discrete-event link simulation.

Links are ordered, lossless point-to-point channels. A packet with body
length ``b`` occupies ``ser = ceil((b + packet_overhead_bytes) / bytes_per_cycle)``
cycles of serialization; the link accepts a new packet every
``max(ser, min_packet_period_cycles)`` cycles and delivers it
``ser + hop_latency_cycles`` after departure.

The optional socket mode pushes every packet's framed bytes through a real
stream socket per link; the receiving side decodes them back before the
packet is delivered, so both modes exchange identical bytes.
"""

import heapq
import itertools
import logging
import queue
import socket
import struct
import threading
from dataclasses import dataclass
from typing import Any, Callable, NamedTuple

from .errors import InvalidConfig, LivelockGuard, SimulationStalled, Unreachable
from .wire import Packet

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LinkConfig:
    bytes_per_cycle: int = 16
    clock_hz: float = 250e6
    hop_latency_cycles: int = 44
    packet_overhead_bytes: int = 16
    min_packet_period_cycles: int = 12

    def __post_init__(self):
        for name in ("bytes_per_cycle", "clock_hz", "hop_latency_cycles",
                     "packet_overhead_bytes", "min_packet_period_cycles"):
            if getattr(self, name) <= 0:
                raise InvalidConfig(f"link.{name} must be > 0")

    @property
    def peak_bytes_per_s(self) -> float:
        return self.bytes_per_cycle * self.clock_hz

    def serialization(self, frag_len: int) -> int:
        return -(-(frag_len + self.packet_overhead_bytes) // self.bytes_per_cycle)

    def occupancy(self, frag_len: int) -> int:
        return max(self.serialization(frag_len), self.min_packet_period_cycles)

    def cycles_to_us(self, cycles: float) -> float:
        return cycles / self.clock_hz * 1e6


@dataclass(frozen=True)
class Topology:
    node_count: int
    edges: tuple  # directed (src, dst) pairs

    @classmethod
    def ring(cls, node_count: int) -> "Topology":
        if node_count < 1:
            raise InvalidConfig("a ring needs at least one node")
        if node_count == 1:
            return cls(1, ())
        edges = set()
        for i in range(node_count):
            j = (i + 1) % node_count
            edges.add((i, j))
            edges.add((j, i))
        return cls(node_count, tuple(sorted(edges)))

    def is_ring(self) -> bool:
        return self == Topology.ring(self.node_count)


def route(topology: Topology, src: int, dst: int) -> list[tuple[int, int]]:
    """Shortest ring path from ``src`` to ``dst`` as a list of directed links.

    Ties go toward increasing node id.
    """
    if src == dst:
        raise ValueError("route requires src != dst; loopback never touches a link")
    n = topology.node_count
    if not (0 <= src < n and 0 <= dst < n):
        raise Unreachable(f"{src}->{dst} outside {n}-node topology")
    edges = set(topology.edges)
    forward = (dst - src) % n
    backward = (src - dst) % n
    step = 1 if forward <= backward else -1
    path, here = [], src
    while here != dst:
        nxt = (here + step) % n
        if (here, nxt) not in edges:
            raise Unreachable(f"no link {here}->{nxt} on the way {src}->{dst}")
        path.append((here, nxt))
        here = nxt
    return path


class TraceEvent(NamedTuple):
    time: int
    node: int
    kind: str
    info: tuple


class Link:
    """Timing state of one directed link."""

    def __init__(self, src: int, dst: int, config: LinkConfig):
        self.src, self.dst, self.config = src, dst, config
        self.free_at = 0
        self.busy_cycles = 0
        self.packets = 0
        self.channel: "SocketChannel | None" = None

    def send_packet(self, packet: Packet, request_time: int) -> tuple[int, int]:
        """Reserve the link for ``packet``; returns ``(departure, arrival)``."""
        cfg = self.config
        ser = cfg.serialization(packet.frag_len)
        depart = max(request_time, self.free_at)
        occupied = max(ser, cfg.min_packet_period_cycles)
        self.free_at = depart + occupied
        self.busy_cycles += occupied
        self.packets += 1
        if self.channel is not None:
            self.channel.send(packet)
        return depart, depart + ser + cfg.hop_latency_cycles


_LEN = struct.Struct("<I")


class SocketChannel:
    """One directed link carried over a stream socket.

    Frames are ``[u32 length][packet bytes]``. A sender thread owns the write
    side and a receiver thread decodes frames into an ordered mailbox.
    """

    def __init__(self, name: str = "link"):
        self._tx_sock, self._rx_sock = socket.socketpair()
        self._outbox: queue.Queue = queue.Queue()
        self.mailbox: queue.Queue = queue.Queue()
        self.bytes_sent = 0
        self._sender = threading.Thread(target=self._send_loop, name=f"{name}-tx", daemon=True)
        self._receiver = threading.Thread(target=self._recv_loop, name=f"{name}-rx", daemon=True)
        self._sender.start()
        self._receiver.start()

    @staticmethod
    def frame(packet: Packet) -> bytes:
        data = packet.to_bytes()
        return _LEN.pack(len(data)) + data

    def send(self, packet: Packet) -> None:
        self._outbox.put(self.frame(packet))

    def _send_loop(self) -> None:
        while True:
            frame = self._outbox.get()
            if frame is None:
                self._tx_sock.shutdown(socket.SHUT_WR)
                return
            self._tx_sock.sendall(frame)
            self.bytes_sent += len(frame)

    def _read_exact(self, n: int) -> bytes | None:
        chunks, need = [], n
        while need:
            chunk = self._rx_sock.recv(min(need, 1 << 20))
            if not chunk:
                return None
            chunks.append(chunk)
            need -= len(chunk)
        return b"".join(chunks)

    def _recv_loop(self) -> None:
        while True:
            head = self._read_exact(_LEN.size)
            if head is None:
                self.mailbox.put(None)
                return
            (length,) = _LEN.unpack(head)
            self.mailbox.put(Packet.from_bytes(self._read_exact(length)))

    def receive(self, timeout: float = 10.0) -> Packet:
        packet = self.mailbox.get(timeout=timeout)
        if packet is None:
            raise ConnectionError("socket channel closed")
        return packet

    def close(self) -> None:
        self._outbox.put(None)
        self._sender.join(timeout=5)
        self._receiver.join(timeout=5)
        self._tx_sock.close()
        self._rx_sock.close()


class Simulator:
    """Virtual clock, event queue and trace for one simulated job.

    Events fire in ``(time, insertion order)`` order so runs are
    deterministic.
    """

    def __init__(self, topology: Topology, link: LinkConfig | None = None,
                 transport: str = "sim", max_events: int = 50_000_000, trace: bool = True):
        if transport not in ("sim", "socket"):
            raise InvalidConfig(f"unknown transport {transport!r}")
        self.topology = topology
        self.link_config = link or LinkConfig()
        self.transport = transport
        self.max_events = max_events
        self.now = 0
        self.events_processed = 0
        self.tracing = trace
        self.trace: list[TraceEvent] = []
        self._heap: list = []
        self._order = itertools.count()
        self.links = {e: Link(*e, self.link_config) for e in topology.edges}
        if transport == "socket":
            for (s, d), link_ in self.links.items():
                link_.channel = SocketChannel(f"link{s}-{d}")
        self._routes: dict = {}

    # -- event queue -------------------------------------------------------
    def at(self, time: int, fn: Callable, *args: Any) -> None:
        if time < self.now:
            raise ValueError(f"cannot schedule at {time}, clock is at {self.now}")
        heapq.heappush(self._heap, (time, next(self._order), fn, args))

    def record(self, node: int, kind: str, *info) -> None:
        if self.tracing:
            self.trace.append(TraceEvent(self.now, node, kind, info))

    def step(self) -> bool:
        if not self._heap:
            return False
        time, _, fn, args = heapq.heappop(self._heap)
        self.now = time
        self.events_processed += 1
        if self.events_processed > self.max_events:
            raise LivelockGuard(f"more than {self.max_events} events processed")
        fn(*args)
        return True

    def run_until_idle(self) -> int:
        while self.step():
            pass
        return self.now

    def run_until(self, done: Callable[[], bool]) -> int:
        while not done():
            if not self.step():
                raise SimulationStalled(f"event queue drained at t={self.now} before completion")
        return self.now

    @property
    def idle(self) -> bool:
        return not self._heap

    # -- links -------------------------------------------------------------
    def path(self, src: int, dst: int) -> list[Link]:
        key = (src, dst)
        if key not in self._routes:
            self._routes[key] = [self.links[e] for e in route(self.topology, src, dst)]
        return self._routes[key]

    def send_packet(self, link: Link, packet: Packet, request_time: int,
                    on_arrival: Callable[[Packet, int], None]) -> int:
        """Put ``packet`` on ``link``; ``on_arrival(packet, time)`` fires at the far end.

        Returns the departure time.
        """
        depart, arrive = link.send_packet(packet, request_time)
        self.record(link.src, "pkt_depart", link.src, link.dst, packet.seq, packet.index,
                    packet.frag_len, depart)
        self.at(arrive, self._arrive, link, packet, on_arrival)
        return depart

    def _arrive(self, link: Link, packet: Packet, on_arrival) -> None:
        if link.channel is not None:
            received = link.channel.receive()
            if received != packet:
                raise ConnectionError(f"socket link {link.src}->{link.dst} reordered packets")
            packet = received
        self.record(link.dst, "pkt_arrive", link.src, link.dst, packet.seq, packet.index)
        on_arrival(packet, self.now)

    def close(self) -> None:
        for link_ in self.links.values():
            if link_.channel is not None:
                link_.channel.close()
                link_.channel = None

    def cycles_to_us(self, cycles: float) -> float:
        return self.link_config.cycles_to_us(cycles)


def peak_bandwidth_mbs(config: LinkConfig) -> float:
    return config.peak_bytes_per_s / 1e6


def packet_period_throughput_mbs(config: LinkConfig, mtu: int) -> float:
    """Asymptotic payload throughput of back-to-back ``mtu``-byte packets."""
    return mtu / (config.occupancy(mtu) / config.clock_hz) / 1e6

