"""
Per-node active-message core.

A ``GasnetCore`` owns three bounded command queues (reply, host, compute), a
round-robin scheduler over them, the AM sequencer that turns commands into
messages, and the receive side that reassembles packets and runs handlers
one at a time.

Timing, in cycles of the link clock:

* the sequencer spends ``sequencer_cycles`` forming a header, plus
  ``dma_read_cycles`` when the message carries payload, then injects every
  packet; it is busy until the last packet departs;
* each received message occupies the receive handler for ``handler_cycles``.
  Handler side effects that leave the node (replies, compute forwarding)
  become visible when the handler finishes.
"""

import collections
import enum
import itertools
from dataclasses import dataclass, field
from typing import Callable

from .errors import (AlreadyRegistered, BadCommand, DuplicateReply, NotInHandler,
                     PgasError, QueueFull, ReplyToNonRequester, ReservedOpcode,
                     UnknownOpcode, VariantViolation)
from .memory import NodeMemory, Region
from .wire import (MessageHeader, MessageKind, Packet, Reassembler, Variant,
                   decode_message, encode_message, join_u64, packetize, split_u64)

PUT = 0x01
GET = 0x02
COMPUTE = 0x03
BARRIER_ARRIVE = 0x10
BARRIER_RELEASE = 0x11
USER_OPCODE_MIN = 0x80

BUILTIN_NAMES = {PUT: "PUT", GET: "GET", COMPUTE: "COMPUTE",
                 BARRIER_ARRIVE: "BARRIER_ARRIVE", BARRIER_RELEASE: "BARRIER_RELEASE"}

QUEUE_ORDER = ("reply", "host", "compute")
_ID_BITS = 48


def make_token(node: int, counter: int) -> int:
    return (node << _ID_BITS) | (counter & ((1 << _ID_BITS) - 1))


def token_node(token: int) -> int:
    return token >> _ID_BITS


@dataclass(frozen=True)
class CoreConfig:
    packet_size: int = 512
    queue_depth: int = 64
    sequencer_cycles: int = 2
    dma_read_cycles: int = 16
    handler_cycles: int = 8
    medium_scratch_bytes: int = 64 * 1024


class CommandKind(enum.Enum):
    PUT = "put"
    GET = "get"
    AM_REQUEST = "am_request"
    AM_REPLY = "am_reply"


@dataclass
class Command:
    kind: CommandKind
    dst: int
    opcode: int = PUT
    variant: Variant = Variant.LONG
    args: tuple = ()
    source: tuple | None = None       # (region, offset, length) read by DMA
    payload: bytes | None = None      # inline payload, used when source is None
    dest_offset: int = 0
    token: int | None = None          # replies: token of the request answered
    src_offset: int = 0               # get: remote offset
    length: int = 0                   # get: byte count
    on_done: Callable[[int], None] | None = field(default=None, repr=False)
    handle: int | None = None
    seq: int | None = None

    @property
    def payload_len(self) -> int:
        if self.source is not None:
            return self.source[2]
        return len(self.payload) if self.payload is not None else 0


@dataclass
class ActiveMessage:
    header: MessageHeader
    payload: bytes
    seq: int


class BoundedQueue:
    """FIFO of fixed depth.

    Host submissions beyond the depth raise ``QueueFull``. Producers inside
    the node (handlers, the compute engine) stall instead: their commands
    wait in a backlog that refills the queue as it drains.
    """

    def __init__(self, name: str, depth: int):
        self.name = name
        self.depth = depth
        self.items: collections.deque = collections.deque()
        self.backlog: collections.deque = collections.deque()

    def __len__(self) -> int:
        return len(self.items)

    def push(self, cmd: Command) -> None:
        if len(self.items) >= self.depth:
            raise QueueFull(f"{self.name}_q is full ({self.depth} entries)")
        self.items.append(cmd)

    def push_stalling(self, cmd: Command) -> None:
        if len(self.items) >= self.depth or self.backlog:
            self.backlog.append(cmd)
        else:
            self.items.append(cmd)

    def pop(self) -> Command:
        cmd = self.items.popleft()
        if self.backlog:
            self.items.append(self.backlog.popleft())
        return cmd

    @property
    def pending(self) -> bool:
        return bool(self.items or self.backlog)


class HandlerContext:
    """What a handler sees while it runs: the message and a one-shot reply."""

    def __init__(self, core: "GasnetCore", header: MessageHeader, payload: bytes,
                 payload_ref: tuple | None):
        self.core = core
        self.header = header
        self.payload = payload
        self.payload_ref = payload_ref
        self.active = True
        self.replied = False

    node = property(lambda self: self.core.node_id)
    memory = property(lambda self: self.core.memory)
    args = property(lambda self: self.header.args)
    src = property(lambda self: self.header.src)
    token = property(lambda self: self.header.token)

    def _reply(self, variant: Variant, opcode: int, args=(), payload: bytes | None = None,
               dest_offset: int = 0, dst: int | None = None, source: tuple | None = None):
        if not self.active:
            raise NotInHandler("reply issued after the handler returned")
        if dst is not None and dst != self.header.src:
            raise ReplyToNonRequester(
                f"handler for a message from node {self.header.src} tried to reply to {dst}")
        if self.header.kind is MessageKind.REPLY:
            raise BadCommand("reply handlers cannot reply")
        if self.replied:
            raise DuplicateReply(f"token {self.header.token:#x} already answered")
        if variant is Variant.SHORT and (payload or source):
            raise VariantViolation("short replies carry no payload")
        self.replied = True
        cmd = Command(CommandKind.AM_REPLY, self.header.src, opcode, variant, tuple(args),
                      source=source, payload=payload, dest_offset=dest_offset,
                      token=self.header.token)
        self.core._stage_reply(cmd)

    def reply_short(self, opcode: int, args=(), dst: int | None = None) -> None:
        self._reply(Variant.SHORT, opcode, args, dst=dst)

    def reply_medium(self, opcode: int, args=(), payload: bytes = b"", dst: int | None = None):
        self._reply(Variant.MEDIUM, opcode, args, payload=bytes(payload), dst=dst)

    def reply_long(self, opcode: int, args=(), payload: bytes = b"", dest_offset: int = 0,
                   dst: int | None = None):
        self._reply(Variant.LONG, opcode, args, payload=bytes(payload),
                    dest_offset=dest_offset, dst=dst)


class GasnetCore:
    def __init__(self, node_id: int, memory: NodeMemory, sim, node_count: int,
                 config: CoreConfig | None = None):
        self.node_id = node_id
        self.memory = memory
        self.sim = sim
        self.node_count = node_count
        self.config = config or CoreConfig()
        depth = self.config.queue_depth
        self.queues = {name: BoundedQueue(name, depth) for name in QUEUE_ORDER}
        self._rr = 0
        self.handlers: dict[int, Callable[[HandlerContext], None]] = {}
        self.reassembly: dict[int, Reassembler] = {}
        self.pending_gets: dict[int, Command] = {}
        self.done: dict[int, int] = {}
        self.peers: list["GasnetCore"] = []
        self.compute_sink: Callable[[tuple, MessageHeader], None] | None = None
        self.active_contexts: dict[int, HandlerContext] = {}
        self._seq_counter = itertools.count()
        self._token_counter = itertools.count()
        self._handle_counter = itertools.count()
        self._seq_free_at = 0
        self._seq_scheduled = False
        self._rx_queue: collections.deque = collections.deque()
        self._rx_busy = False
        self._staged: list[Command] = []
        self._staged_compute: list[tuple] = []
        self._staged_done: list[Command] = []

    # -- registration ------------------------------------------------------
    def register_handler(self, opcode: int, handler: Callable[[HandlerContext], None]) -> None:
        if not USER_OPCODE_MIN <= opcode <= 0xFF:
            raise ReservedOpcode(f"opcode {opcode:#04x} is outside the user range 0x80-0xff")
        if opcode in self.handlers:
            raise AlreadyRegistered(f"opcode {opcode:#04x} already has a handler")
        self.handlers[opcode] = handler

    def register_system_handler(self, opcode: int, handler) -> None:
        if opcode >= USER_OPCODE_MIN or opcode in (PUT, GET, COMPUTE):
            raise ReservedOpcode(f"{opcode:#04x} is not a free system opcode")
        self.handlers[opcode] = handler

    # -- submission & scheduling -------------------------------------------
    def submit_command(self, cmd: Command, source: str = "host", stall: bool = False) -> int:
        """Validate ``cmd`` and enqueue it on the queue of its source class.

        Host submissions fail with ``QueueFull`` on a full queue unless
        ``stall`` is set; reply and compute traffic always stalls.
        """
        self._validate(cmd, source)
        cmd.handle = next(self._handle_counter)
        q = self.queues[source]
        if stall or source != "host":
            q.push_stalling(cmd)
        else:
            q.push(cmd)
        self.sim.record(self.node_id, "submit", cmd.handle, source, cmd.kind.value, cmd.dst)
        self.kick()
        return cmd.handle

    def _validate(self, cmd: Command, source: str) -> None:
        if source not in QUEUE_ORDER:
            raise BadCommand(f"unknown command source {source!r}")
        if not 0 <= cmd.dst < self.node_count:
            raise BadCommand(f"destination {cmd.dst} is not a rank of this job")
        if cmd.kind is CommandKind.AM_REPLY and (source != "reply" or cmd.token is None):
            raise BadCommand("replies are only issued from inside a handler")
        if cmd.kind is CommandKind.GET and (cmd.payload or cmd.source):
            raise BadCommand("get carries no payload")
        if cmd.variant is Variant.SHORT and cmd.payload_len:
            raise VariantViolation("short messages carry no payload")
        if cmd.source is not None:
            Region(cmd.source[0])
        if cmd.kind is CommandKind.PUT and cmd.source is None and cmd.payload is None:
            raise BadCommand("put needs a source range or payload")

    def schedule(self) -> Command | None:
        """Round-robin grant over reply, host and compute queues."""
        for i in range(len(QUEUE_ORDER)):
            idx = (self._rr + i) % len(QUEUE_ORDER)
            q = self.queues[QUEUE_ORDER[idx]]
            if q.items:
                self._rr = (idx + 1) % len(QUEUE_ORDER)
                return q.pop()
        return None

    @property
    def has_work(self) -> bool:
        return any(q.pending for q in self.queues.values())

    def kick(self) -> None:
        if not self._seq_scheduled:
            self._seq_scheduled = True
            self.sim.at(max(self.sim.now, self._seq_free_at), self._sequencer_step)

    # -- sequencer ---------------------------------------------------------
    def sequence(self, cmd: Command) -> ActiveMessage:
        """Form the active message for ``cmd`` (header + DMA-read payload)."""
        seq = make_token(self.node_id, next(self._seq_counter))
        cmd.seq = seq
        dest_offset = 0
        if cmd.kind is CommandKind.GET:
            token = make_token(self.node_id, next(self._token_counter))
            header = MessageHeader(MessageKind.REQUEST, Variant.SHORT, GET, self.node_id, cmd.dst,
                                   (*split_u64(cmd.src_offset), cmd.length,
                                    *split_u64(cmd.dest_offset)), token=token)
            header.check()
            self.pending_gets[token] = cmd
            return ActiveMessage(header, b"", seq)
        if cmd.source is not None:
            payload = self.memory.dma_read(*cmd.source)
        else:
            payload = cmd.payload or b""
        if cmd.kind is CommandKind.PUT:
            kind, variant, opcode = MessageKind.REQUEST, Variant.LONG, PUT
        else:
            kind = MessageKind.REPLY if cmd.kind is CommandKind.AM_REPLY else MessageKind.REQUEST
            variant, opcode = cmd.variant, cmd.opcode
        if variant is Variant.LONG:
            dest_offset = cmd.dest_offset
        if kind is MessageKind.REPLY:
            token = cmd.token
        else:
            token = make_token(self.node_id, next(self._token_counter))
        header = MessageHeader(kind, variant, opcode, self.node_id, cmd.dst, tuple(cmd.args),
                               len(payload), dest_offset, token)
        header.check()
        return ActiveMessage(header, payload, seq)

    def _sequencer_step(self) -> None:
        self._seq_scheduled = False
        cmd = self.schedule()
        if cmd is None:
            return
        msg = self.sequence(cmd)
        h = msg.header
        cfg = self.config
        now = self.sim.now
        ready = now + cfg.sequencer_cycles + (cfg.dma_read_cycles if h.payload_len else 0)
        if h.dst == self.node_id:
            npackets = 0
            injected = ready
            self.sim.at(ready, self._loopback_arrive, msg)
        else:
            packets = packetize(encode_message(h, msg.payload), cfg.packet_size, msg.seq)
            npackets = len(packets)
            path = self.sim.path(self.node_id, h.dst)
            injected = ready
            for p in packets:
                injected = self._transmit(path, 0, p, ready)
        self.sim.record(self.node_id, "send", msg.seq, h.token, h.kind.name, h.variant.name,
                        h.opcode, h.src, h.dst, h.payload_len, npackets, cmd.handle)
        self._seq_free_at = injected
        if cmd.kind is not CommandKind.GET:
            self.sim.at(injected, self._complete, cmd)
        if self.has_work:
            self.kick()

    def _transmit(self, path, hop: int, packet: Packet, request_time: int) -> int:
        link = path[hop]
        if hop + 1 < len(path):
            def forward(p, t, path=path, hop=hop):
                self.peers[link.dst]._transmit(path, hop + 1, p, t)
            return self.sim.send_packet(link, packet, request_time, forward)
        return self.sim.send_packet(link, packet, request_time,
                                    self.peers[link.dst].receive_packet_event)

    def _complete(self, cmd: Command) -> None:
        self.done[cmd.handle] = self.sim.now
        self.sim.record(self.node_id, "complete", cmd.handle, cmd.kind.value)
        if cmd.on_done is not None:
            cmd.on_done(self.sim.now)

    # -- receive side ------------------------------------------------------
    def receive_packet_event(self, packet: Packet, time: int) -> None:
        self.receive_packet(packet)

    def receive_packet(self, packet: Packet) -> None:
        r = self.reassembly.get(packet.seq)
        if r is None:
            r = Reassembler(packet)
        else:
            r.feed(packet)
        if not r.done:
            self.reassembly[packet.seq] = r
            return
        self.reassembly.pop(packet.seq, None)
        header, payload = decode_message(r.message())
        self.sim.record(self.node_id, "msg_arrive", packet.seq, header.token, header.src)
        self._rx_enqueue(ActiveMessage(header, payload, packet.seq))

    def _loopback_arrive(self, msg: ActiveMessage) -> None:
        self.sim.record(self.node_id, "msg_arrive", msg.seq, msg.header.token, msg.header.src)
        self._rx_enqueue(msg)

    def _rx_enqueue(self, msg: ActiveMessage) -> None:
        self._rx_queue.append(msg)
        if not self._rx_busy:
            self._rx_next()

    def _rx_next(self) -> None:
        if not self._rx_queue:
            self._rx_busy = False
            return
        self._rx_busy = True
        msg = self._rx_queue.popleft()
        h = msg.header
        self.sim.record(self.node_id, "handler_begin", msg.seq, h.opcode, h.token, h.kind.name)
        ctx = self._handle(h, msg.payload)
        self.sim.at(self.sim.now + self.config.handler_cycles, self._rx_finish, msg, ctx)

    def _rx_finish(self, msg: ActiveMessage, ctx: HandlerContext | None) -> None:
        self.sim.record(self.node_id, "handler_end", msg.seq, msg.header.opcode, msg.header.token)
        self._commit(ctx)
        self._rx_next()

    def on_message(self, header: MessageHeader, payload: bytes) -> None:
        """Dispatch one reassembled message and apply its effects immediately."""
        self._commit(self._handle(header, payload))

    def _handle(self, header: MessageHeader, payload: bytes) -> HandlerContext | None:
        op = header.opcode
        mem = self.memory
        if op == PUT:
            if header.variant is Variant.LONG:
                self._write(Region.SHARED, header.dest_offset, payload)
            elif header.variant is Variant.MEDIUM:
                self._write(Region.PRIVATE, mem.scratch_alloc(len(payload)), payload)
            if header.kind is MessageKind.REPLY:
                cmd = self.pending_gets.pop(header.token, None)
                if cmd is None:
                    raise PgasError(f"reply token {header.token:#x} matches no pending get")
                self._staged_done.append(cmd)
            return None
        if op == GET:
            if header.kind is MessageKind.REPLY:
                raise BadCommand("GET is request-only")
            src_off, length, dst_off = join_u64(header.args, 0), header.args[2], join_u64(header.args, 3)
            ctx = HandlerContext(self, header, payload, None)
            ctx._reply(Variant.LONG, PUT, source=(Region.SHARED, src_off, length),
                       dest_offset=dst_off)
            ctx.active = False
            return None
        if op == COMPUTE:
            if header.variant is Variant.LONG:
                self._write(Region.SHARED, header.dest_offset, payload)
            elif header.variant is Variant.MEDIUM:
                self._write(Region.PRIVATE, mem.scratch_alloc(len(payload)), payload)
            if self.compute_sink is None:
                raise UnknownOpcode(f"node {self.node_id} has no compute engine")
            self._staged_compute.append((tuple(header.args), header))
            return None
        handler = self.handlers.get(op)
        if handler is None:
            raise UnknownOpcode(f"opcode {op:#04x} is not registered on node {self.node_id}")
        ref = None
        if header.variant is Variant.MEDIUM:
            off = mem.scratch_alloc(len(payload))
            self._write(Region.PRIVATE, off, payload)
            ref = (Region.PRIVATE, off, len(payload))
        elif header.variant is Variant.LONG:
            self._write(Region.SHARED, header.dest_offset, payload)
            ref = (Region.SHARED, header.dest_offset, len(payload))
        ctx = HandlerContext(self, header, payload, ref)
        self.active_contexts[header.token] = ctx
        try:
            handler(ctx)
        except BaseException:
            ctx.active = False
            self.active_contexts.pop(header.token, None)
            raise
        return ctx

    def _write(self, region: Region, offset: int, payload: bytes) -> None:
        self.memory.dma_write(region, offset, payload)
        self.sim.record(self.node_id, "dma_write", region.value, offset, len(payload))

    def _stage_reply(self, cmd: Command) -> None:
        self._staged.append((cmd, "reply"))

    def stage_request(self, cmd: Command) -> None:
        """Queue a request from inside a handler; it is submitted when the handler ends."""
        self._staged.append((cmd, "host"))

    def _commit(self, ctx: HandlerContext | None) -> None:
        if ctx is not None:
            ctx.active = False
            self.active_contexts.pop(ctx.header.token, None)
        staged, self._staged = self._staged, []
        for cmd, source in staged:
            self.submit_command(cmd, source=source, stall=True)
        compute, self._staged_compute = self._staged_compute, []
        for args, header in compute:
            self.sim.record(self.node_id, "compute_forward", header.src, len(args))
            self.compute_sink(args, header)
        finished, self._staged_done = self._staged_done, []
        for cmd in finished:
            self._complete(cmd)
