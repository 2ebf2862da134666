"""
GASNet-style runtime facade.

Typical use::

    rt = init(RuntimeConfig(nodes=2))
    rt.attach()
    rt.host_write(0, "shared", 0, data)
    h = rt.put(0, GlobalAddress(1, 0x100), src_offset=0, length=len(data))
    rt.wait(h)

All calls run against a discrete-event simulation; ``wait`` advances the
virtual clock until the handle resolves, ``poll`` never does.
"""

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .addressing import GlobalAddress, SegmentLayout, resolve, validate_layout
from .compute import ComputeCommand, ComputeEngine, DlaConfig
from .core import (BARRIER_ARRIVE, BARRIER_RELEASE, Command, CommandKind, CoreConfig,
                   GasnetCore, HandlerContext)
from .errors import (InvalidConfig, InvalidLayout, NotInHandler, OutOfBounds,
                     UnknownHandle, VariantViolation)
from .memory import NodeMemory, Region
from .transport import LinkConfig, Simulator, Topology
from .wire import Variant

PENDING = "pending"
DONE = "done"


@dataclass(frozen=True)
class RuntimeConfig:
    nodes: int = 2
    topology: str = "ring"
    link: LinkConfig = field(default_factory=LinkConfig)
    segments: SegmentLayout = field(default_factory=SegmentLayout)
    dla: DlaConfig = field(default_factory=DlaConfig)
    core: CoreConfig = field(default_factory=CoreConfig)
    transport: str = "sim"
    max_events: int = 50_000_000
    trace: bool = True

    @classmethod
    def from_dict(cls, doc: dict) -> "RuntimeConfig":
        sections = {"link": LinkConfig, "segments": SegmentLayout, "dla": DlaConfig,
                    "core": CoreConfig}
        kwargs = {}
        known = {f.name for f in dataclasses.fields(cls)}
        for key, value in doc.items():
            if key not in known:
                raise InvalidConfig(f"unknown config key {key!r}")
            if key in sections:
                sub = sections[key]
                names = {f.name for f in dataclasses.fields(sub)}
                bad = set(value) - names
                if bad:
                    raise InvalidConfig(f"unknown {key} keys: {sorted(bad)}")
                kwargs[key] = sub(**value)
            else:
                kwargs[key] = value
        return cls(**kwargs)

    @classmethod
    def from_json(cls, path) -> "RuntimeConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidConfig(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "RuntimeConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class Handle:
    node: int
    id: int
    kind: str = "op"


@dataclass
class Node:
    id: int
    memory: NodeMemory
    core: GasnetCore
    engine: ComputeEngine


class Runtime:
    def __init__(self, config: RuntimeConfig):
        if not isinstance(config.nodes, int) or config.nodes < 1:
            raise InvalidConfig(f"nodes must be a positive integer, got {config.nodes!r}")
        if config.topology != "ring":
            raise InvalidConfig(f"only ring topologies are supported, got {config.topology!r}")
        if config.transport not in ("sim", "socket"):
            raise InvalidConfig(f"unknown transport {config.transport!r}")
        self.config = config
        self.topology = Topology.ring(config.nodes)
        self.sim = Simulator(self.topology, config.link, config.transport,
                             config.max_events, config.trace)
        self.nodes: list[Node] = []
        self.attached = False
        self._states: dict[Handle, str] = {}
        self._done_at: dict[Handle, int] = {}
        self._next_handle = [0] * config.nodes
        self._barrier_epoch = 0
        self._barrier_arrivals = 0
        self._barrier_released: dict[int, int] = {}
        self.barrier_log: list[dict] = []

    # -- lifecycle ---------------------------------------------------------
    def attach(self, layout: SegmentLayout | None = None) -> None:
        if self.attached:
            raise InvalidConfig("attach called twice")
        layout = layout or self.config.segments
        try:
            validate_layout(layout, self.config.nodes)
        except InvalidLayout as exc:
            raise InvalidConfig(str(exc)) from None
        self.layout = layout
        for i in range(self.config.nodes):
            mem = NodeMemory(layout, self.config.core.medium_scratch_bytes)
            core = GasnetCore(i, mem, self.sim, self.config.nodes, self.config.core)
            engine = ComputeEngine(core, self.config.dla)
            core.register_system_handler(BARRIER_ARRIVE, self._on_barrier_arrive)
            core.register_system_handler(BARRIER_RELEASE, self._on_barrier_release)
            self.nodes.append(Node(i, mem, core, engine))
        cores = [n.core for n in self.nodes]
        for c in cores:
            c.peers = cores
        self.attached = True

    def close(self) -> None:
        self.sim.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _require(self) -> None:
        if not self.attached:
            raise InvalidConfig("runtime is not attached")

    @property
    def now(self) -> int:
        return self.sim.now

    @property
    def node_count(self) -> int:
        return self.config.nodes

    def _node(self, node: int) -> Node:
        self._require()
        if not 0 <= node < len(self.nodes):
            raise InvalidConfig(f"node {node} is not a rank of this job")
        return self.nodes[node]

    # -- handles -----------------------------------------------------------
    def _new_handle(self, node: int, kind: str) -> tuple[Handle, Callable[[int], None]]:
        h = Handle(node, self._next_handle[node], kind)
        self._next_handle[node] += 1
        self._states[h] = PENDING

        def done(t: int, h=h) -> None:
            self._states[h] = DONE
            self._done_at[h] = t
        return h, done

    def poll(self, handle: Handle) -> str:
        try:
            return self._states[handle]
        except KeyError:
            raise UnknownHandle(f"{handle} was not issued by this runtime") from None

    def wait(self, handle: Handle) -> str:
        self.poll(handle)
        self.sim.run_until(lambda: self._states[handle] != PENDING)
        return self._states[handle]

    def wait_all(self, handles) -> None:
        for h in handles:
            self.wait(h)

    def done_time(self, handle: Handle) -> int | None:
        self.poll(handle)
        return self._done_at.get(handle)

    def run_until_idle(self) -> int:
        return self.sim.run_until_idle()

    # -- host memory access (untimed preload / readback) ----------------------
    def host_write(self, node: int, region, offset: int, data) -> None:
        self._node(node).memory.dma_write(region, offset, data)

    def host_read(self, node: int, region, offset: int, length: int) -> bytes:
        return self._node(node).memory.dma_read(region, offset, length)

    # -- one-sided operations ----------------------------------------------
    def put(self, node: int, dest: GlobalAddress, src_offset: int, length: int,
            src_region=Region.SHARED) -> Handle:
        """Copy ``length`` local bytes to ``dest``; completes at local injection."""
        n = self._node(node)
        resolve(dest, self.layout, length, self.node_count)
        self._check_range(n, src_region, src_offset, length)
        h, done = self._new_handle(node, "put")
        cmd = Command(CommandKind.PUT, dest.node, source=(Region(src_region), src_offset, length),
                      dest_offset=dest.offset, on_done=done)
        n.core.submit_command(cmd)
        return h

    def get(self, node: int, src: GlobalAddress, length: int, dest_offset: int) -> Handle:
        """Copy ``length`` bytes at ``src`` into this node's shared segment."""
        n = self._node(node)
        resolve(src, self.layout, length, self.node_count)
        self._check_range(n, Region.SHARED, dest_offset, length)
        h, done = self._new_handle(node, "get")
        cmd = Command(CommandKind.GET, src.node, src_offset=src.offset, length=length,
                      dest_offset=dest_offset, on_done=done)
        n.core.submit_command(cmd)
        return h

    @staticmethod
    def _check_range(n: Node, region, offset: int, length: int) -> None:
        size = n.memory._region(region).size
        if offset < 0 or length < 0 or offset + length > size:
            raise OutOfBounds(f"{Region(region).value}[{offset}, {offset + length}) outside "
                              f"{size}-byte region")

    # -- active messages ---------------------------------------------------
    def register_handler(self, node: int, opcode: int,
                         handler: Callable[[HandlerContext], None]) -> None:
        self._node(node).core.register_handler(opcode, handler)

    def register_handler_all(self, opcode: int, handler) -> None:
        for n in range(self.node_count):
            self.register_handler(n, opcode, handler)

    def am_request(self, node: int, dst: int, variant: Variant, opcode: int, args=(),
                   payload: bytes | None = None, dest_offset: int = 0) -> Handle:
        n = self._node(node)
        variant = Variant(variant)
        if variant is Variant.SHORT and payload:
            raise VariantViolation("short requests carry no payload")
        if variant is Variant.LONG:
            resolve(GlobalAddress(dst, dest_offset), self.layout, len(payload or b""),
                    self.node_count)
        elif dest_offset:
            raise VariantViolation("only long requests take a destination offset")
        h, done = self._new_handle(node, "am")
        cmd = Command(CommandKind.AM_REQUEST, dst, opcode, variant, tuple(args),
                      payload=bytes(payload) if payload is not None else None,
                      dest_offset=dest_offset, on_done=done)
        n.core.submit_command(cmd)
        return h

    def am_request_short(self, node: int, dst: int, opcode: int, args=(),
                         payload: bytes | None = None) -> Handle:
        return self.am_request(node, dst, Variant.SHORT, opcode, args, payload)

    def am_request_medium(self, node: int, dst: int, opcode: int, args=(),
                          payload: bytes = b"") -> Handle:
        return self.am_request(node, dst, Variant.MEDIUM, opcode, args, payload)

    def am_request_long(self, node: int, dst: int, opcode: int, args=(), payload: bytes = b"",
                        dest_offset: int = 0) -> Handle:
        return self.am_request(node, dst, Variant.LONG, opcode, args, payload, dest_offset)

    def _context(self, token: int) -> HandlerContext:
        for n in self.nodes:
            ctx = n.core.active_contexts.get(token)
            if ctx is not None and ctx.active:
                return ctx
        raise NotInHandler(f"no handler is running for token {token:#x}")

    def am_reply_short(self, token: int, opcode: int, args=()) -> None:
        self._context(token).reply_short(opcode, args)

    def am_reply_medium(self, token: int, opcode: int, args=(), payload: bytes = b"") -> None:
        self._context(token).reply_medium(opcode, args, payload)

    def am_reply_long(self, token: int, opcode: int, args=(), payload: bytes = b"",
                      dest_offset: int = 0) -> None:
        self._context(token).reply_long(opcode, args, payload, dest_offset)

    # -- compute -----------------------------------------------------------
    def compute(self, node: int, cmd: ComputeCommand) -> Handle:
        """Queue ``cmd`` on the node's accelerator; completes after its ART traffic is injected."""
        n = self._node(node)
        h, done = self._new_handle(node, "compute")
        n.engine.enqueue_compute(cmd, on_done=done)
        return h

    # -- barrier -----------------------------------------------------------
    def barrier(self) -> int:
        """Centralized barrier through node 0; returns the release time of the last node."""
        self._require()
        self._barrier_epoch += 1
        self._barrier_arrivals = 0
        self._barrier_released = {}
        start = self.now
        if self.node_count == 1:
            self.barrier_log.append({"epoch": self._barrier_epoch, "start": start,
                                     "last_arrival": start, "released": {0: start}})
            return start
        self._barrier_last_arrival = None
        for node in range(self.node_count):
            cmd = Command(CommandKind.AM_REQUEST, 0, BARRIER_ARRIVE, Variant.SHORT,
                          (self._barrier_epoch,))
            self.nodes[node].core.submit_command(cmd, stall=True)
        self.sim.run_until(lambda: len(self._barrier_released) == self.node_count)
        self.barrier_log.append({"epoch": self._barrier_epoch, "start": start,
                                 "last_arrival": self._barrier_last_arrival,
                                 "released": dict(self._barrier_released)})
        return max(self._barrier_released.values())

    def _on_barrier_arrive(self, ctx: HandlerContext) -> None:
        self._barrier_arrivals += 1
        self.sim.record(ctx.node, "barrier_arrive", ctx.src, ctx.args[0])
        if self._barrier_arrivals == self.node_count:
            self._barrier_last_arrival = self.now
            for node in range(self.node_count):
                ctx.core.stage_request(Command(CommandKind.AM_REQUEST, node, BARRIER_RELEASE,
                                               Variant.SHORT, (ctx.args[0],)))

    def _on_barrier_release(self, ctx: HandlerContext) -> None:
        self._barrier_released[ctx.node] = self.now
        self.sim.record(ctx.node, "barrier_release", ctx.args[0])


def init(config: RuntimeConfig | dict | str | Path | None = None) -> Runtime:
    """Build a runtime from a config object, a config dict, or a JSON file path."""
    if config is None:
        config = RuntimeConfig()
    elif isinstance(config, dict):
        config = RuntimeConfig.from_dict(config)
    elif isinstance(config, (str, Path)):
        config = RuntimeConfig.from_json(config)
    return Runtime(config)


def start(config=None) -> Runtime:
    """``init`` followed by ``attach`` with the configured segment sizes."""
    rt = init(config)
    rt.attach()
    return rt
