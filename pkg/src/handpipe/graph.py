"""A small calculator-graph runtime with timestamped packets.

Nodes ("calculators") consume and produce streams of packets. A node fires
for a timestamp once every regular input has settled at that timestamp,
either with a packet or with nothing. Inputs fed through declared back
edges instead see the latest packet strictly before the current timestamp,
which is how a node reads the previous frame's result. Nodes may run
concurrently; each node handles its timestamps one at a time, in order.
"""

from __future__ import annotations

import bisect
import graphlib
import logging
import random
import time
from concurrent.futures import FIRST_COMPLETED, Future, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence

logger = logging.getLogger(__name__)

ANY = "Any"


@dataclass(frozen=True)
class Packet:
    timestamp: int
    payload: Any = field(compare=True)

    def __post_init__(self):
        if self.timestamp < 0:
            raise ValueError("packet timestamps must be non-negative")


@dataclass(frozen=True)
class Port:
    name: str
    type: str = ANY


class Calculator:
    """Base class for graph nodes.

    Subclasses declare ``INPUTS`` and ``OUTPUTS`` as {port: type name} and
    implement ``process``, returning a dict with an entry for each output
    that gets a packet at this timestamp. Missing inputs arrive as None.
    """

    INPUTS: Mapping[str, str] = {}
    OUTPUTS: Mapping[str, str] = {}
    # Fire even when every regular input is empty at a timestamp.
    PROCESS_EMPTY = False

    def process(self, timestamp: int, inputs: dict[str, Any]) -> dict[str, Any]:
        raise NotImplementedError


class FunctionCalculator(Calculator):
    def __init__(self, fn: Callable[[int, dict[str, Any]], dict[str, Any]]):
        self.fn = fn

    def process(self, timestamp, inputs):
        return self.fn(timestamp, inputs)


@dataclass(frozen=True)
class CalculatorNode:
    name: str
    inputs: tuple[Port, ...]
    outputs: tuple[Port, ...]
    factory: Callable[[], Calculator]
    calculator: str = ""
    process_empty: bool = False

    @classmethod
    def of(cls, name: str, calculator_cls: type[Calculator], factory: Callable[[], Calculator] | None = None):
        """Node whose ports come from a Calculator subclass's declarations."""
        return cls(
            name,
            tuple(Port(k, v) for k, v in calculator_cls.INPUTS.items()),
            tuple(Port(k, v) for k, v in calculator_cls.OUTPUTS.items()),
            factory or calculator_cls,
            calculator_cls.__name__,
            calculator_cls.PROCESS_EMPTY,
        )

    @classmethod
    def function(cls, name: str, fn, inputs: Sequence[str | Port], outputs: Sequence[str | Port], process_empty=False):
        as_port = lambda p: p if isinstance(p, Port) else Port(p)
        return cls(
            name,
            tuple(as_port(p) for p in inputs),
            tuple(as_port(p) for p in outputs),
            lambda: FunctionCalculator(fn),
            getattr(fn, "__name__", "function"),
            process_empty,
        )


@dataclass(frozen=True)
class Edge:
    source: str  # "node.port" or a graph input stream name
    target: str  # "node.port"
    back_edge: bool = False


@dataclass(frozen=True)
class GraphSpec:
    nodes: tuple[CalculatorNode, ...]
    edges: tuple[Edge, ...]
    inputs: tuple[Port, ...] = ()
    # (exposed name, "node.port")
    outputs: tuple[tuple[str, str], ...] = ()
    name: str = "graph"

    def node(self, name: str) -> CalculatorNode:
        for n in self.nodes:
            if n.name == name:
                return n
        raise KeyError(name)


@dataclass(frozen=True)
class Diagnostic:
    kind: str  # cycle | dangling | type_mismatch | unknown | duplicate
    message: str
    nodes: tuple[str, ...] = ()


class GraphValidationError(Exception):
    def __init__(self, diagnostics: Sequence[Diagnostic]):
        self.diagnostics = tuple(diagnostics)
        super().__init__("; ".join(d.message for d in self.diagnostics))


class GraphRunError(RuntimeError):
    def __init__(self, node: str, timestamp: int, cause: BaseException):
        super().__init__(f"node {node!r} failed at timestamp {timestamp}: {cause!r}")
        self.node = node
        self.timestamp = timestamp
        self.cause = cause


def _split(ref: str) -> tuple[str, str]:
    node, _, port = ref.partition(".")
    return node, port


def _compatible(a: str, b: str) -> bool:
    return a == ANY or b == ANY or a == b


def validate_graph(spec: GraphSpec) -> list[Diagnostic]:
    """All structural problems in ``spec``; an empty list means the graph is valid."""
    problems: list[Diagnostic] = []
    nodes: dict[str, CalculatorNode] = {}
    for node in spec.nodes:
        if node.name in nodes:
            problems.append(Diagnostic("duplicate", f"duplicate node name {node.name!r}", (node.name,)))
        nodes[node.name] = node
    graph_inputs = {p.name: p.type for p in spec.inputs}

    def source_type(ref: str) -> str | None:
        if ref in graph_inputs:
            return graph_inputs[ref]
        node, port = _split(ref)
        if node in nodes:
            for p in nodes[node].outputs:
                if p.name == port:
                    return p.type
        return None

    def target_type(ref: str) -> str | None:
        node, port = _split(ref)
        if node in nodes:
            for p in nodes[node].inputs:
                if p.name == port:
                    return p.type
        return None

    connected: dict[str, int] = {}
    deps: dict[str, set[str]] = {name: set() for name in nodes}
    for edge in spec.edges:
        src_t, dst_t = source_type(edge.source), target_type(edge.target)
        if src_t is None:
            problems.append(Diagnostic("unknown", f"edge source {edge.source!r} does not exist", (_split(edge.source)[0],)))
        if dst_t is None:
            problems.append(Diagnostic("unknown", f"edge target {edge.target!r} does not exist", (_split(edge.target)[0],)))
            continue
        connected[edge.target] = connected.get(edge.target, 0) + 1
        if src_t is not None and not _compatible(src_t, dst_t):
            problems.append(Diagnostic(
                "type_mismatch",
                f"{edge.source} ({src_t}) cannot feed {edge.target} ({dst_t})",
                (_split(edge.source)[0], _split(edge.target)[0]),
            ))
        src_node = _split(edge.source)[0] if edge.source not in graph_inputs else None
        if src_node in nodes and not edge.back_edge:
            deps[_split(edge.target)[0]].add(src_node)
    for node in spec.nodes:
        for port in node.inputs:
            ref = f"{node.name}.{port.name}"
            count = connected.get(ref, 0)
            if count == 0:
                problems.append(Diagnostic("dangling", f"input {ref} is not connected", (node.name,)))
            elif count > 1:
                problems.append(Diagnostic("duplicate", f"input {ref} has {count} producers", (node.name,)))
    for name, ref in spec.outputs:
        if source_type(ref) is None:
            problems.append(Diagnostic("unknown", f"graph output {name!r} refers to missing stream {ref!r}"))
    problems.extend(_cycles(deps))
    return problems


def _cycles(deps: dict[str, set[str]]) -> list[Diagnostic]:
    """One diagnostic per strongly connected component that forms a cycle."""
    index: dict[str, int] = {}
    low: dict[str, int] = {}
    stack: list[str] = []
    on_stack: set[str] = set()
    found: list[Diagnostic] = []
    counter = [0]

    def visit(v: str):
        index[v] = low[v] = counter[0]
        counter[0] += 1
        stack.append(v)
        on_stack.add(v)
        for w in sorted(deps[v]):
            if w not in index:
                visit(w)
                low[v] = min(low[v], low[w])
            elif w in on_stack:
                low[v] = min(low[v], index[w])
        if low[v] == index[v]:
            comp = []
            while True:
                w = stack.pop()
                on_stack.discard(w)
                comp.append(w)
                if w == v:
                    break
            if len(comp) > 1 or v in deps[v]:
                names = tuple(sorted(comp))
                found.append(Diagnostic(
                    "cycle", f"cycle without a declared back edge through nodes {', '.join(names)}", names
                ))

    for v in sorted(deps):
        if v not in index:
            visit(v)
    return found


def check_graph(spec: GraphSpec) -> GraphSpec:
    problems = validate_graph(spec)
    if problems:
        raise GraphValidationError(problems)
    return spec


def topological_order(spec: GraphSpec) -> list[str]:
    sorter = graphlib.TopologicalSorter()
    names = {n.name for n in spec.nodes}
    for node in spec.nodes:
        sorter.add(node.name)
    for edge in spec.edges:
        src = _split(edge.source)[0]
        if not edge.back_edge and src in names:
            sorter.add(_split(edge.target)[0], src)
    return list(sorter.static_order())


@dataclass
class RunResult:
    """Streams of a finished run plus per-node statistics.

    Attributes:
        streams: exposed graph outputs, each a timestamp-ordered packet list.
        fire_counts: how many timestamps each node actually processed.
        timings: per-node wall-clock durations (seconds) of each firing.
        timestamps: every input timestamp, in order.
    """

    streams: dict[str, list[Packet]]
    fire_counts: dict[str, int]
    timings: dict[str, list[float]]
    timestamps: list[int]
    wall_time: float = 0.0


_EMPTY = object()


def _normalize_inputs(spec: GraphSpec, inputs) -> Iterable[tuple[int, dict[str, Any]]]:
    names = [p.name for p in spec.inputs]
    for item in inputs:
        if isinstance(item, Packet):
            if len(names) != 1:
                raise ValueError("bare packets are only accepted by single-input graphs")
            yield item.timestamp, {names[0]: item.payload}
        else:
            t, values = item
            yield int(t), dict(values)


class _Run:
    def __init__(self, spec, inputs, max_workers, in_flight, scheduler_seed):
        self.spec = spec
        self.inputs = iter(_normalize_inputs(spec, inputs))
        self.input_names = {p.name for p in spec.inputs}
        self.max_workers = max_workers
        self.in_flight = max(1, in_flight)
        self.rng = random.Random(scheduler_seed) if scheduler_seed is not None else None
        self.order = topological_order(spec)
        self.nodes = {n.name: n for n in spec.nodes}
        self.calculators = {n.name: n.factory() for n in spec.nodes}
        self.wiring: dict[str, dict[str, Edge]] = {n.name: {} for n in spec.nodes}
        for edge in spec.edges:
            node, port = _split(edge.target)
            self.wiring[node][port] = edge
        # stream ref -> {timestamp: payload or _EMPTY}
        self.settled: dict[str, dict[int, Any]] = {}
        # stream ref -> ([timestamps], [payloads]) of real packets, for back-edge lookups
        self.history: dict[str, tuple[list[int], list[Any]]] = {}
        self.back_sources = {e.source for e in spec.edges if e.back_edge}
        self.timestamps: list[int] = []
        self.exhausted = False
        self.next_index = {name: 0 for name in self.nodes}
        self.running: set[str] = set()
        self.fire_counts = {name: 0 for name in self.nodes}
        self.timings: dict[str, list[float]] = {name: [] for name in self.nodes}
        self.outputs = {name: [] for name, _ in spec.outputs}
        self.output_refs: dict[str, list[str]] = {}
        for name, ref in spec.outputs:
            self.output_refs.setdefault(ref, []).append(name)

    def _settle(self, ref: str, t: int, payload: Any):
        self.settled.setdefault(ref, {})[t] = payload
        if payload is _EMPTY:
            return
        if ref in self.back_sources:
            ts, vals = self.history.setdefault(ref, ([], []))
            ts.append(t)
            vals.append(payload)
        for name in self.output_refs.get(ref, ()):
            self.outputs[name].append(Packet(t, payload))

    def _admit(self):
        while not self.exhausted and len(self.timestamps) - min(self.next_index.values(), default=0) < self.in_flight:
            try:
                t, values = next(self.inputs)
            except StopIteration:
                self.exhausted = True
                return
            if self.timestamps and t <= self.timestamps[-1]:
                raise ValueError(f"input timestamps must strictly increase: {t} after {self.timestamps[-1]}")
            unknown = set(values) - self.input_names
            if unknown:
                raise ValueError(f"unknown graph inputs {sorted(unknown)}")
            self.timestamps.append(t)
            for name in self.input_names:
                self._settle(name, t, values.get(name, _EMPTY))

    def _ready(self, name: str) -> bool:
        i = self.next_index[name]
        if name in self.running or i >= len(self.timestamps):
            return False
        t = self.timestamps[i]
        for edge in self.wiring[name].values():
            src_node = _split(edge.source)[0]
            if edge.back_edge:
                if edge.source not in self.input_names and self.next_index[src_node] < i:
                    return False
            elif t not in self.settled.get(edge.source, {}):
                return False
        return True

    def _gather(self, name: str, t: int) -> dict[str, Any]:
        values = {}
        for port, edge in self.wiring[name].items():
            if edge.back_edge:
                ts, vals = self.history.get(edge.source, ([], []))
                k = bisect.bisect_left(ts, t)
                values[port] = vals[k - 1] if k > 0 else None
            else:
                payload = self.settled[edge.source][t]
                values[port] = None if payload is _EMPTY else payload
        return values

    def _invoke(self, name: str, t: int, values: dict[str, Any], delay: float):
        if delay:
            time.sleep(delay)
        node = self.nodes[name]
        regular = [p for p, e in self.wiring[name].items() if not e.back_edge]
        if not node.process_empty and regular and all(values[p] is None for p in regular):
            return None, 0.0
        start = time.perf_counter()
        out = self.calculators[name].process(t, values) or {}
        elapsed = time.perf_counter() - start
        declared = {p.name for p in node.outputs}
        extra = set(out) - declared
        if extra:
            raise ValueError(f"undeclared outputs {sorted(extra)}")
        return out, elapsed

    def _complete(self, name: str, t: int, out, elapsed: float):
        if out is not None:
            self.fire_counts[name] += 1
            self.timings[name].append(elapsed)
        out = out or {}
        for port in self.nodes[name].outputs:
            self._settle(f"{name}.{port.name}", t, out.get(port.name, _EMPTY))
        self.next_index[name] += 1
        self._prune()

    def _prune(self):
        done = min(self.next_index.values(), default=0)
        if done < 2:
            return
        cutoff = self.timestamps[done - 1]
        for table in self.settled.values():
            for t in [t for t in table if t < cutoff]:
                del table[t]

    def _pick(self) -> list[str]:
        ready = [n for n in self.order if self._ready(n)]
        if self.rng is not None:
            self.rng.shuffle(ready)
        return ready

    def _delay(self) -> float:
        return self.rng.random() * 2e-4 if self.rng is not None else 0.0

    def run_inline(self):
        while True:
            self._admit()
            ready = self._pick()
            if not ready:
                break
            name = ready[0]
            t = self.timestamps[self.next_index[name]]
            try:
                out, elapsed = self._invoke(name, t, self._gather(name, t), 0.0)
            except Exception as exc:
                raise GraphRunError(name, t, exc) from exc
            self._complete(name, t, out, elapsed)

    def run_threaded(self):
        pending: dict[Future, tuple[str, int]] = {}
        with ThreadPoolExecutor(max_workers=self.max_workers, thread_name_prefix="calculator") as pool:
            while True:
                self._admit()
                for name in self._pick():
                    t = self.timestamps[self.next_index[name]]
                    self.running.add(name)
                    fut = pool.submit(self._invoke, name, t, self._gather(name, t), self._delay())
                    pending[fut] = (name, t)
                if not pending:
                    break
                done, _ = wait(pending, return_when=FIRST_COMPLETED)
                for fut in sorted(done, key=lambda f: self.order.index(pending[f][0])):
                    name, t = pending.pop(fut)
                    self.running.discard(name)
                    try:
                        out, elapsed = fut.result()
                    except Exception as exc:
                        for other in pending:
                            other.cancel()
                        raise GraphRunError(name, t, exc) from exc
                    self._complete(name, t, out, elapsed)

    def finish(self) -> RunResult:
        stuck = [n for n, i in self.next_index.items() if i < len(self.timestamps)]
        if stuck:
            raise RuntimeError(f"graph stalled; nodes with unprocessed timestamps: {stuck}")
        return RunResult(self.outputs, self.fire_counts, self.timings, list(self.timestamps))


def run_graph(
    spec: GraphSpec,
    inputs: Iterable[Packet] | Iterable[tuple[int, Mapping[str, Any]]],
    max_workers: int = 4,
    in_flight: int = 4,
    scheduler_seed: int | None = None,
) -> RunResult:
    """Run a validated graph to completion.

    Args:
        spec: graph to run; validated first.
        inputs: Packets (single-input graphs) or (timestamp, {input: payload}) pairs.
        max_workers: thread pool size; 0 runs every node inline on the caller's thread.
        in_flight: how many timestamps may be in progress at once.
        scheduler_seed: when set, ready nodes are dispatched in a seeded random
            order with small random start delays, to exercise interleavings.
    """
    check_graph(spec)
    run = _Run(spec, inputs, max_workers, in_flight, scheduler_seed)
    start = time.perf_counter()
    if max_workers <= 0:
        run.run_inline()
    else:
        run.run_threaded()
    result = run.finish()
    result.wall_time = time.perf_counter() - start
    return result


class MissingAllowPacket(ValueError):
    pass


def gate_value(timestamp: int, data: Any, allow: Any) -> dict[str, Any]:
    if data is None:
        return {}
    if allow is None:
        raise MissingAllowPacket(f"no allow packet at timestamp {timestamp}")
    if not isinstance(allow, bool):
        raise TypeError(f"allow packets must be booleans, got {type(allow).__name__}")
    return {"out": data} if allow else {}


class GateCalculator(Calculator):
    """Forwards ``data`` at a timestamp only when ``allow`` is True there."""

    INPUTS = {"data": ANY, "allow": "Bool"}
    OUTPUTS = {"out": ANY}

    def process(self, timestamp, inputs):
        return gate_value(timestamp, inputs.get("data"), inputs.get("allow"))


def gate(data: Sequence[Packet], allow: Sequence[Packet]) -> list[Packet]:
    """Stream form of the gate: keep data packets whose same-timestamp allow packet is True."""
    allow_at = {p.timestamp: p.payload for p in allow}
    out = []
    for packet in data:
        forwarded = gate_value(packet.timestamp, packet.payload, allow_at.get(packet.timestamp))
        if forwarded:
            out.append(Packet(packet.timestamp, forwarded["out"]))
    return out


class GraphParseError(ValueError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


def parse_graph_text(text: str, registry: Mapping[str, Callable[[], tuple[type[Calculator], Callable[[], Calculator]]]]) -> GraphSpec:
    """Parse the line-based graph format.

    Directives, one per line (``#`` starts a comment)::

        graph <name>
        input <stream> [<type>]
        output <name> <node>.<port>
        node <name> <CalculatorType>
        edge <source> -> <node>.<port> [back]

    ``registry`` maps calculator type names to callables returning the
    Calculator subclass and a zero-argument factory for instances.
    """
    name = "graph"
    inputs: list[Port] = []
    outputs: list[tuple[str, str]] = []
    nodes: list[CalculatorNode] = []
    edges: list[Edge] = []
    for line_no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        kind, args = parts[0], parts[1:]
        if kind == "graph" and len(args) == 1:
            name = args[0]
        elif kind == "input" and len(args) in (1, 2):
            inputs.append(Port(args[0], args[1] if len(args) == 2 else ANY))
        elif kind == "output" and len(args) == 2:
            outputs.append((args[0], args[1]))
        elif kind == "node" and len(args) == 2:
            if args[1] not in registry:
                raise GraphParseError(line_no, f"unknown calculator type {args[1]!r}")
            cls, factory = registry[args[1]]()
            nodes.append(CalculatorNode.of(args[0], cls, factory))
        elif kind == "edge" and len(args) in (3, 4) and args[1] == "->":
            if len(args) == 4 and args[3] != "back":
                raise GraphParseError(line_no, f"unexpected edge flag {args[3]!r}")
            edges.append(Edge(args[0], args[2], len(args) == 4))
        else:
            raise GraphParseError(line_no, f"cannot parse {raw.strip()!r}")
    return GraphSpec(tuple(nodes), tuple(edges), tuple(inputs), tuple(outputs), name)
