"""Dependency graph, content-digest manifest, and incremental planning.

Staleness is decided by content digests, never timestamps. For every
computed source the manifest records: a digest per parameter of the exact
canonical argument bytes, a digest of the function identity (inline code
text when present, else environment + function URI), and a digest of the
produced output bytes. A source is dirty when its manifest entry is absent,
its stored output file is missing, any of those digests moved, or any
ancestor is dirty.

Two classes of inputs cannot be materialized at planning time: sources of
nostore descriptors and FUNC values. Parameters resolving to them are
digested over the resolved URI list instead — membership changes are caught
directly and content changes arrive via the ancestor-dirty rule. This also
keeps function handles out of every persisted byte.
"""

from __future__ import annotations

import base64
import binascii
import heapq
import json
import time
from dataclasses import dataclass, field
from typing import Any, Iterable

from .descriptors import (InlineValue, ParameterSpec, Resolution, SourceDescriptor,
                          SourceSet, UriRef, resolve_references)
from .errors import (CycleError, DecodeError, MalformedJson, MergeError,
                     SchemaViolation, UnknownTarget)
from .formats import DataFormat, canonical_json, decode, digest, encode, merge_inputs

_MISSING_FILE = "missing-input"        # never a valid digest, so always "changed"
_UNDECODABLE = "undecodable-input"


@dataclass(frozen=True)
class ManifestEntry:
    input_digests: dict[str, str]
    code_digest: str
    output_digest: str | None  # None for nostore sources
    timestamp: float


class Manifest:
    """Persisted staleness record, one entry per previously computed source URI."""

    def __init__(self, entries: dict[str, ManifestEntry] | None = None):
        self.entries: dict[str, ManifestEntry] = dict(entries or {})

    @classmethod
    def from_bytes(cls, data: bytes | None) -> "Manifest":
        if data is None:
            return cls()
        try:
            doc = json.loads(data.decode("utf-8"))
            entries = {
                uri: ManifestEntry(
                    input_digests=dict(entry["inputs"]),
                    code_digest=entry["code"],
                    output_digest=entry["output"],
                    timestamp=entry["timestamp"],
                )
                for uri, entry in doc["entries"].items()
            }
        except (ValueError, KeyError, TypeError, AttributeError) as exc:
            raise MalformedJson(f"manifest is corrupt: {exc}")
        return cls(entries)

    def to_bytes(self) -> bytes:
        doc = {
            "entries": {
                uri: {
                    "inputs": entry.input_digests,
                    "code": entry.code_digest,
                    "output": entry.output_digest,
                    "timestamp": entry.timestamp,
                }
                for uri, entry in self.entries.items()
            }
        }
        return canonical_json(doc)

    def record(self, uri: str, input_digests: dict[str, str], code_digest: str,
               output_digest: str | None) -> None:
        self.entries[uri] = ManifestEntry(
            input_digests=dict(input_digests), code_digest=code_digest,
            output_digest=output_digest, timestamp=time.time())


@dataclass(frozen=True)
class DependencyGraph:
    source_set: SourceSet
    tree: Any  # FileTree: paths/exists/read
    resolution: Resolution
    nodes: frozenset[str]
    raw_nodes: frozenset[str]
    parents: dict[str, tuple[str, ...]]
    children: dict[str, tuple[str, ...]]

    def descriptor(self, uri: str) -> SourceDescriptor | None:
        return self.source_set.by_output.get(uri)

    def param_sources(self, descriptor: SourceDescriptor,
                      param: ParameterSpec) -> tuple[str, ...]:
        return self.resolution.resolved[(descriptor.key, param.name)]

    def ancestors(self, targets: Iterable[str]) -> set[str]:
        seen: set[str] = set()
        stack = list(targets)
        while stack:
            node = stack.pop()
            for parent in self.parents.get(node, ()):
                if parent not in seen:
                    seen.add(parent)
                    stack.append(parent)
        return seen


@dataclass(frozen=True)
class ComputationPlan:
    """Ordered batches of source URIs; nodes within a batch may run concurrently."""

    batches: tuple[tuple[str, ...], ...]
    dirty: frozenset[str]
    demanded: frozenset[str]  # clean nostore sources pulled in by dirty consumers

    @property
    def empty(self) -> bool:
        return not self.batches

    def nodes(self) -> set[str]:
        return {uri for batch in self.batches for uri in batch}

    def to_json(self) -> dict[str, Any]:
        return {
            "batches": [list(batch) for batch in self.batches],
            "dirty": sorted(self.dirty),
            "demanded": sorted(self.demanded),
        }

    def to_bytes(self) -> bytes:
        return canonical_json(self.to_json())


def build_graph(source_set: SourceSet, tree: Any) -> DependencyGraph:
    """Construct the computation DAG over descriptor outputs and raw files.

    The source set must validate cleanly against the tree; a cyclic reference
    structure raises CycleError with one witness cycle.
    """
    resolution = resolve_references(source_set, tree.paths())
    if resolution.report.findings:
        first = resolution.report.findings[0]
        raise SchemaViolation(
            f"project does not validate ({len(resolution.report.findings)} finding(s)); "
            f"first: {first.message}")
    nodes = set(source_set.outputs) | set(resolution.raw_inputs)
    parents: dict[str, set[str]] = {node: set() for node in nodes}
    children: dict[str, set[str]] = {node: set() for node in nodes}
    for descriptor in source_set.entries:
        for param in descriptor.uri_params():
            for source in resolution.resolved[(descriptor.key, param.name)]:
                for output in descriptor.outputs:
                    parents[output].add(source)
                    children[source].add(output)
    _check_acyclic(nodes, parents)
    return DependencyGraph(
        source_set=source_set, tree=tree, resolution=resolution,
        nodes=frozenset(nodes), raw_nodes=frozenset(resolution.raw_inputs),
        parents={n: tuple(sorted(ps)) for n, ps in parents.items()},
        children={n: tuple(sorted(cs)) for n, cs in children.items()})


def _check_acyclic(nodes: set[str], parents: dict[str, set[str]]) -> None:
    WHITE, GREY, BLACK = 0, 1, 2
    color = {node: WHITE for node in nodes}
    for start in sorted(nodes):
        if color[start] != WHITE:
            continue
        stack: list[tuple[str, Iterable[str]]] = [(start, iter(sorted(parents[start])))]
        path = [start]
        color[start] = GREY
        while stack:
            node, it = stack[-1]
            advanced = False
            for parent in it:
                if color[parent] == GREY:
                    cycle = path[path.index(parent):] + [parent]
                    raise CycleError(cycle)
                if color[parent] == WHITE:
                    color[parent] = GREY
                    stack.append((parent, iter(sorted(parents[parent]))))
                    path.append(parent)
                    advanced = True
                    break
            if not advanced:
                color[node] = BLACK
                stack.pop()
                path.pop()


def topo_order(graph: DependencyGraph) -> list[str]:
    """Dependency-respecting order over all nodes; ties broken lexicographically."""
    return _topo(graph.nodes, graph.parents, graph.children)


def _topo(nodes: Iterable[str], parents: dict[str, tuple[str, ...]] | dict[str, set[str]],
          children: dict[str, tuple[str, ...]] | dict[str, set[str]]) -> list[str]:
    node_set = set(nodes)
    pending = {n: sum(1 for p in parents.get(n, ()) if p in node_set) for n in node_set}
    ready = [n for n, count in pending.items() if count == 0]
    heapq.heapify(ready)
    order: list[str] = []
    while ready:
        node = heapq.heappop(ready)
        order.append(node)
        for child in children.get(node, ()):
            if child in node_set:
                pending[child] -= 1
                if pending[child] == 0:
                    heapq.heappush(ready, child)
    return order


# --- staleness digests ---------------------------------------------------------

def code_digest(descriptor: SourceDescriptor) -> str:
    """Function identity: inline code text when present, else env + func URI.

    The engine cannot see into executor codebases, so library changes behind a
    function URI require a forced run.
    """
    if descriptor.code is not None:
        return digest(descriptor.code.encode("utf-8"))
    return digest(f"{descriptor.env}\0{descriptor.func}".encode("utf-8"))


def inline_param_bytes(param: ParameterSpec) -> bytes:
    """Canonical argument bytes for an inline-bound parameter."""
    assert isinstance(param.binding, InlineValue)
    value = param.binding.value
    if param.format is DataFormat.JSON:
        return canonical_json(value)
    if not isinstance(value, str):
        raise SchemaViolation(
            f"inline {param.format.value} parameter {param.name!r} must be a JSON string")
    if param.format is DataFormat.BIN:
        try:
            return base64.b64decode(value.encode("ascii"), validate=True)
        except (binascii.Error, UnicodeEncodeError) as exc:
            raise DecodeError("BIN", f"inline value is not valid base64: {exc}")
    # Re-encode through the value model so inline text is canonicalized the
    # same way file content is.
    return encode(decode(value.encode("utf-8"), param.format), param.format)


def resolution_digest(sources: Iterable[str]) -> str:
    """Digest standing in for inputs that cannot be materialized at plan time."""
    return digest(canonical_json({"sources": sorted(sources)}))


def _materializable(graph: DependencyGraph, sources: Iterable[str]) -> bool:
    for uri in sources:
        producer = graph.descriptor(uri)
        if producer is not None and not producer.stored:
            return False
    return True


def materialize_param(graph: DependencyGraph, param: ParameterSpec,
                      sources: tuple[str, ...],
                      read: Any | None = None) -> bytes:
    """Canonical argument bytes for a uri-bound parameter.

    `read` overrides byte access (the scheduler passes one that also covers
    freshly computed nostore temporaries); defaults to the graph's tree.
    """
    read = read or graph.tree.read
    values = [decode(read(uri), param.format) for uri in sources]
    value = values[0] if len(sources) == 1 else merge_inputs(values, param.format)
    return encode(value, param.format)


def param_digest(graph: DependencyGraph, descriptor: SourceDescriptor,
                 param: ParameterSpec) -> str:
    """Current digest of one parameter for staleness comparison."""
    if isinstance(param.binding, InlineValue):
        return digest(inline_param_bytes(param))
    sources = graph.param_sources(descriptor, param)
    if not _materializable(graph, sources):
        return resolution_digest(sources)
    try:
        return digest(materialize_param(graph, param, sources))
    except FileNotFoundError:
        return _MISSING_FILE
    except (DecodeError, MergeError):
        # content changed into something unreadable: the consumer is stale and
        # the run will report the decode failure at the right node
        return _UNDECODABLE


def current_input_digests(graph: DependencyGraph,
                          descriptor: SourceDescriptor) -> dict[str, str]:
    return {name: param_digest(graph, descriptor, param)
            for name, param in descriptor.params.items()}


# --- planning --------------------------------------------------------------------

def plan(graph: DependencyGraph, manifest: Manifest,
         targets: Iterable[str] | None = None, force: bool = False) -> ComputationPlan:
    """Minimal ordered plan that brings `targets` (default: everything) up to date.

    Dirty means: no manifest entry, stored output file missing, changed
    input/code digest, or a dirty ancestor. Clean nostore sources are added
    on demand when a planned consumer needs their value; they do not dirty
    their other consumers.
    """
    if targets is None:
        target_set = set(graph.source_set.outputs)
    else:
        target_set = set(targets)
        unknown = target_set - set(graph.nodes)
        if unknown:
            raise UnknownTarget(f"unknown target(s): {', '.join(sorted(unknown))}")
    scope = target_set | graph.ancestors(target_set)
    order = _topo(scope, graph.parents, graph.children)

    dirty: set[str] = set()
    for uri in order:
        descriptor = graph.descriptor(uri)
        if descriptor is None:
            continue  # raw files are inputs, never computed
        if force:
            dirty.add(uri)
            continue
        entry = manifest.entries.get(uri)
        if entry is None:
            dirty.add(uri)
            continue
        if descriptor.stored and not graph.tree.exists(uri):
            dirty.add(uri)
            continue
        if any(parent in dirty for parent in graph.parents.get(uri, ())):
            dirty.add(uri)
            continue
        if code_digest(descriptor) != entry.code_digest:
            dirty.add(uri)
            continue
        if current_input_digests(graph, descriptor) != entry.input_digests:
            dirty.add(uri)

    # Demand closure: a planned consumer needs the values of its non-stored
    # suppliers, which only exist while being computed.
    planned = set(dirty)
    queue = list(planned)
    while queue:
        uri = queue.pop()
        for parent in graph.parents.get(uri, ()):
            producer = graph.descriptor(parent)
            if producer is not None and not producer.stored and parent not in planned:
                planned.add(parent)
                queue.append(parent)

    if not planned:
        return ComputationPlan(batches=(), dirty=frozenset(), demanded=frozenset())

    level: dict[str, int] = {}
    for uri in _topo(planned, graph.parents, graph.children):
        level[uri] = 1 + max((level[p] for p in graph.parents.get(uri, ())
                              if p in level), default=-1)
    batches: dict[int, list[str]] = {}
    for uri, lvl in level.items():
        batches.setdefault(lvl, []).append(uri)
    ordered = tuple(tuple(sorted(batches[lvl])) for lvl in sorted(batches))
    return ComputationPlan(batches=ordered, dirty=frozenset(dirty),
                           demanded=frozenset(planned - dirty))
