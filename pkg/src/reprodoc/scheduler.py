"""Plan execution: executor lifecycle, argument materialization, output persistence.

Batches run in order; nodes within a batch run concurrently, bounded by a
worker count and by each environment's executor limit. Executors are
launched via the project's `environments.json` command (argv carries the
environment id, stdout line one is the base URL), health-checked, reused
across nodes — functions are pure, so a warm executor is always safe — and
shut down at the end of the run, with a process kill after a grace period
for stragglers.

Outputs are written atomically (temp file + rename) and the manifest entry
for a node is recorded only after all of its outputs are on disk, so an
interrupted run never leaves a partial file at a final path nor a manifest
entry without its output. nostore values live in a run-scoped area under
`.prov/tmp/` and are deleted as soon as no remaining plan node needs them.
"""

from __future__ import annotations

import json
import logging
import os
import shutil
import subprocess
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from queue import Empty, Queue
from typing import Any

import requests

from . import protocol
from .descriptors import ParameterSpec, SourceDescriptor, UriRef
from .errors import (CrossExecutorFunc, ExecutorLaunchError, IntegrityError,
                     ReprodocError, SchemaViolation, StaleFuncHandle)
from .formats import DataFormat, canonical_json, decode, digest, encode
from .graph import (ComputationPlan, DependencyGraph, Manifest, _materializable,
                    code_digest, inline_param_bytes, materialize_param,
                    resolution_digest)
from .project import PROV_DIR, Project
from .protocol import (ComputeRequest, ComputeResult, ExecutorFailure,
                       ParamPayload, ResultEntry)

log = logging.getLogger(__name__)

OUTCOME_OK = "ok"
OUTCOME_FAILED = "failed"
OUTCOME_SKIPPED = "skipped-downstream"

_LOG_EXCERPT = 2000


class EnvironmentRegistry:
    """Launch command template and executor limit per environment id."""

    def __init__(self, environments: dict[str, dict[str, Any]]):
        self._envs: dict[str, tuple[list[str], int]] = {}
        for env, entry in environments.items():
            if not isinstance(entry, dict):
                raise SchemaViolation(f"environment {env!r} must be an object")
            cmd = entry.get("cmd")
            if (not isinstance(cmd, list) or not cmd
                    or not all(isinstance(a, str) for a in cmd)):
                raise SchemaViolation(f"environment {env!r}: 'cmd' must be a list of strings")
            limit = entry.get("max", 1)
            if not isinstance(limit, int) or isinstance(limit, bool) or limit < 1:
                raise SchemaViolation(f"environment {env!r}: 'max' must be a positive integer")
            unknown = set(entry) - {"cmd", "max"}
            if unknown:
                raise SchemaViolation(f"environment {env!r}: unknown field(s) {sorted(unknown)}")
            self._envs[env] = (list(cmd), limit)

    @classmethod
    def from_bytes(cls, data: bytes) -> "EnvironmentRegistry":
        try:
            doc = json.loads(data.decode("utf-8"))
        except (ValueError, UnicodeDecodeError) as exc:
            raise SchemaViolation(f"environments.json is not valid JSON: {exc}")
        if not isinstance(doc, dict):
            raise SchemaViolation("environments.json must be a JSON object")
        return cls(doc)

    def __contains__(self, env: str) -> bool:
        return env in self._envs

    def command(self, env: str) -> list[str]:
        template = self._envs[env][0]
        cmd = [arg.replace("{env}", env) for arg in template]
        if not any("{env}" in arg for arg in template):
            cmd.append(env)
        return cmd

    def limit(self, env: str) -> int:
        return self._envs[env][1]


@dataclass
class ExecutorHandle:
    env: str
    base_url: str
    session_id: str
    process: subprocess.Popen | None = None
    busy: bool = False
    dead: bool = False

    def compute(self, body: bytes, timeout: float | None) -> tuple[int, Any]:
        response = requests.post(f"{self.base_url}/compute", data=body,
                                 headers={"Content-Type": "application/json"},
                                 timeout=timeout)
        try:
            payload = response.json()
        except ValueError:
            payload = response.text
        return response.status_code, payload


@dataclass
class NodeReport:
    outcome: str
    wall_ms: int = 0
    session: str = ""
    log: str = ""
    error: str = ""

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"outcome": self.outcome, "wall_ms": self.wall_ms,
                               "session": self.session, "log": self.log[:_LOG_EXCERPT]}
        if self.error:
            out["error"] = self.error
        return out


@dataclass
class RunReport:
    nodes: dict[str, NodeReport] = field(default_factory=dict)

    @property
    def status(self) -> str:
        bad = any(n.outcome != OUTCOME_OK for n in self.nodes.values())
        return "failed" if bad else "ok"

    def to_json(self) -> dict[str, Any]:
        return {"status": self.status,
                "nodes": {uri: node.to_json() for uri, node in sorted(self.nodes.items())}}

    def to_bytes(self) -> bytes:
        return canonical_json(self.to_json())


class _ExecutorPool:
    """Bounded pool of executors per environment, launched on demand."""

    def __init__(self, scheduler: "Scheduler"):
        self._scheduler = scheduler
        self._cond = threading.Condition()
        self._handles: dict[str, list[ExecutorHandle]] = {}
        self._launching: dict[str, int] = {}

    def acquire(self, env: str, pinned: ExecutorHandle | None = None) -> ExecutorHandle:
        registry = self._scheduler.registry
        if env not in registry:
            raise ExecutorLaunchError(f"no environment {env!r} in environments.json")
        with self._cond:
            while True:
                if pinned is not None:
                    if pinned.dead:
                        raise StaleFuncHandle(
                            f"executor session {pinned.session_id} died while "
                            f"holding function values")
                    if not pinned.busy:
                        pinned.busy = True
                        return pinned
                else:
                    handles = self._handles.setdefault(env, [])
                    for handle in handles:
                        if not handle.busy and not handle.dead:
                            handle.busy = True
                            return handle
                    live = sum(1 for h in handles if not h.dead)
                    if live + self._launching.get(env, 0) < registry.limit(env):
                        self._launching[env] = self._launching.get(env, 0) + 1
                        break  # launch outside the lock
                self._cond.wait(timeout=0.5)
        try:
            handle = self._scheduler._launch(env)
        finally:
            with self._cond:
                self._launching[env] -= 1
                self._cond.notify_all()
        with self._cond:
            handle.busy = True
            self._handles.setdefault(env, []).append(handle)
            return handle

    def release(self, handle: ExecutorHandle, *, dead: bool = False) -> None:
        with self._cond:
            handle.busy = False
            if dead:
                handle.dead = True
            self._cond.notify_all()

    def all_handles(self) -> list[ExecutorHandle]:
        with self._cond:
            return [h for handles in self._handles.values() for h in handles]


class Scheduler:
    """Executes computation plans for one project. Single writer of its manifest."""

    def __init__(self, project: Project, registry: EnvironmentRegistry, *,
                 jobs: int | None = None, launch_timeout: float = 30.0,
                 shutdown_grace: float = 5.0, compute_timeout: float | None = None):
        self.project = project
        self.registry = registry
        self.jobs = jobs or os.cpu_count() or 2
        self.launch_timeout = launch_timeout
        self.shutdown_grace = shutdown_grace
        self.compute_timeout = compute_timeout
        self._pool = _ExecutorPool(self)
        self._manifest_lock = threading.Lock()
        self._report_lock = threading.Lock()

    # --- executor lifecycle ---------------------------------------------------

    def _launch(self, env: str) -> ExecutorHandle:
        cmd = self.registry.command(env)
        try:
            process = subprocess.Popen(cmd, cwd=self.project.root,
                                       stdout=subprocess.PIPE,
                                       stderr=subprocess.PIPE, text=True)
        except OSError as exc:
            raise ExecutorLaunchError(f"cannot launch environment {env!r}: {exc}")
        url = self._read_url(process, env)
        deadline = time.monotonic() + self.launch_timeout
        while True:
            if process.poll() is not None:
                raise ExecutorLaunchError(
                    f"executor for {env!r} exited with code {process.returncode}: "
                    f"{self._drain_stderr(process)}")
            try:
                response = requests.get(f"{url}/health", timeout=2)
                body = response.json()
                if response.status_code == 200 and body.get("status") == "ok":
                    return ExecutorHandle(env=env, base_url=url,
                                          session_id=str(body.get("session_id", "")),
                                          process=process)
            except (requests.RequestException, ValueError):
                pass
            if time.monotonic() > deadline:
                process.kill()
                raise ExecutorLaunchError(
                    f"executor for {env!r} at {url} failed its health check within "
                    f"{self.launch_timeout:.0f}s")
            time.sleep(0.05)

    def _read_url(self, process: subprocess.Popen, env: str) -> str:
        lines: Queue[str] = Queue()

        def reader():
            lines.put(process.stdout.readline() if process.stdout else "")

        threading.Thread(target=reader, daemon=True).start()
        try:
            line = lines.get(timeout=self.launch_timeout).strip()
        except Empty:
            process.kill()
            raise ExecutorLaunchError(
                f"executor for {env!r} printed no URL within {self.launch_timeout:.0f}s")
        if not line.startswith("http"):
            process.kill()
            process.wait(timeout=5)
            raise ExecutorLaunchError(
                f"executor for {env!r} printed {line!r} instead of a base URL: "
                f"{self._drain_stderr(process)}")
        return line

    @staticmethod
    def _drain_stderr(process: subprocess.Popen) -> str:
        if process.stderr is None:
            return ""
        try:
            data = process.stderr.read()
        except (OSError, ValueError):
            return ""
        return (data or "").strip()[-_LOG_EXCERPT:]

    def shutdown_all(self) -> None:
        """Best-effort stop of every live executor; kill stragglers after grace."""
        handles = self._pool.all_handles()
        for handle in handles:
            if handle.dead:
                continue
            try:
                requests.post(f"{handle.base_url}/shutdown", timeout=2)
            except requests.RequestException:
                pass
        deadline = time.monotonic() + self.shutdown_grace
        for handle in handles:
            process = handle.process
            if process is None:
                continue
            while process.poll() is None and time.monotonic() < deadline:
                time.sleep(0.05)
            if process.poll() is None:
                log.warning("executor %s (%s) ignored shutdown; killing",
                            handle.session_id, handle.env)
                process.kill()
                process.wait(timeout=5)
            handle.dead = True
            for stream in (process.stdout, process.stderr):
                if stream is not None:
                    stream.close()

    # --- plan execution ---------------------------------------------------------

    def run_plan(self, graph: DependencyGraph, plan: ComputationPlan,
                 manifest: Manifest) -> RunReport:
        report = RunReport()
        if plan.empty:
            return report
        needed_envs = set()
        for uri in plan.nodes():
            descriptor = graph.descriptor(uri)
            assert descriptor is not None
            needed_envs.add(descriptor.env)
        missing = sorted(env for env in needed_envs if env not in self.registry)
        if missing:
            raise ExecutorLaunchError(f"no environment entry for: {', '.join(missing)}")

        state = _RunState(self, graph, manifest, report, plan)
        try:
            for batch in plan.batches:
                descriptors: dict[str, SourceDescriptor] = {}
                for uri in batch:
                    descriptor = graph.descriptor(uri)
                    assert descriptor is not None
                    descriptors.setdefault(descriptor.key, descriptor)
                runnable = []
                for d in descriptors.values():
                    if state.is_skipped(d):
                        state.mark_skipped(d)
                    else:
                        runnable.append(d)
                if not runnable:
                    continue
                if len(runnable) == 1:
                    state.execute(runnable[0])
                else:
                    with ThreadPoolExecutor(max_workers=min(self.jobs, len(runnable))) as pool:
                        for future in [pool.submit(state.execute, d) for d in runnable]:
                            future.result()
        finally:
            state.cleanup()
            self.shutdown_all()
        return report

    def _persist(self, manifest: Manifest) -> None:
        self.project.write_manifest(manifest.to_bytes())


class _RunState:
    """Mutable state of one run: temp values, handles, failure propagation."""

    def __init__(self, scheduler: Scheduler, graph: DependencyGraph,
                 manifest: Manifest, report: RunReport, plan: ComputationPlan):
        self.scheduler = scheduler
        self.graph = graph
        self.manifest = manifest
        self.report = report
        self.plan_nodes = plan.nodes()
        self.temp_dir = f"{PROV_DIR}/tmp/{uuid.uuid4().hex[:12]}"
        self.skipped: set[str] = set()
        self.func_values: dict[str, tuple[ExecutorHandle, str]] = {}
        self.group_of: dict[str, str] = self._func_groups(graph)
        self.group_executor: dict[str, ExecutorHandle] = {}
        self._lock = threading.Lock()
        self._nostore_consumers = self._nostore_refcounts(graph)

    @staticmethod
    def _func_groups(graph: DependencyGraph) -> dict[str, str]:
        # Function values only live inside the session that minted them, so
        # every descriptor connected through FUNC references shares one
        # executor (union-find over FUNC producer/consumer pairs).
        parent: dict[str, str] = {}

        def find(key: str) -> str:
            parent.setdefault(key, key)
            root = key
            while parent[root] != root:
                root = parent[root]
            while parent[key] != root:
                parent[key], key = root, parent[key]
            return root

        for d in graph.source_set.entries:
            for param in d.uri_params():
                if param.format is not DataFormat.FUNC:
                    continue
                for source in graph.param_sources(d, param):
                    producer = graph.descriptor(source)
                    if producer is not None:
                        parent[find(d.key)] = find(producer.key)
        return {key: find(key) for key in list(parent)}

    def _nostore_refcounts(self, graph: DependencyGraph) -> dict[str, set[str]]:
        consumers: dict[str, set[str]] = {}
        for uri in self.plan_nodes:
            descriptor = graph.descriptor(uri)
            assert descriptor is not None
            for param in descriptor.uri_params():
                if param.format is DataFormat.FUNC:
                    continue
                for source in graph.param_sources(descriptor, param):
                    producer = graph.descriptor(source)
                    if producer is not None and not producer.stored:
                        consumers.setdefault(source, set()).add(descriptor.key)
        return consumers

    def is_skipped(self, descriptor: SourceDescriptor) -> bool:
        with self._lock:
            return any(uri in self.skipped for uri in descriptor.outputs)

    def mark_skipped(self, descriptor: SourceDescriptor) -> None:
        with self.scheduler._report_lock:
            for uri in descriptor.outputs:
                if uri in self.plan_nodes:
                    self.report.nodes[uri] = NodeReport(outcome=OUTCOME_SKIPPED)

    def _fail(self, descriptor: SourceDescriptor, failure: Exception,
              session: str) -> None:
        if isinstance(failure, ExecutorFailure):
            error, excerpt = str(failure), failure.log
        else:
            error, excerpt = f"{type(failure).__name__}: {failure}", ""
        with self.scheduler._report_lock:
            for uri in descriptor.outputs:
                if uri in self.plan_nodes:
                    self.report.nodes[uri] = NodeReport(
                        outcome=OUTCOME_FAILED, session=session, log=excerpt,
                        error=error)
        with self._lock:
            stack = list(descriptor.outputs)
            while stack:
                node = stack.pop()
                for child in self.graph.children.get(node, ()):
                    if child in self.plan_nodes and child not in self.skipped:
                        self.skipped.add(child)
                        stack.append(child)

    # --- argument materialization ----------------------------------------------

    def _read_source(self, uri: str) -> bytes:
        producer = self.graph.descriptor(uri)
        if producer is not None and not producer.stored:
            return self.scheduler.project.tree.read(f"{self.temp_dir}/{uri}")
        return self.scheduler.project.tree.read(uri)

    def _build_params(self, descriptor: SourceDescriptor
                      ) -> tuple[list[ParamPayload], dict[str, str],
                                 ExecutorHandle | None, ParameterSpec | None]:
        payloads: list[ParamPayload] = []
        digests: dict[str, str] = {}
        pinned: ExecutorHandle | None = None
        parallel_param: ParameterSpec | None = None
        for name in sorted(descriptor.params):
            param = descriptor.params[name]
            if isinstance(param.binding, UriRef):
                sources = self.graph.param_sources(descriptor, param)
                if param.format is DataFormat.FUNC:
                    handle_executor, handle_id = self._func_value(sources[0])
                    if pinned is not None and pinned is not handle_executor:
                        raise CrossExecutorFunc(
                            f"{descriptor.key} consumes function values from two "
                            f"different executor sessions")
                    pinned = handle_executor
                    payloads.append(ParamPayload(name=name, format=param.format,
                                                 func_handle=handle_id))
                    digests[name] = resolution_digest(sources)
                    continue
                payload = materialize_param(self.graph, param, sources,
                                            read=self._read_source)
                if _materializable(self.graph, sources):
                    digests[name] = digest(payload)
                else:
                    digests[name] = resolution_digest(sources)
            else:
                payload = inline_param_bytes(param)
                digests[name] = digest(payload)
            if param.parallel and param.format is DataFormat.JSONL:
                parallel_param = param
            payloads.append(ParamPayload(name=name, format=param.format,
                                         payload=payload))
        return payloads, digests, pinned, parallel_param

    def _func_value(self, uri: str) -> tuple[ExecutorHandle, str]:
        with self._lock:
            if uri not in self.func_values:
                raise CrossExecutorFunc(
                    f"function value {uri!r} was not produced in this run")
            return self.func_values[uri]

    # --- node execution -------------------------------------------------------------

    def execute(self, descriptor: SourceDescriptor) -> None:
        try:
            self._execute(descriptor)
        except (ExecutorLaunchError, IntegrityError):
            raise
        except (ExecutorFailure, ReprodocError) as failure:
            self._fail(descriptor, failure, session="")

    def _execute(self, descriptor: SourceDescriptor) -> None:
        payloads, digests, pinned, parallel_param = self._build_params(descriptor)
        group = self.group_of.get(descriptor.key)
        if pinned is None and group is not None:
            with self._lock:
                pinned = self.group_executor.get(group)
        pool = self.scheduler._pool
        handle = pool.acquire(descriptor.env, pinned=pinned)
        if group is not None:
            with self._lock:
                self.group_executor.setdefault(group, handle)
        started = time.monotonic()
        try:
            splittable = (
                parallel_param is not None
                and descriptor.format is DataFormat.JSONL
                and len(descriptor.outputs) == 1
                and sum(1 for p in descriptor.params.values() if p.parallel) == 1)
            if parallel_param is not None and not splittable:
                log.warning("%s: parallel flag ignored (needs a single JSONL output)",
                            descriptor.key)
            if splittable:
                result = self._compute_split(descriptor, payloads, parallel_param,
                                             handle, pool)
            else:
                result = self._compute_once(descriptor, payloads, handle)
        except ExecutorFailure as failure:
            pool.release(handle)
            self._fail(descriptor, failure, session=handle.session_id)
            return
        except requests.RequestException as failure:
            pool.release(handle, dead=True)
            self._fail(descriptor, failure, session=handle.session_id)
            return
        else:
            pool.release(handle)
        wall_ms = int((time.monotonic() - started) * 1000)

        if len(result.results) != len(descriptor.outputs):
            raise IntegrityError(
                f"{descriptor.key}: executor returned {len(result.results)} results "
                f"for {len(descriptor.outputs)} outputs")

        tree = self.scheduler.project.tree
        output_digests: list[str | None] = []
        for uri, entry in zip(descriptor.outputs, result.results):
            if descriptor.format is DataFormat.FUNC:
                if entry.func_handle is None:
                    raise IntegrityError(f"{uri}: expected a function handle result")
                with self._lock:
                    self.func_values[uri] = (handle, entry.func_handle)
                output_digests.append(None)
                continue
            if entry.payload is None:
                raise IntegrityError(f"{uri}: expected payload bytes, got a handle")
            if descriptor.stored:
                tree.write(uri, entry.payload)
                output_digests.append(digest(entry.payload))
            else:
                tree.write(f"{self.temp_dir}/{uri}", entry.payload)
                output_digests.append(None)

        with self.scheduler._manifest_lock:
            for uri, output_digest in zip(descriptor.outputs, output_digests):
                self.manifest.record(uri, digests, code_digest(descriptor),
                                     output_digest)
            self.scheduler._persist(self.manifest)

        with self.scheduler._report_lock:
            for uri in descriptor.outputs:
                if uri in self.plan_nodes:
                    self.report.nodes[uri] = NodeReport(
                        outcome=OUTCOME_OK, wall_ms=wall_ms,
                        session=handle.session_id, log=result.log)
        self._release_nostore_inputs(descriptor)

    def _compute_once(self, descriptor: SourceDescriptor,
                      payloads: list[ParamPayload],
                      handle: ExecutorHandle) -> ComputeResult:
        request = ComputeRequest(
            outputs=descriptor.outputs, format=descriptor.format,
            func=descriptor.func, code=descriptor.code, params=tuple(payloads))
        status, body = handle.compute(request.to_bytes(), self.scheduler.compute_timeout)
        if status != 200:
            raise protocol.parse_error(status, body)
        return ComputeResult.from_wire(body)

    def _compute_split(self, descriptor: SourceDescriptor,
                       payloads: list[ParamPayload], parallel_param: ParameterSpec,
                       first: ExecutorHandle, pool: _ExecutorPool) -> ComputeResult:
        """Split a parallel JSONL input into contiguous chunks, compute each, and
        concatenate chunk results in order (the function-author contract)."""
        split_index = next(i for i, p in enumerate(payloads)
                           if p.name == parallel_param.name)
        rows = decode(payloads[split_index].payload, DataFormat.JSONL)
        chunks = max(1, min(self.scheduler.registry.limit(descriptor.env),
                            self.scheduler.jobs, len(rows)))
        if chunks == 1:
            return self._compute_once(descriptor, payloads, first)
        size = (len(rows) + chunks - 1) // chunks
        pieces = [rows[i:i + size] for i in range(0, len(rows), size)]

        def run_chunk(index: int, piece: list[Any]) -> ComputeResult:
            chunk_payloads = list(payloads)
            chunk_payloads[split_index] = ParamPayload(
                name=parallel_param.name, format=DataFormat.JSONL,
                payload=encode(piece, DataFormat.JSONL))
            handle = first if index == 0 else pool.acquire(descriptor.env)
            try:
                return self._compute_once(descriptor, chunk_payloads, handle)
            finally:
                if handle is not first:
                    pool.release(handle)

        with ThreadPoolExecutor(max_workers=len(pieces)) as workers:
            results = [f.result() for f in
                       [workers.submit(run_chunk, i, piece)
                        for i, piece in enumerate(pieces)]]
        return ComputeResult(
            results=(ResultEntry(payload=b"".join(r.results[0].payload or b""
                                                  for r in results)),),
            wall_ms=sum(r.wall_ms for r in results),
            log="".join(r.log for r in results))

    def _release_nostore_inputs(self, descriptor: SourceDescriptor) -> None:
        with self._lock:
            finished = []
            for source, consumers in self._nostore_consumers.items():
                consumers.discard(descriptor.key)
                if not consumers:
                    finished.append(source)
            for source in finished:
                del self._nostore_consumers[source]
                self.scheduler.project.tree.delete(f"{self.temp_dir}/{source}")

    def cleanup(self) -> None:
        shutil.rmtree(self.scheduler.project.root / self.temp_dir, ignore_errors=True)
