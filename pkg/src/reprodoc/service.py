"""Project HTTP service: static files, authenticated editing, run triggering.

A published article is just static files, so GET serves the project folder
directly (never anything outside it). Pre-publication, a bearer token with
write scope unlocks in-place file editing (PUT) and computation triggering
(POST /api/compute); `published` mode disables both regardless of token.
One run is active at a time; its progress is visible at /api/runs/{id}.
"""

from __future__ import annotations

import json
import threading
import urllib.parse
import uuid
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any

from .errors import ReprodocError, UnknownTarget
from .formats import canonical_json
from .graph import Manifest, build_graph, plan
from .descriptors import parse_sources
from .project import Project
from .scheduler import EnvironmentRegistry, RunReport, Scheduler

MEDIA_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".htm": "text/html; charset=utf-8",
    ".json": "application/json",
    ".jsonl": "application/x-ndjson",
    ".csv": "text/csv; charset=utf-8",
    ".svg": "image/svg+xml",
    ".png": "image/png",
    ".jpg": "image/jpeg",
    ".jpeg": "image/jpeg",
    ".gif": "image/gif",
    ".txt": "text/plain; charset=utf-8",
    ".bib": "text/plain; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".mjs": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
}
_DEFAULT_MEDIA = "application/octet-stream"


def media_type(path: str) -> str:
    dot = path.rfind(".")
    return MEDIA_TYPES.get(path[dot:].lower(), _DEFAULT_MEDIA) if dot >= 0 else _DEFAULT_MEDIA


def safe_project_path(raw_path: str) -> str | None:
    """Normalize a URL path to a project-relative file path, or None if it
    tries to escape the project root."""
    path = urllib.parse.unquote(urllib.parse.urlsplit(raw_path).path)
    if "\x00" in path or "\\" in path:
        return None
    segments = []
    for segment in path.split("/"):
        if segment in ("", "."):
            continue
        if segment == ".." or segment.startswith(".."):
            return None
        segments.append(segment)
    return "/".join(segments)


class _Run:
    def __init__(self, run_id: str, scheduler: Scheduler, report: RunReport):
        self.run_id = run_id
        self.scheduler = scheduler
        self.report = report
        self.state = "running"
        self.error: str | None = None

    def to_json(self) -> dict[str, Any]:
        with self.scheduler._report_lock:
            report = self.report.to_json()
        out: dict[str, Any] = {"id": self.run_id, "state": self.state, "report": report}
        if self.error:
            out["error"] = self.error
        return out


class ProjectService:
    def __init__(self, project: Project, *, write_token: str | None = None,
                 read_token: str | None = None, published: bool = False,
                 jobs: int | None = None):
        self.project = project
        self.write_token = write_token
        self.read_token = read_token
        self.published = published
        self.jobs = jobs
        self.runs: dict[str, _Run] = {}
        self._run_lock = threading.Lock()
        self._active: _Run | None = None

    # --- run management -------------------------------------------------------

    def trigger_run(self, targets: list[str] | None, force: bool) -> str:
        source_set = parse_sources(self.project.read_sources())
        if targets:
            known = set(source_set.outputs) | set(self.project.tree.paths())
            unknown = [t for t in targets if t not in known]
            if unknown:
                raise UnknownTarget(f"unknown target(s): {', '.join(sorted(unknown))}")
        registry = EnvironmentRegistry.from_bytes(self.project.read_environments())
        with self._run_lock:
            if self._active is not None and self._active.state == "running":
                raise RunActive(self._active.run_id)
            run_id = uuid.uuid4().hex[:12]
            scheduler = Scheduler(self.project, registry, jobs=self.jobs)
            run = _Run(run_id, scheduler, RunReport())
            self.runs[run_id] = run
            self._active = run
        thread = threading.Thread(target=self._execute, args=(run, targets, force),
                                  daemon=True)
        thread.start()
        return run_id

    def _execute(self, run: _Run, targets: list[str] | None, force: bool) -> None:
        try:
            source_set = parse_sources(self.project.read_sources())
            graph = build_graph(source_set, self.project.tree)
            manifest = Manifest.from_bytes(self.project.read_manifest())
            computation = plan(graph, manifest, targets or None, force=force)
            report = run.scheduler.run_plan(graph, computation, manifest)
            with self._run_lock:
                run.report.nodes.update(report.nodes)
                run.state = "done"
        except Exception as exc:
            with self._run_lock:
                run.state = "done"
                run.error = f"{type(exc).__name__}: {exc}"

    # --- server ------------------------------------------------------------------

    def serve(self, host: str = "127.0.0.1", port: int = 8000) -> "ServiceServer":
        server = ServiceServer(self, host, port)
        return server


class RunActive(ReprodocError):
    """A run is already in progress; only one may be active."""


class _ServiceHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    @property
    def service(self) -> ProjectService:
        return self.server.service

    def _respond(self, status: int, body: bytes, content_type: str) -> None:
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        if self.command != "HEAD":
            self.wfile.write(body)

    def _json(self, status: int, payload: dict[str, Any]) -> None:
        self._respond(status, canonical_json(payload), "application/json")

    def _error(self, status: int, message: str) -> None:
        self._json(status, {"error": message})

    def _bearer(self) -> str | None:
        header = self.headers.get("Authorization", "")
        if header.startswith("Bearer "):
            return header[len("Bearer "):].strip()
        return None

    def _check_read(self) -> bool:
        token = self.service.read_token
        if token is None:
            return True
        if self._bearer() != token:
            self._error(401, "a read token is required")
            return False
        return True

    def _check_write(self) -> bool:
        if self.service.published:
            self._error(403, "this deployment is published and read-only")
            return False
        token = self.service.write_token
        if token is None or self._bearer() != token:
            self._error(401, "a valid write token is required")
            return False
        return True

    def _body(self) -> bytes:
        length = int(self.headers.get("Content-Length", 0))
        return self.rfile.read(length) if length else b""

    # --- routes ----------------------------------------------------------------

    def do_GET(self):
        if self.path.startswith("/api/runs/"):
            if not self._check_read():
                return
            run_id = self.path[len("/api/runs/"):]
            run = self.service.runs.get(run_id)
            if run is None:
                self._error(404, f"no run {run_id!r}")
            else:
                self._json(200, run.to_json())
            return
        if not self._check_read():
            return
        rel = safe_project_path(self.path)
        if rel is None:
            self._error(403, "path escapes the project root")
            return
        if rel == "":
            rel = "article.html"
        root = self.service.project.root
        target = root / rel
        try:
            resolved = target.resolve()
            resolved.relative_to(root)
        except (ValueError, OSError):
            self._error(403, "path escapes the project root")
            return
        if not resolved.is_file():
            self._error(404, f"no file {rel!r}")
            return
        self._respond(200, resolved.read_bytes(), media_type(rel))

    do_HEAD = do_GET

    def do_PUT(self):
        if not self._check_write():
            return
        rel = safe_project_path(self.path)
        if rel is None or rel == "" or rel.startswith("api/"):
            self._error(403, "not a writable project path")
            return
        try:
            self.service.project.tree.write(rel, self._body())
        except ReprodocError as exc:
            self._error(403, str(exc))
            return
        self._json(200, {"ok": True, "path": rel})

    def do_POST(self):
        if self.path != "/api/compute":
            self._error(404, self.path)
            return
        if not self._check_write():
            return
        try:
            body = json.loads(self._body() or b"{}")
            targets = body.get("targets") or []
            force = bool(body.get("force", False))
            if not isinstance(targets, list) or not all(isinstance(t, str) for t in targets):
                raise ValueError("targets must be a list of uris")
        except ValueError as exc:
            self._error(400, f"bad request body: {exc}")
            return
        try:
            run_id = self.service.trigger_run(targets, force)
        except RunActive as exc:
            self._error(409, f"a run is already active: {exc}")
            return
        except UnknownTarget as exc:
            self._error(400, str(exc))
            return
        except ReprodocError as exc:
            self._error(400, str(exc))
            return
        self._json(200, {"run_id": run_id})

    def log_message(self, fmt, *args):
        pass  # request logging is the deployment proxy's job


class ServiceServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, service: ProjectService, host: str, port: int):
        super().__init__((host, port), _ServiceHandler)
        self.service = service
        self._thread: threading.Thread | None = None

    @property
    def base_url(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> None:
        self._thread = threading.Thread(target=self.serve_forever,
                                        kwargs={"poll_interval": 0.05}, daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self.shutdown()
        self.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)
