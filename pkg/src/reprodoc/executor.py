"""Native executor: an in-process function registry served over the wire protocol.

Functions are compiled-in registrations — inline `code` is a dynamic-language
executor feature and is rejected here. The server answers one compute at a
time; concurrent requests queue on the compute lock while /health stays
responsive. Runnable standalone for the scheduler's launch contract:

    python -m reprodoc.executor <environment-id> [--port P] [--functions MOD]

prints its base URL as the first stdout line and serves until /shutdown.
"""

from __future__ import annotations

import argparse
import contextlib
import importlib
import io
import json
import sys
import threading
import time
import traceback
import uuid
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Callable

from . import protocol
from .errors import DuplicateRegistration, EncodeError, ExecutorProtocolError, ReprodocError
from .formats import DataFormat, Table, canonical_json, decode, encode
from .protocol import (ComputeRequest, ComputeResult, ResultEntry,
                       error_body)


@dataclass(frozen=True)
class RegisteredFunction:
    uri: str
    params: dict[str, DataFormat]
    impl: Callable[..., Any]


class FunctionRegistry:
    """Maps function URIs to implementations with a named-parameter arity spec."""

    def __init__(self):
        self._functions: dict[str, RegisteredFunction] = {}

    def register(self, uri: str, params: dict[str, DataFormat],
                 impl: Callable[..., Any]) -> None:
        if uri in self._functions:
            raise DuplicateRegistration(f"function {uri!r} is already registered")
        self._functions[uri] = RegisteredFunction(uri=uri, params=dict(params), impl=impl)

    def lookup(self, uri: str) -> RegisteredFunction | None:
        return self._functions.get(uri)

    def uris(self) -> list[str]:
        return sorted(self._functions)


class _ComputeError(Exception):
    def __init__(self, error: str, message: str, log: str = ""):
        super().__init__(message)
        self.error = error
        self.message = message
        self.log = log


class ExecutorCore:
    """Protocol logic shared by the HTTP server and in-process tests."""

    def __init__(self, registry: FunctionRegistry, environment_id: str):
        self.registry = registry
        self.environment_id = environment_id
        self.session_id = uuid.uuid4().hex
        self._handles: dict[str, Any] = {}
        self._handle_seq = 0
        self._lock = threading.Lock()

    def health(self) -> dict[str, Any]:
        return {"status": "ok", "session_id": self.session_id,
                "environment_id": self.environment_id}

    def _mint_handle(self, value: Any) -> str:
        self._handle_seq += 1
        handle_id = f"fn-{self.session_id[:8]}-{self._handle_seq}"
        self._handles[handle_id] = value
        return handle_id

    def invalidate_handles(self) -> None:
        self._handles.clear()

    def compute(self, body: bytes) -> tuple[int, bytes]:
        """Handle one /compute body; returns (http status, response body)."""
        with self._lock:  # one in-flight compute per session
            try:
                request = ComputeRequest.from_wire(json.loads(body.decode("utf-8")))
            except (ValueError, ExecutorProtocolError) as exc:
                return 400, error_body(protocol.ERROR_BAD_PARAM, str(exc))
            try:
                result = self._run(request)
            except _ComputeError as exc:
                status = protocol.STATUS_FOR_ERROR.get(exc.error, 400)
                return status, error_body(exc.error, exc.message, exc.log)
            return 200, result.to_bytes(request.format)

    def _run(self, request: ComputeRequest) -> ComputeResult:
        if request.code is not None:
            raise _ComputeError(
                protocol.ERROR_UNKNOWN_FUNCTION,
                "the native executor runs registered functions only; inline code "
                "requires a dynamic-language executor")
        registered = self.registry.lookup(request.func)
        if registered is None:
            raise _ComputeError(protocol.ERROR_UNKNOWN_FUNCTION,
                                f"no registered function {request.func!r}")
        kwargs: dict[str, Any] = {}
        for param in request.params:
            if param.name in kwargs:
                raise _ComputeError(protocol.ERROR_BAD_PARAM,
                                    f"duplicate parameter {param.name!r}")
            if param.name not in registered.params:
                raise _ComputeError(
                    protocol.ERROR_BAD_PARAM,
                    f"{request.func} has no parameter {param.name!r} "
                    f"(expects {sorted(registered.params)})")
            expected = registered.params[param.name]
            if param.format is not expected:
                raise _ComputeError(
                    protocol.ERROR_BAD_PARAM,
                    f"parameter {param.name!r} of {request.func} is {expected.value}, "
                    f"request declares {param.format.value}")
            if param.func_handle is not None:
                if param.func_handle not in self._handles:
                    raise _ComputeError(
                        protocol.ERROR_STALE_HANDLE,
                        f"function handle {param.func_handle!r} is not valid in "
                        f"session {self.session_id}")
                kwargs[param.name] = self._handles[param.func_handle]
            else:
                try:
                    kwargs[param.name] = decode(param.payload, param.format)
                except ReprodocError as exc:
                    raise _ComputeError(protocol.ERROR_BAD_PARAM,
                                        f"parameter {param.name!r}: {exc}")
        missing = set(registered.params) - set(kwargs)
        if missing:
            raise _ComputeError(protocol.ERROR_BAD_PARAM,
                                f"missing parameter(s) {sorted(missing)} for {request.func}")

        log = io.StringIO()
        started = time.monotonic()
        try:
            with contextlib.redirect_stdout(log):
                value = registered.impl(**kwargs)
        except Exception as exc:
            log.write(traceback.format_exc())
            raise _ComputeError(protocol.ERROR_FUNCTION_RAISED,
                                f"{type(exc).__name__}: {exc}", log.getvalue())
        wall_ms = int((time.monotonic() - started) * 1000)

        if len(request.outputs) == 1:
            values = [value]
        else:
            if not isinstance(value, (list, tuple)) or len(value) != len(request.outputs):
                got = len(value) if isinstance(value, (list, tuple)) else type(value).__name__
                raise _ComputeError(
                    protocol.ERROR_FUNCTION_RAISED,
                    f"{request.func} must return {len(request.outputs)} values "
                    f"(one per output), got {got}", log.getvalue())
            values = list(value)
        entries = []
        for item in values:
            if request.format is DataFormat.FUNC:
                if not callable(item):
                    raise _ComputeError(
                        protocol.ERROR_FUNCTION_RAISED,
                        f"{request.func} declares FUNC output but returned "
                        f"{type(item).__name__}", log.getvalue())
                entries.append(ResultEntry(func_handle=self._mint_handle(item)))
            else:
                try:
                    entries.append(ResultEntry(payload=encode(item, request.format)))
                except EncodeError as exc:
                    raise _ComputeError(protocol.ERROR_FUNCTION_RAISED,
                                        f"output not encodable: {exc}", log.getvalue())
        return ComputeResult(results=tuple(entries), wall_ms=wall_ms, log=log.getvalue())


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    core: ExecutorCore  # set on the server class

    def _respond(self, status: int, body: bytes) -> None:
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _body(self) -> bytes:
        length = int(self.headers.get("Content-Length", 0))
        return self.rfile.read(length)

    def do_GET(self):
        if self.path == "/health":
            self._respond(200, canonical_json(self.server.core.health()))
        else:
            self._respond(404, error_body("not-found", self.path))

    def do_POST(self):
        core = self.server.core
        if self.path == "/compute":
            status, body = core.compute(self._body())
            self._respond(status, body)
        elif self.path == "/shutdown":
            self._body()
            core.invalidate_handles()
            self._respond(200, canonical_json({"ok": True}))
            self.server.request_stop()
        else:
            self._respond(404, error_body("not-found", self.path))

    def log_request(self, code="-", size="-"):
        if isinstance(code, int) and code >= 400:
            self.log_message('"%s" %s', self.requestline, code)

    def log_message(self, fmt, *args):
        print(f"[executor {self.server.core.environment_id}] {fmt % args}",
              file=sys.stderr)


class ExecutorServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, core: ExecutorCore, host: str = "127.0.0.1", port: int = 0):
        super().__init__((host, port), _Handler)
        self.core = core
        self._thread: threading.Thread | None = None

    @property
    def base_url(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> None:
        self._thread = threading.Thread(target=self.serve_forever,
                                        kwargs={"poll_interval": 0.05}, daemon=True)
        self._thread.start()

    def request_stop(self) -> None:
        threading.Thread(target=self._stop, daemon=True).start()

    def _stop(self) -> None:
        self.shutdown()
        self.server_close()

    def stop(self) -> None:
        self.core.invalidate_handles()
        self.shutdown()
        self.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)


# --- built-in functions ---------------------------------------------------------

def _sum_rows(xs: list[Any]) -> Any:
    total = 0
    for row in xs:
        if not isinstance(row, (int, float)) or isinstance(row, bool):
            raise ValueError(f"expected numeric rows, got {row!r}")
        total += row
    if isinstance(total, float) and total.is_integer():
        return int(total)
    return total


def _minmax(xs: list[Any]) -> tuple[Any, Any]:
    if not xs:
        raise ValueError("empty input")
    return min(xs), max(xs)


def _double_rows(xs: list[Any]) -> list[Any]:
    return [2 * row for row in xs]


def _column_values(table: Table, column: str) -> list[float]:
    try:
        index = table.header.index(column)
    except ValueError:
        raise ValueError(f"no column {column!r} in {list(table.header)}")
    return [float(row[index]) for row in table.rows]


def _sum_column(table: Table, column: str) -> Any:
    total = sum(_column_values(table, column))
    return int(total) if total.is_integer() else total


def _fit_mean(train: Table) -> Callable[..., float]:
    values = [float(row[-1]) for row in train.rows]
    if not values:
        raise ValueError("cannot fit on an empty table")
    mean = sum(values) / len(values)

    def predict(row: tuple[str, ...]) -> float:
        return mean

    return predict


def _apply_model(model: Callable[..., float], data: Table) -> list[float]:
    return [model(row) for row in data.rows]


def _bar_svg(table: Table, column: str) -> str:
    values = _column_values(table, column)
    peak = max(values) if values else 1.0
    bar_width, gap, height = 40, 10, 100
    width = len(values) * (bar_width + gap) + gap
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">']
    for i, value in enumerate(values):
        bar = round(height * value / peak) if peak else 0
        x = gap + i * (bar_width + gap)
        parts.append(f'<rect x="{x}" y="{height - bar}" width="{bar_width}" '
                     f'height="{bar}" fill="#4477aa"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _fail():
    raise RuntimeError("this fixture function always fails")


def _slow_echo(x: Any, delay: Any) -> Any:
    time.sleep(float(delay))
    return x


def builtin_registry() -> FunctionRegistry:
    registry = FunctionRegistry()
    J, L, C, T, B, F = (DataFormat.JSON, DataFormat.JSONL, DataFormat.CSV,
                        DataFormat.TXT, DataFormat.BIN, DataFormat.FUNC)
    registry.register("core.identity", {"x": J}, lambda x: x)
    registry.register("blob.identity", {"x": B}, lambda x: x)
    registry.register("text.identity", {"x": T}, lambda x: x)
    registry.register("stats.sum", {"xs": L}, _sum_rows)
    registry.register("stats.minmax", {"xs": L}, _minmax)
    registry.register("rows.double", {"xs": L}, _double_rows)
    registry.register("table.sum_column", {"table": C, "column": J}, _sum_column)
    registry.register("ml.fit", {"train": C}, _fit_mean)
    registry.register("ml.apply", {"model": F, "data": C}, _apply_model)
    registry.register("viz.bar_svg", {"table": C, "column": J}, _bar_svg)
    registry.register("fail.always", {}, _fail)
    registry.register("slow.echo", {"x": J, "delay": J}, _slow_echo)
    return registry


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description="native executor server")
    parser.add_argument("environment", help="environment identifier")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=0)
    parser.add_argument("--functions", default=None,
                        help="module providing register(registry) for extra functions")
    args = parser.parse_args(argv)
    registry = builtin_registry()
    if args.functions:
        module = importlib.import_module(args.functions)
        module.register(registry)
    server = ExecutorServer(ExecutorCore(registry, args.environment),
                            host=args.host, port=args.port)
    print(server.base_url, flush=True)
    try:
        server.serve_forever(poll_interval=0.05)
    except KeyboardInterrupt:
        pass
    return 0


if __name__ == "__main__":
    sys.exit(main())
