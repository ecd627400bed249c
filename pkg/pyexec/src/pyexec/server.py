"""Python executor server.

Resolves function URIs of the form `pkg.mod.attr` against the configured
search path, supports inline `code` (a `main` function defined in the
request, taking the declared parameters as keyword arguments), and speaks
the scheduler's compute wire protocol:

    POST /compute   {"outputs", "format", "func", "code", "params": [...]}
    GET  /health    {"status", "session_id", "environment_id"}
    POST /shutdown  {"ok": true} and the process exits

One compute runs at a time; extra requests queue. Function values are
session-scoped handles, invalidated on shutdown. Inline code is executed
with no sandbox: projects are trusted by whoever runs their executors.
"""

from __future__ import annotations

import base64
import contextlib
import importlib
import inspect
import io
import json
import sys
import threading
import time
import traceback
import uuid
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any

from .encoding import FORMATS, FormatError, decode_payload, encode_value

ERROR_UNKNOWN_FUNCTION = "unknown-function"
ERROR_BAD_PARAM = "bad-param"
ERROR_FUNCTION_RAISED = "function-raised"
ERROR_STALE_HANDLE = "stale-func-handle"

_STATUS = {
    ERROR_UNKNOWN_FUNCTION: 400,
    ERROR_BAD_PARAM: 400,
    ERROR_FUNCTION_RAISED: 422,
    ERROR_STALE_HANDLE: 410,
}


class ComputeError(Exception):
    def __init__(self, error: str, message: str, log: str = ""):
        super().__init__(message)
        self.error = error
        self.message = message
        self.log = log

    def body(self) -> bytes:
        return _json_bytes({"error": self.error, "message": self.message,
                            "log": self.log})

    @property
    def status(self) -> int:
        return _STATUS.get(self.error, 400)


def _json_bytes(value: Any) -> bytes:
    return json.dumps(value, sort_keys=True, separators=(",", ":"),
                      ensure_ascii=False).encode("utf-8")


def resolve(func_uri: str) -> Any:
    """`pkg.mod.attr` to a callable, imported from the configured path."""
    if "." not in func_uri:
        raise ComputeError(ERROR_UNKNOWN_FUNCTION,
                           f"function uri {func_uri!r} has no module part")
    module_name, attr = func_uri.rsplit(".", 1)
    try:
        module = importlib.import_module(module_name)
    except ImportError as exc:
        raise ComputeError(ERROR_UNKNOWN_FUNCTION,
                           f"cannot import module {module_name!r}: {exc}")
    target = getattr(module, attr, None)
    if target is None:
        raise ComputeError(ERROR_UNKNOWN_FUNCTION,
                           f"module {module_name!r} has no attribute {attr!r}")
    if not callable(target):
        raise ComputeError(ERROR_UNKNOWN_FUNCTION,
                           f"{func_uri} is not callable")
    return target


def compile_inline(code: str) -> Any:
    """Inline code must define `main`; it is called with the request params."""
    namespace: dict[str, Any] = {}
    try:
        exec(compile(code, "<inline code>", "exec"), namespace)
    except SyntaxError as exc:
        raise ComputeError(ERROR_FUNCTION_RAISED,
                           f"inline code does not compile: {exc}",
                           traceback.format_exc())
    except Exception as exc:
        raise ComputeError(ERROR_FUNCTION_RAISED,
                           f"inline code failed at import time: {exc}",
                           traceback.format_exc())
    main = namespace.get("main")
    if not callable(main):
        raise ComputeError(ERROR_FUNCTION_RAISED,
                           "inline code must define a function named 'main'")
    return main


class ExecutorState:
    def __init__(self, environment_id: str):
        self.environment_id = environment_id
        self.session_id = uuid.uuid4().hex
        self.handles: dict[str, Any] = {}
        self._seq = 0
        self.lock = threading.Lock()

    def mint(self, value: Any) -> str:
        self._seq += 1
        handle = f"fn-{self.session_id[:8]}-{self._seq}"
        self.handles[handle] = value
        return handle


def _parse_params(raw_params: Any, state: ExecutorState) -> dict[str, Any]:
    if not isinstance(raw_params, list):
        raise ComputeError(ERROR_BAD_PARAM, "'params' must be a list")
    kwargs: dict[str, Any] = {}
    for raw in raw_params:
        try:
            name = raw["name"]
            fmt = raw["format"]
            handle = raw.get("func_handle")
        except (TypeError, KeyError) as exc:
            raise ComputeError(ERROR_BAD_PARAM, f"malformed param entry: {exc}")
        if fmt not in FORMATS:
            raise ComputeError(ERROR_BAD_PARAM, f"unknown format {fmt!r}")
        if not isinstance(name, str) or not name.isidentifier():
            raise ComputeError(ERROR_BAD_PARAM,
                               f"parameter name {name!r} is not bindable")
        if name in kwargs:
            raise ComputeError(ERROR_BAD_PARAM, f"duplicate parameter {name!r}")
        if handle is not None:
            if handle not in state.handles:
                raise ComputeError(ERROR_STALE_HANDLE,
                                   f"handle {handle!r} is not valid in session "
                                   f"{state.session_id}")
            kwargs[name] = state.handles[handle]
            continue
        payload = raw.get("payload")
        encoding = raw.get("payload_encoding")
        if payload is None:
            raise ComputeError(ERROR_BAD_PARAM,
                               f"parameter {name!r} has neither payload nor handle")
        data: bytes | str
        if encoding == "base64":
            try:
                data = base64.b64decode(payload.encode("ascii"), validate=True)
            except Exception as exc:
                raise ComputeError(ERROR_BAD_PARAM, f"{name}: bad base64: {exc}")
        elif encoding == "utf8":
            data = payload  # already text; avoid a decode round trip
        else:
            raise ComputeError(ERROR_BAD_PARAM,
                               f"{name}: unknown payload encoding {encoding!r}")
        try:
            kwargs[name] = decode_payload(data, fmt)
        except FormatError as exc:
            raise ComputeError(ERROR_BAD_PARAM, f"{name}: {exc}")
    return kwargs


def handle_compute(body: bytes, state: ExecutorState) -> tuple[int, bytes]:
    with state.lock:  # one in-flight compute
        try:
            return 200, _compute(body, state)
        except ComputeError as exc:
            return exc.status, exc.body()


def _compute(body: bytes, state: ExecutorState) -> bytes:
    try:
        request = json.loads(body.decode("utf-8"))
        outputs = request["outputs"]
        out_format = request["format"]
        func_uri = request["func"]
        code = request.get("code")
        raw_params = request["params"]
    except (ValueError, KeyError, TypeError) as exc:
        raise ComputeError(ERROR_BAD_PARAM, f"malformed compute request: {exc}")
    if not isinstance(outputs, list) or not outputs:
        raise ComputeError(ERROR_BAD_PARAM, "outputs must be a non-empty list")
    if out_format not in FORMATS:
        raise ComputeError(ERROR_BAD_PARAM, f"unknown output format {out_format!r}")

    kwargs = _parse_params(raw_params, state)
    target = compile_inline(code) if code is not None else resolve(func_uri)
    try:
        inspect.signature(target).bind(**kwargs)
    except TypeError as exc:
        raise ComputeError(ERROR_BAD_PARAM,
                           f"parameters do not bind to {func_uri}: {exc}")
    except ValueError:
        pass  # some callables have no introspectable signature

    log = io.StringIO()
    started = time.monotonic()
    try:
        with contextlib.redirect_stdout(log):
            value = target(**kwargs)
    except FormatError as exc:
        # a lazily decoded payload turned out malformed mid-iteration
        raise ComputeError(ERROR_BAD_PARAM, str(exc), log.getvalue())
    except Exception as exc:
        log.write(traceback.format_exc())
        raise ComputeError(ERROR_FUNCTION_RAISED, f"{type(exc).__name__}: {exc}",
                           log.getvalue())
    wall_ms = int((time.monotonic() - started) * 1000)

    values = [value] if len(outputs) == 1 else value
    if len(outputs) > 1 and (not isinstance(values, (list, tuple))
                             or len(values) != len(outputs)):
        raise ComputeError(ERROR_FUNCTION_RAISED,
                           f"function must return {len(outputs)} values, one per output",
                           log.getvalue())
    results = []
    for item in values:
        if out_format == "FUNC":
            if not callable(item):
                raise ComputeError(ERROR_FUNCTION_RAISED,
                                   "FUNC output requires a callable return value",
                                   log.getvalue())
            results.append({"payload": None, "payload_encoding": None,
                            "func_handle": state.mint(item)})
            continue
        try:
            data = encode_value(item, out_format)
        except FormatError as exc:
            raise ComputeError(ERROR_FUNCTION_RAISED, str(exc), log.getvalue())
        if out_format == "BIN":
            results.append({"payload": base64.b64encode(data).decode("ascii"),
                            "payload_encoding": "base64", "func_handle": None})
        else:
            results.append({"payload": data.decode("utf-8"),
                            "payload_encoding": "utf8", "func_handle": None})
    return _json_bytes({"results": results, "wall_ms": wall_ms,
                        "log": log.getvalue()})


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def _respond(self, status: int, body: bytes) -> None:
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        state = self.server.state
        if self.path == "/health":
            self._respond(200, _json_bytes({
                "status": "ok", "session_id": state.session_id,
                "environment_id": state.environment_id}))
        else:
            self._respond(404, _json_bytes({"error": "not-found"}))

    def do_POST(self):
        state = self.server.state
        length = int(self.headers.get("Content-Length", 0))
        body = self.rfile.read(length) if length else b""
        if self.path == "/compute":
            status, response = handle_compute(body, state)
            self._respond(status, response)
        elif self.path == "/shutdown":
            state.handles.clear()
            self._respond(200, _json_bytes({"ok": True}))
            threading.Thread(target=self.server.stop, daemon=True).start()
        else:
            self._respond(404, _json_bytes({"error": "not-found"}))

    def log_request(self, code="-", size="-"):
        if isinstance(code, int) and code >= 400:
            print(f"[pyexec] {self.requestline} -> {code}", file=sys.stderr)

    def log_message(self, fmt, *args):
        print(f"[pyexec] {fmt % args}", file=sys.stderr)


class PyExecutorServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, environment_id: str, host: str = "127.0.0.1", port: int = 0):
        super().__init__((host, port), _Handler)
        self.state = ExecutorState(environment_id)

    @property
    def base_url(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}"

    def stop(self) -> None:
        self.shutdown()
        self.server_close()


def serve(environment_id: str, host: str = "127.0.0.1", port: int = 0,
          path: list[str] | None = None) -> PyExecutorServer:
    for entry in reversed(path or []):
        if entry not in sys.path:
            sys.path.insert(0, entry)
    return PyExecutorServer(environment_id, host=host, port=port)
