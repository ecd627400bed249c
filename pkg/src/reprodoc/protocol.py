"""HTTP wire contract between the scheduler and executors.

One round trip per computation. The request carries the materialized
canonical argument bytes inline (base64 for BIN) — executors never read the
project filesystem. The response carries one entry per requested output,
positionally: result entry i holds the bytes (or function handle) for
request output i.

    POST /compute
      {"outputs": [...], "format": "JSON", "func": "...", "code": null,
       "params": [{"name": "xs", "format": "JSONL", "payload": "...",
                   "payload_encoding": "utf8"|"base64", "func_handle": null}]}
    -> {"results": [{"payload": "...", "payload_encoding": "utf8"|"base64",
                     "func_handle": null}],
        "wall_ms": N, "log": "..."}

    GET  /health   -> {"status": "ok", "session_id": "...", "environment_id": "..."}
    POST /shutdown -> {"ok": true}, then the server stops

Errors: 400 unknown-function / bad-param, 422 function-raised (message and
log carried in the body), 410 stale-func-handle. Error bodies are
{"error": <kind>, "message": "...", "log": "..."}.
"""

from __future__ import annotations

import base64
from dataclasses import dataclass, field
from typing import Any

from .errors import ExecutorProtocolError
from .formats import DataFormat, canonical_json

ERROR_UNKNOWN_FUNCTION = "unknown-function"
ERROR_BAD_PARAM = "bad-param"
ERROR_FUNCTION_RAISED = "function-raised"
ERROR_STALE_HANDLE = "stale-func-handle"

STATUS_FOR_ERROR = {
    ERROR_UNKNOWN_FUNCTION: 400,
    ERROR_BAD_PARAM: 400,
    ERROR_FUNCTION_RAISED: 422,
    ERROR_STALE_HANDLE: 410,
}


def _encode_payload(data: bytes, fmt: DataFormat) -> tuple[str, str]:
    if fmt is DataFormat.BIN:
        return base64.b64encode(data).decode("ascii"), "base64"
    return data.decode("utf-8"), "utf8"


def _decode_payload(payload: str, encoding: str) -> bytes:
    if encoding == "base64":
        return base64.b64decode(payload.encode("ascii"), validate=True)
    if encoding == "utf8":
        return payload.encode("utf-8")
    raise ExecutorProtocolError(f"unknown payload encoding {encoding!r}")


@dataclass(frozen=True)
class ParamPayload:
    """One argument: either materialized bytes or a function handle id."""

    name: str
    format: DataFormat
    payload: bytes | None = None
    func_handle: str | None = None

    def __post_init__(self):
        if (self.payload is None) == (self.func_handle is None):
            raise ExecutorProtocolError(
                f"param {self.name!r}: exactly one of payload/func_handle required")

    def to_wire(self) -> dict[str, Any]:
        if self.func_handle is not None:
            return {"name": self.name, "format": self.format.value,
                    "payload": None, "payload_encoding": None,
                    "func_handle": self.func_handle}
        payload, encoding = _encode_payload(self.payload, self.format)
        return {"name": self.name, "format": self.format.value,
                "payload": payload, "payload_encoding": encoding,
                "func_handle": None}

    @classmethod
    def from_wire(cls, raw: dict[str, Any]) -> "ParamPayload":
        try:
            fmt = DataFormat.parse(raw["format"])
            name = raw["name"]
            handle = raw.get("func_handle")
            if handle is not None:
                return cls(name=name, format=fmt, func_handle=handle)
            return cls(name=name, format=fmt,
                       payload=_decode_payload(raw["payload"], raw["payload_encoding"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ExecutorProtocolError(f"malformed param entry: {exc}")


@dataclass(frozen=True)
class ComputeRequest:
    outputs: tuple[str, ...]
    format: DataFormat
    func: str
    params: tuple[ParamPayload, ...]
    code: str | None = None

    def to_bytes(self) -> bytes:
        return canonical_json({
            "outputs": list(self.outputs),
            "format": self.format.value,
            "func": self.func,
            "code": self.code,
            "params": [p.to_wire() for p in self.params],
        })

    @classmethod
    def from_wire(cls, raw: Any) -> "ComputeRequest":
        if not isinstance(raw, dict):
            raise ExecutorProtocolError("compute request must be a JSON object")
        try:
            outputs = tuple(raw["outputs"])
            fmt = DataFormat.parse(raw["format"])
            func = raw["func"]
            code = raw.get("code")
            params = tuple(ParamPayload.from_wire(p) for p in raw["params"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ExecutorProtocolError(f"malformed compute request: {exc}")
        if not outputs or not all(isinstance(o, str) for o in outputs):
            raise ExecutorProtocolError("compute request needs a non-empty output uri list")
        return cls(outputs=outputs, format=fmt, func=func, params=params, code=code)


@dataclass(frozen=True)
class ResultEntry:
    payload: bytes | None = None
    func_handle: str | None = None

    def to_wire(self, fmt: DataFormat) -> dict[str, Any]:
        if self.func_handle is not None:
            return {"payload": None, "payload_encoding": None,
                    "func_handle": self.func_handle}
        payload, encoding = _encode_payload(self.payload, fmt)
        return {"payload": payload, "payload_encoding": encoding, "func_handle": None}

    @classmethod
    def from_wire(cls, raw: dict[str, Any]) -> "ResultEntry":
        try:
            handle = raw.get("func_handle")
            if handle is not None:
                return cls(func_handle=handle)
            return cls(payload=_decode_payload(raw["payload"], raw["payload_encoding"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ExecutorProtocolError(f"malformed result entry: {exc}")


@dataclass(frozen=True)
class ComputeResult:
    results: tuple[ResultEntry, ...]
    wall_ms: int
    log: str = ""

    def to_bytes(self, fmt: DataFormat) -> bytes:
        return canonical_json({
            "results": [entry.to_wire(fmt) for entry in self.results],
            "wall_ms": self.wall_ms,
            "log": self.log,
        })

    @classmethod
    def from_wire(cls, raw: Any) -> "ComputeResult":
        if not isinstance(raw, dict) or "results" not in raw:
            raise ExecutorProtocolError("compute response must carry 'results'")
        entries = tuple(ResultEntry.from_wire(e) for e in raw["results"])
        return cls(results=entries, wall_ms=int(raw.get("wall_ms", 0)),
                   log=str(raw.get("log", "")))


@dataclass(frozen=True)
class ExecutorFailure(Exception):
    """A non-2xx /compute response, decoded."""

    status: int
    error: str
    message: str
    log: str = ""

    def __str__(self) -> str:
        return f"executor error {self.status} {self.error}: {self.message}"


def error_body(error: str, message: str, log: str = "") -> bytes:
    return canonical_json({"error": error, "message": message, "log": log})


def parse_error(status: int, raw: Any) -> ExecutorFailure:
    if isinstance(raw, dict):
        return ExecutorFailure(status=status, error=str(raw.get("error", "unknown")),
                               message=str(raw.get("message", "")),
                               log=str(raw.get("log", "")))
    return ExecutorFailure(status=status, error="unknown", message=repr(raw))
