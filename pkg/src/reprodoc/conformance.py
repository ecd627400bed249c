"""Executor conformance suite: the behavioural contract for any executor.

Third-party executors (any language) pass this suite iff they implement the
wire envelope, error codes, and purity guarantees the scheduler relies on.
The suite only needs a base URL; the executor must provide the shared
fixture functions with these exact semantics:

    core.identity(x: JSON) -> JSON        returns x unchanged
    blob.identity(x: BIN) -> BIN          returns x unchanged
    text.identity(x: TXT) -> TXT          returns x unchanged
    stats.sum(xs: JSONL) -> JSON          numeric sum; integral results as ints
    stats.minmax(xs: JSONL) -> 2x JSON    (minimum, maximum), two outputs
    rows.double(xs: JSONL) -> JSONL       each row doubled, order kept
    table.sum_column(table: CSV, column: JSON) -> JSON
                                          column sum; integral results as ints
    ml.fit(train: CSV) -> FUNC            constant predictor: mean of last column
    ml.apply(model: FUNC, data: CSV) -> JSONL
                                          one prediction per data row
    fail.always() -> JSON                 always raises

`run_parity_session` executes a fixed scenario and returns every result's
bytes keyed by case name; running it against two executors and comparing
the maps is the digest-parity check.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, Callable

import requests

from .formats import DataFormat
from .protocol import ComputeRequest, ComputeResult, ParamPayload

HEALTH_CALLS = 100

CSV_TRAIN = b"x,y\n1,1\n2,3\n"      # last column mean = 2.0
CSV_DATA = b"x,y\n5,0\n6,0\n"       # two rows -> two predictions
CSV_NUMBERS = b"value\n1\n2\n3\n"   # value column sum = 6
JSONL_123 = b"1\n2\n3\n"
BIN_SAMPLE = bytes(range(256))


def request_bytes(func: str, outputs: list[str], fmt: DataFormat,
                  params: list[ParamPayload], code: str | None = None) -> bytes:
    return ComputeRequest(outputs=tuple(outputs), format=fmt, func=func,
                          params=tuple(params), code=code).to_bytes()


def post_compute(base_url: str, body: bytes,
                 timeout: float = 30.0) -> tuple[int, Any]:
    response = requests.post(f"{base_url}/compute", data=body,
                             headers={"Content-Type": "application/json"},
                             timeout=timeout)
    try:
        return response.status_code, response.json()
    except ValueError:
        return response.status_code, response.text


def _expect_payloads(status: int, body: Any, count: int) -> list[bytes]:
    if status != 200:
        raise AssertionError(f"expected 200, got {status}: {body}")
    result = ComputeResult.from_wire(body)
    if len(result.results) != count:
        raise AssertionError(f"expected {count} results, got {len(result.results)}")
    payloads = []
    for entry in result.results:
        if entry.payload is None:
            raise AssertionError("expected payload bytes, got a function handle")
        payloads.append(entry.payload)
    return payloads


def _expect_error(status: int, body: Any, want_status: int, want_error: str) -> None:
    if status != want_status:
        raise AssertionError(f"expected HTTP {want_status}, got {status}: {body}")
    if not isinstance(body, dict) or body.get("error") != want_error:
        raise AssertionError(f"expected error {want_error!r}, got {body}")


# --- individual checks -----------------------------------------------------------

def check_health(base_url: str) -> None:
    response = requests.get(f"{base_url}/health", timeout=10)
    body = response.json()
    if response.status_code != 200 or body.get("status") != "ok":
        raise AssertionError(f"/health not ok: {response.status_code} {body}")
    for key in ("session_id", "environment_id"):
        if not body.get(key):
            raise AssertionError(f"/health is missing {key}")


def check_session_stable(base_url: str) -> None:
    sessions = {requests.get(f"{base_url}/health", timeout=10).json()["session_id"]
                for _ in range(HEALTH_CALLS)}
    if len(sessions) != 1:
        raise AssertionError(f"session id changed across calls: {sessions}")


def check_identity(base_url: str) -> None:
    body = request_bytes("core.identity", ["out.json"], DataFormat.JSON,
                         [ParamPayload("x", DataFormat.JSON, payload=b'{"a":1}')])
    payloads = _expect_payloads(*post_compute(base_url, body), 1)
    if payloads[0] != b'{"a":1}':
        raise AssertionError(f"identity returned {payloads[0]!r}")


def check_sum(base_url: str) -> None:
    body = request_bytes("stats.sum", ["sum.json"], DataFormat.JSON,
                         [ParamPayload("xs", DataFormat.JSONL, payload=JSONL_123)])
    payloads = _expect_payloads(*post_compute(base_url, body), 1)
    if payloads[0] != b"6":
        raise AssertionError(f"sum of 1,2,3 returned {payloads[0]!r}")


def check_purity(base_url: str) -> None:
    body = request_bytes("stats.sum", ["sum.json"], DataFormat.JSON,
                         [ParamPayload("xs", DataFormat.JSONL, payload=JSONL_123)])
    first = _expect_payloads(*post_compute(base_url, body), 1)
    second = _expect_payloads(*post_compute(base_url, body), 1)
    if first != second:
        raise AssertionError("byte-identical requests returned different bytes")


def check_stateless_interleaving(base_url: str) -> None:
    sum_body = request_bytes("stats.sum", ["sum.json"], DataFormat.JSON,
                             [ParamPayload("xs", DataFormat.JSONL, payload=JSONL_123)])
    other = request_bytes("core.identity", ["o.json"], DataFormat.JSON,
                          [ParamPayload("x", DataFormat.JSON, payload=b"42")])
    before = _expect_payloads(*post_compute(base_url, sum_body), 1)
    _expect_payloads(*post_compute(base_url, other), 1)
    after = _expect_payloads(*post_compute(base_url, sum_body), 1)
    if before != after:
        raise AssertionError("an unrelated compute changed a later result")


def check_multi_output(base_url: str) -> None:
    body = request_bytes("stats.minmax", ["min.json", "max.json"], DataFormat.JSON,
                         [ParamPayload("xs", DataFormat.JSONL, payload=b"3\n1\n2\n")])
    payloads = _expect_payloads(*post_compute(base_url, body), 2)
    if payloads != [b"1", b"3"]:
        raise AssertionError(f"minmax returned {payloads}")


def check_bin_roundtrip(base_url: str) -> None:
    body = request_bytes("blob.identity", ["out.bin"], DataFormat.BIN,
                         [ParamPayload("x", DataFormat.BIN, payload=BIN_SAMPLE)])
    payloads = _expect_payloads(*post_compute(base_url, body), 1)
    if payloads[0] != BIN_SAMPLE:
        raise AssertionError("binary payload was not preserved")


def check_txt_roundtrip(base_url: str) -> None:
    text = "héllo → wörld\n"
    body = request_bytes("text.identity", ["out.txt"], DataFormat.TXT,
                         [ParamPayload("x", DataFormat.TXT,
                                       payload=text.encode("utf-8"))])
    payloads = _expect_payloads(*post_compute(base_url, body), 1)
    if payloads[0] != text.encode("utf-8"):
        raise AssertionError("text payload was not preserved")


def check_unknown_function(base_url: str) -> None:
    body = request_bytes("nope.missing", ["x.json"], DataFormat.JSON, [])
    _expect_error(*post_compute(base_url, body), 400, "unknown-function")


def check_bad_param_name(base_url: str) -> None:
    body = request_bytes("stats.sum", ["x.json"], DataFormat.JSON,
                         [ParamPayload("wrong", DataFormat.JSONL, payload=JSONL_123)])
    _expect_error(*post_compute(base_url, body), 400, "bad-param")


def check_bad_param_payload(base_url: str) -> None:
    body = request_bytes("stats.sum", ["x.json"], DataFormat.JSON,
                         [ParamPayload("xs", DataFormat.JSONL,
                                       payload=b"{not json\n")])
    _expect_error(*post_compute(base_url, body), 400, "bad-param")


def check_function_raised(base_url: str) -> None:
    body = request_bytes("fail.always", ["x.json"], DataFormat.JSON, [])
    status, raw = post_compute(base_url, body)
    _expect_error(status, raw, 422, "function-raised")
    if not raw.get("log") and not raw.get("message"):
        raise AssertionError("422 body carries neither message nor log")


def fit_handle(base_url: str) -> str:
    body = request_bytes("ml.fit", ["model"], DataFormat.FUNC,
                         [ParamPayload("train", DataFormat.CSV, payload=CSV_TRAIN)])
    status, raw = post_compute(base_url, body)
    if status != 200:
        raise AssertionError(f"ml.fit failed: {status} {raw}")
    result = ComputeResult.from_wire(raw)
    handle = result.results[0].func_handle
    if not handle:
        raise AssertionError("ml.fit did not return a function handle")
    return handle


def apply_bytes(base_url: str, handle: str) -> bytes:
    body = request_bytes("ml.apply", ["pred.jsonl"], DataFormat.JSONL,
                         [ParamPayload("model", DataFormat.FUNC, func_handle=handle),
                          ParamPayload("data", DataFormat.CSV, payload=CSV_DATA)])
    return _expect_payloads(*post_compute(base_url, body), 1)[0]


def check_func_handles(base_url: str) -> None:
    handle = fit_handle(base_url)
    predictions = apply_bytes(base_url, handle)
    if predictions != b"2.0\n2.0\n":
        raise AssertionError(f"constant predictor returned {predictions!r}")


def check_stale_handle(base_url: str) -> None:
    body = request_bytes("ml.apply", ["pred.jsonl"], DataFormat.JSONL,
                         [ParamPayload("model", DataFormat.FUNC,
                                       func_handle="fn-never-minted-1"),
                          ParamPayload("data", DataFormat.CSV, payload=CSV_DATA)])
    _expect_error(*post_compute(base_url, body), 410, "stale-func-handle")


CHECKS: list[Callable[[str], None]] = [
    check_health,
    check_session_stable,
    check_identity,
    check_sum,
    check_purity,
    check_stateless_interleaving,
    check_multi_output,
    check_bin_roundtrip,
    check_txt_roundtrip,
    check_unknown_function,
    check_bad_param_name,
    check_bad_param_payload,
    check_function_raised,
    check_func_handles,
    check_stale_handle,
]


@dataclass(frozen=True)
class CheckResult:
    name: str
    error: str | None

    @property
    def ok(self) -> bool:
        return self.error is None


def run_conformance(base_url: str) -> list[CheckResult]:
    results = []
    for check in CHECKS:
        name = check.__name__.removeprefix("check_")
        try:
            check(base_url)
            results.append(CheckResult(name, None))
        except (AssertionError, requests.RequestException, ValueError, KeyError) as exc:
            results.append(CheckResult(name, f"{type(exc).__name__}: {exc}"))
    return results


def assert_conformance(base_url: str) -> list[CheckResult]:
    results = run_conformance(base_url)
    failures = [r for r in results if not r.ok]
    if failures:
        lines = "\n".join(f"  {r.name}: {r.error}" for r in failures)
        raise AssertionError(f"executor at {base_url} fails conformance:\n{lines}")
    return results


# --- digest parity ------------------------------------------------------------------

def run_parity_session(base_url: str) -> dict[str, bytes]:
    """Run the shared fixture scenario; two conforming executors must return
    byte-identical maps."""
    out: dict[str, bytes] = {}

    def compute(name: str, func: str, outputs: list[str], fmt: DataFormat,
                params: list[ParamPayload]) -> None:
        body = request_bytes(func, outputs, fmt, params)
        payloads = _expect_payloads(*post_compute(base_url, body), len(outputs))
        for i, payload in enumerate(payloads):
            out[f"{name}[{i}]" if len(outputs) > 1 else name] = payload

    compute("identity", "core.identity", ["o.json"], DataFormat.JSON,
            [ParamPayload("x", DataFormat.JSON,
                          payload=b'{"nested":{"b":2,"a":[1,2.5,null,true]}}')])
    compute("sum", "stats.sum", ["o.json"], DataFormat.JSON,
            [ParamPayload("xs", DataFormat.JSONL, payload=b"1\n2\n3\n0.5\n-0.5\n")])
    compute("minmax", "stats.minmax", ["min.json", "max.json"], DataFormat.JSON,
            [ParamPayload("xs", DataFormat.JSONL, payload=b"3\n1\n2\n")])
    compute("double", "rows.double", ["o.jsonl"], DataFormat.JSONL,
            [ParamPayload("xs", DataFormat.JSONL, payload=b"1\n2\n3.5\n")])
    compute("column_sum", "table.sum_column", ["o.json"], DataFormat.JSON,
            [ParamPayload("table", DataFormat.CSV, payload=CSV_NUMBERS),
             ParamPayload("column", DataFormat.JSON, payload=b'"value"')])
    compute("blob", "blob.identity", ["o.bin"], DataFormat.BIN,
            [ParamPayload("x", DataFormat.BIN, payload=BIN_SAMPLE)])
    compute("text", "text.identity", ["o.txt"], DataFormat.TXT,
            [ParamPayload("x", DataFormat.TXT, payload="café\n".encode("utf-8"))])
    out["predictions"] = apply_bytes(base_url, fit_handle(base_url))
    return out
