"""In-memory value model and byte-exact canonical encodings.

Six data formats are supported. Their in-memory representations are plain
Python values, so user functions never touch engine types except for tables
and function handles:

    JSON  -> tree of None/bool/int/float/str/list/dict (str keys)
    JSONL -> list of trees, one per line
    CSV   -> Table (header + string cells; no type inference)
    TXT   -> str
    BIN   -> bytes
    FUNC  -> FuncHandle (executor-scoped, never persisted)

Encoding is canonical: for any value there is exactly one byte encoding, so
content digests are stable across processes, platforms, and executor
implementations. Canonical JSON means object keys sorted by code point, no
insignificant whitespace, UTF-8, NaN/Infinity rejected, and numbers in
shortest round-trip decimal form (ints stay exact at arbitrary precision;
fractional values are 64-bit floats). CSV is RFC 4180 with a mandatory
header, "\n" line endings and minimal quoting; CRLF is accepted on input.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Iterable

from .errors import DecodeError, EncodeError, MergeError


class DataFormat(Enum):
    JSON = "JSON"
    JSONL = "JSONL"
    CSV = "CSV"
    TXT = "TXT"
    BIN = "BIN"
    FUNC = "FUNC"

    @classmethod
    def parse(cls, name: Any) -> "DataFormat":
        try:
            return cls(name)
        except ValueError:
            valid = ", ".join(f.value for f in cls)
            raise ValueError(f"unknown data format {name!r} (expected one of {valid})")


# Formats whose multiple wildcard matches can be merged into one input.
MERGEABLE = frozenset({DataFormat.JSONL, DataFormat.CSV})


@dataclass(frozen=True)
class Table:
    """Tabular value: ordered header plus rows of string cells.

    Cells are always strings; interpreting them (numbers, dates, ...) is the
    consuming function's job, not the engine's.
    """

    header: tuple[str, ...]
    rows: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        if not self.header:
            raise ValueError("a table needs at least one column")
        if len(set(self.header)) != len(self.header):
            raise ValueError("table header names must be unique")
        for name in self.header:
            if "\x00" in name:
                raise ValueError("column names must not contain NUL")
        for i, row in enumerate(self.rows):
            if len(row) != len(self.header):
                raise ValueError(
                    f"row {i} has {len(row)} cells, header has {len(self.header)}")
            for cell in row:
                if "\x00" in cell:
                    raise ValueError(f"row {i} contains NUL; cells must be NUL-free")


@dataclass(frozen=True)
class FuncHandle:
    """Opaque reference to a function value living inside one executor session."""

    session_id: str
    handle_id: str
    created: float = 0.0


def digest(data: bytes) -> str:
    """SHA-256 of the given bytes as 64 lowercase hex characters."""
    return hashlib.sha256(data).hexdigest()


# --- canonical JSON ----------------------------------------------------------

def _check_tree(value: Any, path: str = "$") -> None:
    if value is None or isinstance(value, (bool, int, str)):
        return
    if isinstance(value, float):
        if not math.isfinite(value):
            raise EncodeError(f"non-finite number at {path}")
        return
    if isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            _check_tree(item, f"{path}[{i}]")
        return
    if isinstance(value, dict):
        for key in value:
            if not isinstance(key, str):
                raise EncodeError(f"non-string object key {key!r} at {path}")
            _check_tree(value[key], f"{path}.{key}")
        return
    raise EncodeError(f"value of type {type(value).__name__} at {path} is not JSON-representable")


def canonical_json(value: Any) -> bytes:
    """Canonical JSON encoding of a tree value."""
    _check_tree(value)
    text = json.dumps(value, sort_keys=True, separators=(",", ":"),
                      ensure_ascii=False, allow_nan=False)
    return text.encode("utf-8")


def _parse_float(text: str) -> float:
    value = float(text)
    if not math.isfinite(value):
        raise ValueError(f"number {text} overflows a 64-bit float")
    return value


def _reject_constant(name: str) -> Any:
    raise ValueError(f"non-finite constant {name} is not valid data")


def _loads(text: str) -> Any:
    return json.loads(text, parse_float=_parse_float, parse_constant=_reject_constant)


# --- decode ------------------------------------------------------------------

def _decode_utf8(data: bytes, fmt: str) -> str:
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DecodeError(fmt, f"invalid UTF-8: {exc.reason}", offset=exc.start)


def decode(data: bytes, fmt: DataFormat) -> Any:
    """Decode persisted bytes into the in-memory value for `fmt`.

    FUNC has no byte representation and is rejected.
    """
    if fmt is DataFormat.BIN:
        return bytes(data)
    if fmt is DataFormat.FUNC:
        raise DecodeError("FUNC", "function values have no persisted representation")
    if fmt is DataFormat.TXT:
        return _decode_utf8(data, "TXT")
    if fmt is DataFormat.JSON:
        text = _decode_utf8(data, "JSON")
        try:
            return _loads(text)
        except ValueError as exc:
            offset = getattr(exc, "pos", None)
            raise DecodeError("JSON", str(exc), offset=offset)
    if fmt is DataFormat.JSONL:
        text = _decode_utf8(data, "JSONL")
        rows = []
        for lineno, line in enumerate(text.split("\n"), start=1):
            if not line.strip():
                continue  # blank lines are skipped, including the final one
            try:
                rows.append(_loads(line))
            except ValueError as exc:
                raise DecodeError("JSONL", str(exc), line=lineno)
        return rows
    if fmt is DataFormat.CSV:
        return _decode_csv(data)
    raise DecodeError(str(fmt), "unsupported format")


def _decode_csv(data: bytes) -> Table:
    text = _decode_utf8(data, "CSV")
    reader = csv.reader(io.StringIO(text, newline=""), strict=True)
    header: tuple[str, ...] | None = None
    rows: list[tuple[str, ...]] = []
    try:
        for record in reader:
            if not record:
                continue  # tolerate stray blank lines
            if header is None:
                header = tuple(record)
                if len(set(header)) != len(header):
                    raise DecodeError("CSV", "duplicate column name in header", line=reader.line_num)
                continue
            if len(record) != len(header):
                raise DecodeError(
                    "CSV",
                    f"row has {len(record)} cells, header has {len(header)}",
                    line=reader.line_num)
            rows.append(tuple(record))
    except csv.Error as exc:
        raise DecodeError("CSV", str(exc), line=reader.line_num)
    if header is None:
        raise DecodeError("CSV", "a header row is required", line=1)
    return Table(header=header, rows=tuple(rows))


# --- encode ------------------------------------------------------------------

def encode(value: Any, fmt: DataFormat) -> bytes:
    """Encode a value to its canonical bytes for `fmt`.

    decode(encode(v, f), f) is structurally equal to v, and encode is a fixed
    point on already-canonical data.
    """
    if isinstance(value, FuncHandle):
        raise EncodeError("function handles are never encoded to bytes")
    if fmt is DataFormat.FUNC:
        raise EncodeError("FUNC values have no persisted representation")
    if fmt is DataFormat.JSON:
        return canonical_json(value)
    if fmt is DataFormat.JSONL:
        if isinstance(value, (str, bytes, dict)) or not isinstance(value, Iterable):
            raise EncodeError(f"JSONL requires a sequence of rows, got {type(value).__name__}")
        return b"".join(canonical_json(row) + b"\n" for row in value)
    if fmt is DataFormat.CSV:
        if not isinstance(value, Table):
            raise EncodeError(f"CSV requires a Table, got {type(value).__name__}")
        lines = [_csv_line(value.header)]
        lines.extend(_csv_line(row) for row in value.rows)
        return "".join(lines).encode("utf-8")
    if fmt is DataFormat.TXT:
        if not isinstance(value, str):
            raise EncodeError(f"TXT requires str, got {type(value).__name__}")
        try:
            return value.encode("utf-8")
        except UnicodeEncodeError as exc:
            raise EncodeError(f"text is not encodable as UTF-8: {exc.reason}")
    if fmt is DataFormat.BIN:
        if not isinstance(value, (bytes, bytearray, memoryview)):
            raise EncodeError(f"BIN requires bytes, got {type(value).__name__}")
        return bytes(value)
    raise EncodeError(f"unsupported format {fmt}")


def _csv_cell(cell: str) -> str:
    # RFC 4180 minimal quoting; `\r` alone must be quoted too, which
    # csv.writer with a "\n" terminator gets wrong.
    if any(ch in cell for ch in ',"\r\n'):
        return '"' + cell.replace('"', '""') + '"'
    return cell


def _csv_line(cells: tuple[str, ...]) -> str:
    if len(cells) == 1 and cells[0] == "":
        return '""\n'  # a bare empty line would read back as no row at all
    return ",".join(_csv_cell(cell) for cell in cells) + "\n"


# --- merging -----------------------------------------------------------------

def merge_inputs(values: list[Any], fmt: DataFormat) -> Any:
    """Merge wildcard-expanded inputs into one value.

    Only row streams and tables are mergeable. The result is the
    concatenation in expansion order — deterministic so digests are stable —
    but consumers must treat the merged rows as unordered.
    """
    if fmt is DataFormat.JSONL:
        merged: list[Any] = []
        for value in values:
            merged.extend(value)
        return merged
    if fmt is DataFormat.CSV:
        if not values:
            raise MergeError("cannot merge zero tables")
        header = values[0].header
        rows: list[tuple[str, ...]] = []
        for table in values:
            if not isinstance(table, Table):
                raise MergeError(f"CSV merge requires tables, got {type(table).__name__}")
            if table.header != header:
                raise MergeError(
                    f"table headers differ: {list(header)} vs {list(table.header)}")
            rows.extend(table.rows)
        return Table(header=header, rows=tuple(rows))
    raise MergeError(f"format {fmt.value} does not support merged inputs")
