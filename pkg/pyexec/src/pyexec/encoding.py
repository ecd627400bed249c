"""Format bindings and byte-exact canonical encodings for the Python executor.

Independent of the engine on purpose: an executor in any language must
produce the same canonical bytes from the same values, and this module is
this executor's own implementation of that contract. The golden rules:

    JSON   sorted keys, no insignificant whitespace, UTF-8, no NaN/Infinity,
           shortest round-trip numbers
    JSONL  one canonical JSON value per line, trailing newline, blank lines
           skipped on input; bound to a lazy generator
    CSV    RFC 4180, mandatory unique header, "\n" endings, minimal quoting
           (a cell with a bare CR must be quoted; a lone empty cell is
           quoted so the row survives); bound to a pandas DataFrame of
           strings, no type inference
    TXT    UTF-8 text, BIN raw bytes, FUNC never touches bytes
"""

from __future__ import annotations

import csv
import io
import json
import math
from typing import Any, Callable, Iterator

import numpy as np
import pandas as pd


class FormatError(ValueError):
    """Payload bytes (or a produced value) do not fit the declared format."""


FORMATS = ("JSON", "JSONL", "CSV", "TXT", "BIN", "FUNC")


def _parse_float(text: str) -> float:
    value = float(text)
    if not math.isfinite(value):
        raise FormatError(f"number {text} overflows a 64-bit float")
    return value


def _reject(name: str) -> Any:
    raise FormatError(f"non-finite constant {name} is not valid data")


def loads_strict(text: str) -> Any:
    return json.loads(text, parse_float=_parse_float, parse_constant=_reject)


def _normalize(value: Any) -> Any:
    # numpy scalars leak out of pandas operations; canonical JSON wants
    # plain Python numbers
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, (list, tuple)):
        return [_normalize(item) for item in value]
    if isinstance(value, dict):
        return {key: _normalize(item) for key, item in value.items()}
    return value


def canonical_json_bytes(value: Any) -> bytes:
    try:
        text = json.dumps(_normalize(value), sort_keys=True, separators=(",", ":"),
                          ensure_ascii=False, allow_nan=False)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"value is not JSON-representable: {exc}")
    return text.encode("utf-8")


def _jsonl_rows(text: str) -> Iterator[Any]:
    # iterate without splitting the whole payload into a line list; huge
    # inputs stay O(1) in extra memory until the function pulls rows
    for lineno, line in enumerate(io.StringIO(text), start=1):
        if not line.strip():
            continue
        try:
            yield loads_strict(line)
        except ValueError as exc:
            raise FormatError(f"JSONL line {lineno}: {exc}")


def decode_payload(data: bytes | str, fmt: str) -> Any:
    """Payload bytes (or already-decoded text) to the native value handed to
    functions."""
    if fmt == "BIN":
        if isinstance(data, str):
            raise FormatError("BIN payloads must arrive base64-encoded")
        return bytes(data)
    if fmt == "FUNC":
        raise FormatError("FUNC params travel as handles, not bytes")
    if isinstance(data, str):
        text = data
    else:
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{fmt}: invalid UTF-8: {exc.reason}")
    if fmt == "TXT":
        return text
    if fmt == "JSON":
        try:
            return loads_strict(text)
        except ValueError as exc:
            raise FormatError(f"JSON: {exc}")
    if fmt == "JSONL":
        return _jsonl_rows(text)  # lazy: parsed row by row on demand
    if fmt == "CSV":
        return _decode_csv(text)
    raise FormatError(f"unknown format {fmt!r}")


def _decode_csv(text: str) -> pd.DataFrame:
    try:
        header = next(iter(csv.reader(io.StringIO(text, newline=""))), None)
    except csv.Error as exc:
        raise FormatError(f"CSV: {exc}")
    if not header:
        raise FormatError("CSV: a header row is required")
    if len(set(header)) != len(header):
        raise FormatError("CSV: duplicate column name in header")
    try:
        frame = pd.read_csv(io.StringIO(text), dtype=str, keep_default_na=False,
                            skip_blank_lines=True)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, ValueError) as exc:
        raise FormatError(f"CSV: {exc}")
    return frame


def _csv_cell(cell: str) -> str:
    if any(ch in cell for ch in ',"\r\n'):
        return '"' + cell.replace('"', '""') + '"'
    return cell


def _csv_line(cells: list[str]) -> str:
    if len(cells) == 1 and cells[0] == "":
        return '""\n'
    return ",".join(_csv_cell(cell) for cell in cells) + "\n"


def encode_value(value: Any, fmt: str) -> bytes:
    """Function return value to canonical bytes."""
    if fmt == "JSON":
        return canonical_json_bytes(value)
    if fmt == "JSONL":
        if isinstance(value, (str, bytes, dict)):
            raise FormatError("JSONL output must be an iterable of rows")
        try:
            return b"".join(canonical_json_bytes(row) + b"\n" for row in value)
        except TypeError:
            raise FormatError("JSONL output must be an iterable of rows")
    if fmt == "CSV":
        if not isinstance(value, pd.DataFrame):
            raise FormatError("CSV output must be a DataFrame")
        header = [str(name) for name in value.columns]
        if len(set(header)) != len(header):
            raise FormatError("CSV output has duplicate column names")
        lines = [_csv_line(header)]
        for row in value.itertuples(index=False):
            lines.append(_csv_line([_cell_str(cell) for cell in row]))
        return "".join(lines).encode("utf-8")
    if fmt == "TXT":
        if not isinstance(value, str):
            raise FormatError(f"TXT output must be str, got {type(value).__name__}")
        return value.encode("utf-8")
    if fmt == "BIN":
        if not isinstance(value, (bytes, bytearray, memoryview)):
            raise FormatError(f"BIN output must be bytes, got {type(value).__name__}")
        return bytes(value)
    raise FormatError(f"unknown output format {fmt!r}")


def _cell_str(cell: Any) -> str:
    if isinstance(cell, str):
        return cell
    return str(_normalize(cell))


def is_callable_output(fmt: str, value: Any) -> Callable | None:
    if fmt != "FUNC":
        return None
    if not callable(value):
        raise FormatError(f"FUNC output must be callable, got {type(value).__name__}")
    return value
