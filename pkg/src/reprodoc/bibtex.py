"""Minimal BibTeX subset parser for reference lists.

Supported: `@type{key, field = {value} / "value" / bare, ...}` with nested
braces inside values. Not supported (by design): @string macros, crossref,
TeX accent handling. Malformed entries are skipped and reported as
diagnostics rather than failing the whole file.
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class BibEntry:
    key: str
    entry_type: str
    fields: dict[str, str] = field(default_factory=dict)

    def get(self, name: str) -> str | None:
        return self.fields.get(name)


def _strip_braces(value: str) -> str:
    return value.replace("{", "").replace("}", "").strip()


class _Scanner:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def eof(self) -> bool:
        return self.pos >= len(self.text)

    def peek(self) -> str:
        return self.text[self.pos] if not self.eof() else ""

    def skip_ws(self) -> None:
        while not self.eof() and self.text[self.pos].isspace():
            self.pos += 1

    def until(self, stop: str) -> str:
        start = self.pos
        while not self.eof() and self.text[self.pos] not in stop:
            self.pos += 1
        return self.text[start:self.pos]

    def braced(self) -> str:
        # positioned at '{'; returns content, consumes matching '}'
        depth = 0
        start = self.pos + 1
        while not self.eof():
            char = self.text[self.pos]
            if char == "{":
                depth += 1
            elif char == "}":
                depth -= 1
                if depth == 0:
                    content = self.text[start:self.pos]
                    self.pos += 1
                    return content
            self.pos += 1
        raise ValueError("unbalanced braces")

    def quoted(self) -> str:
        # positioned at '"'
        self.pos += 1
        start = self.pos
        while not self.eof() and self.text[self.pos] != '"':
            self.pos += 1
        if self.eof():
            raise ValueError("unterminated quoted value")
        content = self.text[start:self.pos]
        self.pos += 1
        return content


def parse_bibtex(text: str) -> tuple[list[BibEntry], list[str]]:
    """Parse entries in document order; returns (entries, diagnostics)."""
    entries: list[BibEntry] = []
    diagnostics: list[str] = []
    scanner = _Scanner(text)
    while True:
        scanner.until("@")
        if scanner.eof():
            break
        scanner.pos += 1
        mark = scanner.pos
        try:
            entry = _parse_entry(scanner)
        except ValueError as exc:
            diagnostics.append(f"skipped malformed entry: {exc}")
            scanner.pos = mark  # rescan from here so the next entry is not lost
            continue
        if entry is not None:
            entries.append(entry)
    return entries, diagnostics


def _parse_entry(scanner: _Scanner) -> BibEntry | None:
    entry_type = scanner.until("{(").strip().lower()
    if scanner.eof():
        raise ValueError("entry header without a body")
    if entry_type in ("comment", "preamble", "string"):
        scanner.braced()
        return None
    if not entry_type.isalpha():
        raise ValueError(f"bad entry type {entry_type!r}")
    scanner.pos += 1  # past '{'
    scanner.skip_ws()
    key = scanner.until(",}").strip()
    if not key:
        raise ValueError("entry without a citation key")
    if any(ch in key for ch in "@{}\"\\") or any(ch.isspace() for ch in key):
        raise ValueError(f"bad citation key {key!r}")
    fields: dict[str, str] = {}
    while True:
        scanner.skip_ws()
        if scanner.eof():
            raise ValueError(f"unterminated entry {key!r}")
        if scanner.peek() == "}":
            scanner.pos += 1
            break
        if scanner.peek() == ",":
            scanner.pos += 1
            continue
        name = scanner.until("=,}").strip().lower()
        scanner.skip_ws()
        if scanner.peek() != "=":
            if name:
                raise ValueError(f"field {name!r} of {key!r} has no value")
            continue
        scanner.pos += 1
        scanner.skip_ws()
        char = scanner.peek()
        if char == "{":
            value = scanner.braced()
        elif char == '"':
            value = scanner.quoted()
        else:
            value = scanner.until(",}").strip()
        if name:
            fields[name] = _strip_braces(value)
    return BibEntry(key=key, entry_type=entry_type, fields=fields)
