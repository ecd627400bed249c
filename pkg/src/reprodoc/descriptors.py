"""Parsing, validation, and resolution of the project's source descriptor document.

`sources.json` maps each computed source URI (or a comma-separated list of
URIs for multi-output functions) to a descriptor: output format, function
reference, execution environment, optional inline code, optional nostore
flag, and named parameters bound either to inline values or to other source
URIs (wildcards allowed). Parsing is strict — unknown fields, bad enum
values, and malformed URIs are rejected, because descriptor content feeds
the staleness digests.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Any, Collection, Iterable

from .errors import DuplicateUri, MalformedJson, NoMatch, SchemaViolation
from .formats import MERGEABLE, DataFormat, canonical_json

_DESCRIPTOR_FIELDS = {"type", "func", "env", "code", "nostore", "params"}
_PARAM_FIELDS = {"type", "parallel", "val", "uri"}


def check_uri(uri: str, *, allow_wildcard: bool = False) -> str:
    """Validate a project-relative source URI and return it unchanged."""
    if not isinstance(uri, str) or not uri:
        raise SchemaViolation(f"source uri must be a non-empty string, got {uri!r}")
    if uri.startswith("/"):
        raise SchemaViolation(f"source uri must be relative: {uri!r}")
    if "\\" in uri or "\x00" in uri:
        raise SchemaViolation(f"source uri contains forbidden characters: {uri!r}")
    if "," in uri:
        raise SchemaViolation(f"source uri must not contain commas: {uri!r}")
    if "*" in uri and not allow_wildcard:
        raise SchemaViolation(f"wildcards are only allowed in parameter uris: {uri!r}")
    for segment in uri.split("/"):
        if segment in ("", ".", ".."):
            raise SchemaViolation(f"source uri must not contain empty, '.' or '..' segments: {uri!r}")
    return uri


@dataclass(frozen=True)
class InlineValue:
    """Parameter bound to a literal: a JSON value, or for non-JSON formats the
    encoded data as a JSON string (base64 for BIN)."""

    value: Any


@dataclass(frozen=True)
class UriRef:
    """Parameter bound to another source URI, possibly containing wildcards."""

    uri: str

    @property
    def is_wildcard(self) -> bool:
        return "*" in self.uri


@dataclass(frozen=True)
class ParameterSpec:
    name: str
    format: DataFormat
    binding: InlineValue | UriRef
    parallel: bool = False


@dataclass(frozen=True)
class SourceDescriptor:
    outputs: tuple[str, ...]
    format: DataFormat
    func: str
    env: str
    params: dict[str, ParameterSpec]
    code: str | None = None
    nostore: bool = False

    @property
    def key(self) -> str:
        """Stable identifier of this descriptor: its first output URI."""
        return self.outputs[0]

    @property
    def stored(self) -> bool:
        """Whether outputs are persisted. FUNC values are never storable."""
        return not self.nostore and self.format is not DataFormat.FUNC

    def uri_params(self) -> Iterable[ParameterSpec]:
        for param in self.params.values():
            if isinstance(param.binding, UriRef):
                yield param


@dataclass(frozen=True)
class SourceSet:
    """All descriptors of a project, keyed by every output URI they declare."""

    entries: tuple[SourceDescriptor, ...]
    by_output: dict[str, SourceDescriptor] = field(compare=False, default_factory=dict)

    def __post_init__(self):
        by_output: dict[str, SourceDescriptor] = {}
        for descriptor in self.entries:
            for uri in descriptor.outputs:
                if uri in by_output:
                    raise DuplicateUri(f"source uri described twice: {uri!r}")
                by_output[uri] = descriptor
        object.__setattr__(self, "by_output", by_output)

    @property
    def outputs(self) -> frozenset[str]:
        return frozenset(self.by_output)

    def referenced_uris(self) -> set[str]:
        """Every URI mentioned by some uri-bound parameter (wildcards included verbatim)."""
        return {p.binding.uri for d in self.entries for p in d.uri_params()}


# --- parsing -----------------------------------------------------------------

class _Pairs:
    """Preserves JSON object key/value pairs so duplicates stay detectable."""

    __slots__ = ("pairs",)

    def __init__(self, pairs):
        self.pairs = pairs


def _to_plain(value: Any, where: str) -> Any:
    if isinstance(value, _Pairs):
        out: dict[str, Any] = {}
        for key, item in value.pairs:
            if key in out:
                raise SchemaViolation(f"duplicate object key {key!r} in {where}")
            out[key] = _to_plain(item, where)
        return out
    if isinstance(value, list):
        return [_to_plain(item, where) for item in value]
    return value


def _parse_param(name: str, raw: Any, where: str) -> ParameterSpec:
    if not isinstance(name, str) or not name:
        raise SchemaViolation(f"parameter name must be a non-empty string in {where}")
    if not isinstance(raw, _Pairs):
        raise SchemaViolation(f"parameter {name!r} in {where} must be an object")
    fields = _to_plain(raw, f"{where}.params.{name}")
    unknown = set(fields) - _PARAM_FIELDS
    if unknown:
        raise SchemaViolation(f"unknown parameter field(s) {sorted(unknown)} in {where}.params.{name}")
    if "type" not in fields:
        raise SchemaViolation(f"parameter {name!r} in {where} is missing 'type'")
    try:
        fmt = DataFormat.parse(fields["type"])
    except ValueError as exc:
        raise SchemaViolation(f"{where}.params.{name}: {exc}")
    parallel = fields.get("parallel", False)
    if not isinstance(parallel, bool):
        raise SchemaViolation(f"{where}.params.{name}: 'parallel' must be a boolean")
    has_val = "val" in fields
    has_uri = "uri" in fields
    if has_val == has_uri:
        raise SchemaViolation(
            f"{where}.params.{name}: exactly one of 'val' or 'uri' is required")
    if has_val:
        if fmt is DataFormat.FUNC:
            raise SchemaViolation(
                f"{where}.params.{name}: FUNC parameters must reference a source uri")
        binding: InlineValue | UriRef = InlineValue(fields["val"])
    else:
        uri = fields["uri"]
        try:
            check_uri(uri, allow_wildcard=True)
        except SchemaViolation as exc:
            raise SchemaViolation(f"{where}.params.{name}: {exc}")
        binding = UriRef(uri)
    return ParameterSpec(name=name, format=fmt, binding=binding, parallel=parallel)


def _parse_descriptor(key: str, raw: Any) -> SourceDescriptor:
    if not isinstance(key, str) or not key:
        raise SchemaViolation(f"descriptor key must be a non-empty string, got {key!r}")
    outputs = tuple(part for part in key.split(","))
    for part in outputs:
        check_uri(part)
    if not isinstance(raw, _Pairs):
        raise SchemaViolation(f"descriptor {key!r} must be an object")
    seen: set[str] = set()
    fields: dict[str, Any] = {}
    for name, value in raw.pairs:
        if name in seen:
            raise SchemaViolation(f"duplicate field {name!r} in descriptor {key!r}")
        seen.add(name)
        fields[name] = value
    unknown = set(fields) - _DESCRIPTOR_FIELDS
    if unknown:
        raise SchemaViolation(f"unknown descriptor field(s) {sorted(unknown)} in {key!r}")
    for required in ("type", "func", "env"):
        if required not in fields:
            raise SchemaViolation(f"descriptor {key!r} is missing {required!r}")
    try:
        fmt = DataFormat.parse(fields["type"])
    except ValueError as exc:
        raise SchemaViolation(f"descriptor {key!r}: {exc}")
    func = fields["func"]
    if not isinstance(func, str) or not func:
        raise SchemaViolation(f"descriptor {key!r}: 'func' must be a non-empty string")
    env = fields["env"]
    if not isinstance(env, str) or not env:
        raise SchemaViolation(f"descriptor {key!r}: 'env' must be a non-empty string")
    code = fields.get("code")
    if code is not None and not isinstance(code, str):
        raise SchemaViolation(f"descriptor {key!r}: 'code' must be a string")
    nostore = fields.get("nostore", False)
    if not isinstance(nostore, bool):
        raise SchemaViolation(f"descriptor {key!r}: 'nostore' must be a boolean")
    raw_params = fields.get("params", _Pairs([]))
    if not isinstance(raw_params, _Pairs):
        raise SchemaViolation(f"descriptor {key!r}: 'params' must be an object")
    params: dict[str, ParameterSpec] = {}
    for name, value in raw_params.pairs:
        if name in params:
            raise SchemaViolation(f"duplicate parameter {name!r} in descriptor {key!r}")
        params[name] = _parse_param(name, value, key)
    return SourceDescriptor(outputs=outputs, format=fmt, func=func, env=env,
                            params=params, code=code, nostore=nostore)


def parse_sources(data: bytes) -> SourceSet:
    """Parse the raw bytes of a sources document into a SourceSet.

    Raises MalformedJson for undecodable input, SchemaViolation for grammar
    violations, DuplicateUri when a URI is described more than once.
    """
    if data.startswith(b"\xef\xbb\xbf"):
        raise MalformedJson("sources document must be UTF-8 without a BOM")
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedJson(f"sources document is not valid UTF-8: {exc.reason}")
    try:
        doc = json.loads(text, object_pairs_hook=_Pairs)
    except json.JSONDecodeError as exc:
        raise MalformedJson(f"sources document is not valid JSON: {exc}")
    if not isinstance(doc, _Pairs):
        raise SchemaViolation("sources document must be a JSON object")
    entries = []
    seen_keys: set[str] = set()
    for key, raw in doc.pairs:
        if key in seen_keys:
            raise DuplicateUri(f"source uri described twice: {key!r}")
        seen_keys.add(key)
        entries.append(_parse_descriptor(key, raw))
    entries.sort(key=lambda d: d.key)
    return SourceSet(entries=tuple(entries))  # __post_init__ rejects cross-key duplicates


def serialize_sources(source_set: SourceSet) -> bytes:
    """Canonical byte serialization; parse(serialize(s)) equals s."""
    doc: dict[str, Any] = {}
    for descriptor in source_set.entries:
        params: dict[str, Any] = {}
        for name, param in descriptor.params.items():
            entry: dict[str, Any] = {"type": param.format.value}
            if param.parallel:
                entry["parallel"] = True
            if isinstance(param.binding, InlineValue):
                entry["val"] = param.binding.value
            else:
                entry["uri"] = param.binding.uri
            params[name] = entry
        obj: dict[str, Any] = {
            "type": descriptor.format.value,
            "func": descriptor.func,
            "env": descriptor.env,
            "params": params,
        }
        if descriptor.code is not None:
            obj["code"] = descriptor.code
        if descriptor.nostore:
            obj["nostore"] = True
        doc[",".join(descriptor.outputs)] = obj
    return canonical_json(doc)


# --- wildcard expansion --------------------------------------------------------

def _wildcard_regex(pattern: str) -> re.Pattern[str]:
    # `*` matches any run of characters within one path segment.
    parts = (re.escape(part) for part in pattern.split("*"))
    return re.compile("[^/]*".join(parts))


def expand_wildcards(pattern: str, source_set: SourceSet,
                     files: Collection[str]) -> list[str]:
    """All descriptor outputs and project files matching a wildcard pattern.

    Sorted lexicographically by code point so downstream hashing is
    deterministic; raises NoMatch when nothing matches.
    """
    if "*" not in pattern:
        raise ValueError(f"pattern has no wildcard: {pattern!r}")
    regex = _wildcard_regex(pattern)
    candidates = set(source_set.outputs) | set(files)
    matches = sorted(uri for uri in candidates if regex.fullmatch(uri))
    if not matches:
        raise NoMatch(pattern)
    return matches


# --- validation ----------------------------------------------------------------

FINDING_UNRESOLVED = "unresolved-reference"
FINDING_FORMAT_MISMATCH = "format-mismatch"
FINDING_PARALLEL = "parallel-not-splittable"
FINDING_WILDCARD = "wildcard-not-mergeable"
FINDING_CROSS_ENV_FUNC = "cross-env-func"

NOTE_FUNC_NOSTORE = "func-nostore-implied"
NOTE_MULTI_OUTPUT = "multi-output-single-type"


@dataclass(frozen=True)
class Finding:
    kind: str
    uri: str  # first output of the descriptor the finding is about
    message: str
    param: str | None = None

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind, "uri": self.uri, "message": self.message}
        if self.param is not None:
            out["param"] = self.param
        return out


@dataclass
class ValidationReport:
    findings: list[Finding] = field(default_factory=list)
    notes: list[Finding] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        """True iff the project is runnable (informational notes do not block)."""
        return not self.findings

    def to_json(self) -> dict[str, Any]:
        return {
            "ok": self.ok,
            "findings": [f.to_json() for f in self.findings],
            "notes": [n.to_json() for n in self.notes],
        }


@dataclass(frozen=True)
class Resolution:
    """Outcome of resolving every uri-bound parameter against the file listing."""

    report: ValidationReport
    resolved: dict[tuple[str, str], tuple[str, ...]]  # (descriptor key, param) -> uris
    raw_inputs: frozenset[str]


def resolve_references(source_set: SourceSet, files: Collection[str]) -> Resolution:
    report = ValidationReport()
    resolved: dict[tuple[str, str], tuple[str, ...]] = {}
    raw_inputs: set[str] = set()
    outputs = source_set.outputs
    file_set = set(files)

    def mismatch(d: SourceDescriptor, param: ParameterSpec, target: str, actual: str):
        report.findings.append(Finding(
            FINDING_FORMAT_MISMATCH, d.key, param=param.name,
            message=f"parameter declares {param.format.value} but {target!r} is {actual}"))

    for d in source_set.entries:
        if len(d.outputs) > 1:
            report.notes.append(Finding(
                NOTE_MULTI_OUTPUT, d.key,
                message=f"single type {d.format.value} applies to all "
                        f"{len(d.outputs)} outputs"))
        if d.format is DataFormat.FUNC and not d.nostore:
            report.notes.append(Finding(
                NOTE_FUNC_NOSTORE, d.key,
                message="FUNC outputs are never persisted; nostore is implied"))
        for param in d.params.values():
            if param.parallel and param.format not in MERGEABLE:
                report.findings.append(Finding(
                    FINDING_PARALLEL, d.key, param=param.name,
                    message=f"parallel is only allowed for JSONL or CSV inputs, "
                            f"not {param.format.value}"))
            if not isinstance(param.binding, UriRef):
                continue
            ref = param.binding
            if ref.is_wildcard:
                if param.format not in MERGEABLE:
                    report.findings.append(Finding(
                        FINDING_WILDCARD, d.key, param=param.name,
                        message=f"wildcard inputs must be mergeable (JSONL or CSV), "
                                f"not {param.format.value}"))
                    continue
                try:
                    uris = tuple(expand_wildcards(ref.uri, source_set, file_set))
                except NoMatch:
                    report.findings.append(Finding(
                        FINDING_UNRESOLVED, d.key, param=param.name,
                        message=f"wildcard {ref.uri!r} matches no source or file"))
                    continue
            else:
                if ref.uri in outputs or ref.uri in file_set:
                    uris = (ref.uri,)
                else:
                    report.findings.append(Finding(
                        FINDING_UNRESOLVED, d.key, param=param.name,
                        message=f"{ref.uri!r} is neither a described source nor a project file"))
                    continue
            resolved[(d.key, param.name)] = uris
            for uri in uris:
                producer = source_set.by_output.get(uri)
                if producer is None:
                    if param.format is DataFormat.FUNC:
                        mismatch(d, param, uri, "a raw file, not a FUNC source")
                    else:
                        raw_inputs.add(uri)
                    continue
                if producer.format is not param.format:
                    mismatch(d, param, uri, f"declared {producer.format.value}")
                elif param.format is DataFormat.FUNC and producer.env != d.env:
                    report.findings.append(Finding(
                        FINDING_CROSS_ENV_FUNC, d.key, param=param.name,
                        message=f"function value {uri!r} is created in environment "
                                f"{producer.env!r} but consumed in {d.env!r}; function "
                                f"handles cannot cross executors"))
    return Resolution(report=report, resolved=resolved,
                      raw_inputs=frozenset(raw_inputs))


def validate(source_set: SourceSet, files: Collection[str]) -> ValidationReport:
    """Cross-reference every descriptor against the others and the file listing.

    An empty findings list means the project is runnable.
    """
    return resolve_references(source_set, files).report
