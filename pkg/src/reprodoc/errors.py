"""Exception hierarchy shared by all engine modules."""

from __future__ import annotations


class ReprodocError(Exception):
    """Base class for every error raised by this package."""


# --- descriptor document ---------------------------------------------------

class MalformedJson(ReprodocError):
    """sources.json is not parseable as UTF-8 JSON (or carries a BOM)."""


class SchemaViolation(ReprodocError):
    """A descriptor or parameter violates the document grammar."""


class DuplicateUri(ReprodocError):
    """The same source URI is described by more than one descriptor entry."""


class NoMatch(ReprodocError):
    """A wildcard pattern matched nothing (usually a typo)."""

    def __init__(self, pattern: str):
        super().__init__(f"wildcard pattern matched nothing: {pattern!r}")
        self.pattern = pattern


# --- value formats ----------------------------------------------------------

class DecodeError(ReprodocError):
    """Bytes could not be decoded under the declared data format."""

    def __init__(self, format: str, reason: str, *, line: int | None = None,
                 offset: int | None = None):
        where = ""
        if line is not None:
            where = f" (line {line})"
        elif offset is not None:
            where = f" (byte {offset})"
        super().__init__(f"{format}: {reason}{where}")
        self.format = format
        self.reason = reason
        self.line = line
        self.offset = offset


class EncodeError(ReprodocError):
    """Value is not representable in the requested data format."""


class MergeError(ReprodocError):
    """Multiple inputs cannot be merged under the given format."""


# --- graph and planning -----------------------------------------------------

class CycleError(ReprodocError):
    """The reference graph contains a cycle; carries one witness cycle."""

    def __init__(self, cycle: list[str]):
        super().__init__("dependency cycle: " + " -> ".join(cycle))
        self.cycle = cycle


class UnknownTarget(ReprodocError):
    """A requested target URI is not a node of the dependency graph."""


# --- execution ----------------------------------------------------------------

class ExecutorLaunchError(ReprodocError):
    """An environment's launch command failed to produce a healthy executor."""


class ExecutorProtocolError(ReprodocError):
    """An executor response violated the wire contract."""


class DuplicateRegistration(ReprodocError):
    """A function URI was registered twice in one registry."""


class IntegrityError(ReprodocError):
    """Executor returned a result list that does not match the request outputs."""


class StaleFuncHandle(ReprodocError):
    """A function handle was used against a session that did not mint it."""


class CrossExecutorFunc(ReprodocError):
    """A function value was routed to a different executor than its creator."""


# --- rendering ----------------------------------------------------------------

class UnresolvedCitation(ReprodocError):
    """An article references data-url targets that do not exist yet."""

    def __init__(self, uris: list[str]):
        super().__init__("unresolved data citations: " + ", ".join(sorted(uris)))
        self.uris = sorted(uris)


class RenderError(ReprodocError):
    """The article cannot be rendered (bad markup, inclusion cycle, ...)."""
