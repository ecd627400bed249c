"""Project directory abstraction: file listing, safe reads, atomic writes.

A project is a self-contained folder: the article HTML, raw data, computed
sources, `sources.json`, `environments.json`, and the engine's own state
under `.prov/`. Trees list only visible files — any path with a dot-prefixed
segment (`.prov`, `.git`, temp files) is invisible to wildcard expansion and
raw-input resolution but still readable and writable by path.
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path
from typing import Iterator

from .descriptors import check_uri
from .errors import MalformedJson, SchemaViolation

PROV_DIR = ".prov"
MANIFEST_PATH = ".prov/manifest.json"
SOURCES_FILE = "sources.json"
ENVIRONMENTS_FILE = "environments.json"
_TMP_PREFIX = ".tmp-"


def _is_hidden(uri: str) -> bool:
    return any(segment.startswith(".") for segment in uri.split("/"))


class MemoryTree:
    """In-memory file tree for tests and planning experiments."""

    def __init__(self, files: dict[str, bytes] | None = None):
        self._files: dict[str, bytes] = dict(files or {})

    def paths(self) -> frozenset[str]:
        return frozenset(uri for uri in self._files if not _is_hidden(uri))

    def exists(self, uri: str) -> bool:
        return uri in self._files

    def read(self, uri: str) -> bytes:
        try:
            return self._files[uri]
        except KeyError:
            raise FileNotFoundError(uri)

    def write(self, uri: str, data: bytes) -> None:
        self._files[uri] = bytes(data)

    def delete(self, uri: str) -> None:
        self._files.pop(uri, None)


class DirectoryTree:
    """Real project directory. Writes are atomic: temp file + rename."""

    def __init__(self, root: str | Path):
        self.root = Path(root).resolve()

    def _path(self, uri: str) -> Path:
        check_uri(uri.lstrip())  # rejects absolute paths and '..' segments
        return self.root / uri

    def paths(self) -> frozenset[str]:
        return frozenset(self._walk())

    def _walk(self) -> Iterator[str]:
        for dirpath, dirnames, filenames in os.walk(self.root):
            dirnames[:] = sorted(d for d in dirnames if not d.startswith("."))
            rel = Path(dirpath).relative_to(self.root)
            for name in sorted(filenames):
                if name.startswith("."):
                    continue
                uri = str(rel / name) if rel.parts else name
                yield uri.replace(os.sep, "/")

    def exists(self, uri: str) -> bool:
        return self._path(uri).is_file()

    def read(self, uri: str) -> bytes:
        return self._path(uri).read_bytes()

    def write(self, uri: str, data: bytes) -> None:
        target = self._path(uri)
        target.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=_TMP_PREFIX, dir=target.parent)
        try:
            with os.fdopen(fd, "wb") as handle:
                handle.write(data)
            os.replace(tmp, target)
        except BaseException:
            try:
                os.unlink(tmp)
            except OSError:
                pass
            raise

    def delete(self, uri: str) -> None:
        try:
            self._path(uri).unlink()
        except FileNotFoundError:
            pass


class Project:
    """A project rooted at a directory, with its descriptor document and state."""

    def __init__(self, root: str | Path):
        self.root = Path(root).resolve()
        self.tree = DirectoryTree(self.root)

    def read_sources(self) -> bytes:
        path = self.root / SOURCES_FILE
        if not path.is_file():
            raise MalformedJson(f"no {SOURCES_FILE} in {self.root}")
        return path.read_bytes()

    def read_environments(self) -> bytes:
        path = self.root / ENVIRONMENTS_FILE
        if not path.is_file():
            raise SchemaViolation(f"no {ENVIRONMENTS_FILE} in {self.root}")
        return path.read_bytes()

    def read_manifest(self) -> bytes | None:
        path = self.root / MANIFEST_PATH
        if not path.is_file():
            return None
        return path.read_bytes()

    def write_manifest(self, data: bytes) -> None:
        self.tree.write(MANIFEST_PATH, data)
