"""Static prerendering of article HTML.

Replaces every dynamic element with its resolved content so the document is
viewable without scripts and without a server:

    <span class="number" data-url="sum.json">     -> the decoded JSON scalar
    <span class="htmlpart" data-url="plot.svg">   -> inlined SVG/HTML (PNG stays
                                                     an <img> reference)
    <div class="references" data-url="refs.bib">  -> ordered reference list
    <div class="sources" data-url="sources.json"> -> data source listing
    <a href="#figId"></a>                         -> "Fig. N" / "Table N" / "[N]"

Everything else passes through byte-identically. Inlined fragments are
resolved recursively (with a cycle guard), so rendering twice is a fixed
point. Missing targets are collected and reported together via
UnresolvedCitation. The generated list markup is a cross-component contract:
the in-browser interpreter produces the same strings, and the fixture corpus
pins them.
"""

from __future__ import annotations

import json
import posixpath
import re
from html.parser import HTMLParser
from typing import Any

from . import descriptors
from .bibtex import BibEntry, parse_bibtex
from .errors import RenderError, ReprodocError, UnresolvedCitation

DYNAMIC_CLASSES = ("number", "htmlpart", "references", "sources")
_IMG_EXTENSIONS = (".png", ".jpg", ".jpeg", ".gif")
_SELF_CLOSE = re.compile(r"\s*/>$")


def _esc_text(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _esc_attr(text: str) -> str:
    return text.replace("&", "&amp;").replace('"', "&quot;")


def scalar_text(value: Any) -> str:
    """Rendering of a decoded JSON value inside a number span."""
    if isinstance(value, str):
        return value
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def reference_list_html(entries: list[BibEntry]) -> str:
    items = []
    for entry in entries:
        parts = []
        for name in ("author", "title", "journal"):
            value = entry.get(name)
            if value:
                parts.append(_esc_text(value))
        year = entry.get("year") or "n.d."
        text = ". ".join(parts)
        text = f"{text} ({_esc_text(year)})." if text else f"({_esc_text(year)})."
        url = entry.get("url")
        if url:
            text += f' <a href="{_esc_attr(url)}">link</a>'
        items.append(f'<li id="{_esc_attr(entry.key)}">{text}</li>')
    return f'<ol class="bibliography">{"".join(items)}</ol>'


def source_list_html(source_set: descriptors.SourceSet) -> str:
    items = []
    for descriptor in source_set.entries:
        uris = ",".join(descriptor.outputs)
        fmt = descriptor.format.value
        if not descriptor.stored:
            fmt += ", not stored"
        text = (f'<li id="src-{_esc_attr(descriptor.key)}">'
                f"<code>{_esc_text(uris)}</code> ({_esc_text(fmt)}) from "
                f"<code>{_esc_text(descriptor.func)}</code> [{_esc_text(descriptor.env)}]")
        inputs = sorted({p.binding.uri for p in descriptor.uri_params()})
        if inputs:
            links = ", ".join(f'<a href="{_esc_attr(uri)}">{_esc_text(uri)}</a>'
                              for uri in inputs)
            text += f"; inputs: {links}"
        items.append(text + "</li>")
    return f'<ul class="data-sources">{"".join(items)}</ul>'


class _LabelScan(HTMLParser):
    """First pass: figure/table ids in document order, plus reference targets."""

    def __init__(self):
        super().__init__(convert_charrefs=False)
        self.figure_ids: list[str] = []
        self.table_ids: list[str] = []
        self.references_url: str | None = None

    def _handle(self, tag: str, attrs: list[tuple[str, str | None]]):
        attr = dict(attrs)
        if tag == "figure" and attr.get("id"):
            self.figure_ids.append(attr["id"])
        elif tag == "table" and attr.get("id"):
            self.table_ids.append(attr["id"])
        elif attr.get("data-url") and "references" in (attr.get("class") or "").split():
            self.references_url = attr["data-url"]

    handle_starttag = _handle
    handle_startendtag = _handle


class _Rewriter(HTMLParser):
    """Second pass: emit the document with dynamic elements replaced."""

    def __init__(self, resolver: "_Resolver", labels: dict[str, str]):
        super().__init__(convert_charrefs=False)
        self.resolver = resolver
        self.labels = labels
        self.out: list[str] = []
        # active capture: (tag, depth, replacement text or None for anchors, raw inner)
        self._capture: list[list[Any]] = []

    def _emit(self, text: str) -> None:
        if self._capture:
            self._capture[-1][3] += text
        else:
            self.out.append(text)

    def _dynamic_class(self, attrs: dict[str, str | None]) -> str | None:
        classes = (attrs.get("class") or "").split()
        for name in DYNAMIC_CLASSES:
            if name in classes and attrs.get("data-url"):
                return name
        return None

    def _start(self, tag: str, attrs: list[tuple[str, str | None]],
               self_closing: bool) -> None:
        raw = self.get_starttag_text() or ""
        attr = dict(attrs)
        kind = self._dynamic_class(attr)
        replacement: str | None = None
        anchor = False
        if kind is not None:
            replacement = self.resolver.resolve(kind, attr["data-url"] or "")
        elif tag == "a" and (attr.get("href") or "").startswith("#"):
            anchor = True
        if replacement is None and not anchor:
            if self._capture and self._capture[-1][0] == tag and not self_closing:
                self._capture[-1][1] += 1
            self._emit(raw)
            return
        open_tag = _SELF_CLOSE.sub(">", raw) if self_closing else raw
        if self_closing:
            inner = ""
            self._finish_capture(tag, open_tag, replacement, anchor, inner)
        else:
            self._capture.append([tag, 1, (replacement, anchor, open_tag), ""])

    def _finish_capture(self, tag: str, open_tag: str, replacement: str | None,
                        anchor: bool, inner: str) -> None:
        if anchor:
            target = re.search(r'href="#([^"]*)"', open_tag)
            label = self.labels.get(target.group(1)) if target else None
            content = inner if inner.strip() or label is None else label
        else:
            content = replacement or ""
        self._emit(f"{open_tag}{content}</{tag}>")

    def handle_starttag(self, tag, attrs):
        self._start(tag, attrs, self_closing=False)

    def handle_startendtag(self, tag, attrs):
        self._start(tag, attrs, self_closing=True)

    def handle_endtag(self, tag):
        if self._capture and self._capture[-1][0] == tag:
            self._capture[-1][1] -= 1
            if self._capture[-1][1] == 0:
                captured = self._capture.pop()
                replacement, anchor, open_tag = captured[2]
                self._finish_capture(tag, open_tag, replacement, anchor, captured[3])
                return
        self._emit(f"</{tag}>")

    def handle_data(self, data):
        self._emit(data)

    def handle_entityref(self, name):
        self._emit(f"&{name};")

    def handle_charref(self, name):
        self._emit(f"&#{name};")

    def handle_comment(self, data):
        self._emit(f"<!--{data}-->")

    def handle_decl(self, decl):
        self._emit(f"<!{decl}>")

    def handle_pi(self, data):
        self._emit(f"<?{data}>")

    def result(self) -> str:
        if self._capture:
            raise RenderError(f"unclosed <{self._capture[-1][0]}> element")
        return "".join(self.out)


class _Resolver:
    def __init__(self, tree: Any, labels: dict[str, str]):
        self.tree = tree
        self.labels = labels
        self.missing: set[str] = set()
        self._stack: list[str] = []

    def _read(self, uri: str, *, fallback: str | None = None) -> bytes | None:
        for candidate in ([uri] + ([fallback] if fallback else [])):
            try:
                return self.tree.read(candidate)
            except (FileNotFoundError, ReprodocError, OSError):
                continue
        self.missing.add(uri)
        return None

    def resolve(self, kind: str, uri: str) -> str:
        if kind == "number":
            data = self._read(uri)
            if data is None:
                return ""
            try:
                value = json.loads(data.decode("utf-8"))
            except (ValueError, UnicodeDecodeError) as exc:
                raise RenderError(f"number target {uri!r} is not JSON: {exc}")
            return _esc_text(scalar_text(value))
        if kind == "htmlpart":
            return self._htmlpart(uri)
        if kind == "references":
            data = self._read(uri)
            if data is None:
                return ""
            entries, _ = parse_bibtex(data.decode("utf-8", errors="replace"))
            return reference_list_html(entries)
        if kind == "sources":
            # the published grammar names the file sources.json; articles written
            # against the singular spelling resolve to the same document
            fallback = None
            if posixpath.basename(uri) == "source.json":
                fallback = posixpath.join(posixpath.dirname(uri), "sources.json").lstrip("/")
            data = self._read(uri, fallback=fallback)
            if data is None:
                return ""
            return source_list_html(descriptors.parse_sources(data))
        raise RenderError(f"unknown dynamic class {kind!r}")

    def _htmlpart(self, uri: str) -> str:
        if uri in self._stack:
            raise RenderError("htmlpart inclusion cycle: "
                              + " -> ".join(self._stack + [uri]))
        lower = uri.lower()
        if lower.endswith(_IMG_EXTENSIONS):
            if not self.tree.exists(uri):
                self.missing.add(uri)
                return ""
            return f'<img src="{_esc_attr(uri)}" alt="">'
        data = self._read(uri)
        if data is None:
            return ""
        fragment = data.decode("utf-8", errors="replace")
        if lower.endswith((".html", ".htm", ".svg")):
            # fragments may themselves cite data; resolve them recursively
            self._stack.append(uri)
            try:
                rewriter = _Rewriter(self, self.labels)
                rewriter.feed(fragment)
                rewriter.close()
                return rewriter.result()
            finally:
                self._stack.pop()
        return _esc_text(fragment)


def _build_labels(tree: Any, article_html: str) -> dict[str, str]:
    scan = _LabelScan()
    scan.feed(article_html)
    scan.close()
    labels: dict[str, str] = {}
    for n, fig in enumerate(scan.figure_ids, start=1):
        labels[fig] = f"Fig. {n}"
    for n, tbl in enumerate(scan.table_ids, start=1):
        labels[tbl] = f"Table {n}"
    if scan.references_url and tree.exists(scan.references_url):
        entries, _ = parse_bibtex(tree.read(scan.references_url)
                                  .decode("utf-8", errors="replace"))
        for n, entry in enumerate(entries, start=1):
            labels.setdefault(entry.key, f"[{n}]")
    return labels


def prerender(tree: Any, article_uri: str) -> bytes:
    """Resolve every dynamic element of an article into static HTML bytes.

    Raises UnresolvedCitation listing every data-url target that does not
    exist yet; rendering an already rendered article is a no-op.
    """
    try:
        article_html = tree.read(article_uri).decode("utf-8")
    except FileNotFoundError:
        raise RenderError(f"article not found: {article_uri}")
    except UnicodeDecodeError as exc:
        raise RenderError(f"article is not UTF-8: {exc.reason}")
    labels = _build_labels(tree, article_html)
    resolver = _Resolver(tree, labels)
    rewriter = _Rewriter(resolver, labels)
    rewriter.feed(article_html)
    rewriter.close()
    output = rewriter.result()
    if resolver.missing:
        raise UnresolvedCitation(sorted(resolver.missing))
    return output.encode("utf-8")
