"""Prerendering: span resolution, anchor labels, idempotence, unresolved handling."""

import pytest

from reprodoc.bibtex import parse_bibtex
from reprodoc.errors import RenderError, UnresolvedCitation
from reprodoc.project import MemoryTree
from reprodoc.render import prerender, reference_list_html, scalar_text

BIB = b"""\
@article{shannon1948,
  author = {C. E. Shannon},
  title = {A Mathematical Theory of Communication},
  journal = {Bell System Technical Journal},
  year = {1948},
  url = {https://example.org/shannon1948}
}
@book{knuth1997,
  author = {D. E. Knuth},
  title = {The Art of Computer Programming},
  year = {1997}
}
"""

SOURCES = (b'{"sum.json": {"type": "JSON", "func": "stats.sum", "env": "native",'
           b' "params": {"xs": {"type": "JSONL", "uri": "rows.jsonl"}}}}')


def project_tree() -> MemoryTree:
    return MemoryTree({
        "article.html": b"<html><body><article>"
                        b'<p>total <span class="number" data-url="sum.json"></span></p>'
                        b"</article></body></html>",
        "sum.json": b"6",
    })


# --- number spans ---------------------------------------------------------------

def test_number_span_shows_the_scalar():
    output = prerender(project_tree(), "article.html").decode()
    assert '<span class="number" data-url="sum.json">6</span>' in output


def test_number_span_with_string_value_is_unquoted_and_escaped():
    tree = project_tree()
    tree.write("sum.json", b'"a<b"')
    output = prerender(tree, "article.html").decode()
    assert '<span class="number" data-url="sum.json">a&lt;b</span>' in output


def test_number_span_with_object_value_shows_canonical_json():
    tree = project_tree()
    tree.write("sum.json", b'{ "b" : 1, "a": 2 }')
    output = prerender(tree, "article.html").decode()
    assert '{"a":2,"b":1}' in output


def test_float_scalars_render_canonically():
    assert scalar_text(2.5) == "2.5"
    assert scalar_text(6) == "6"
    assert scalar_text(True) == "true"
    assert scalar_text(None) == "null"


# --- pass-through and idempotence ---------------------------------------------------

def test_article_without_dynamic_spans_passes_through_byte_identically():
    html = (b"<!DOCTYPE html>\n<html><body><article>\n"
            b"<h2>Title</h2><p>plain &amp; simple &#169; text</p>\n"
            b"<!-- comment --><span class=\"other\">kept</span>\n"
            b"</article></body></html>\n")
    tree = MemoryTree({"article.html": html})
    assert prerender(tree, "article.html") == html


def test_prerender_is_idempotent():
    tree = project_tree()
    once = prerender(tree, "article.html")
    tree.write("article.html", once)
    assert prerender(tree, "article.html") == once


def test_missing_targets_are_collected_into_one_error():
    tree = MemoryTree({
        "article.html": b'<span class="number" data-url="a.json"></span>'
                        b'<span class="htmlpart" data-url="b.svg"></span>'})
    with pytest.raises(UnresolvedCitation) as err:
        prerender(tree, "article.html")
    assert err.value.uris == ["a.json", "b.svg"]


def test_missing_article_is_a_render_error():
    with pytest.raises(RenderError):
        prerender(MemoryTree(), "article.html")


# --- htmlpart spans -------------------------------------------------------------------

def test_svg_is_inlined():
    tree = MemoryTree({
        "article.html": b'<article><span class="htmlpart" '
                        b'data-url="results/plot.svg"></span></article>',
        "results/plot.svg": b"<svg><rect/></svg>"})
    output = prerender(tree, "article.html").decode()
    assert "<svg><rect/></svg>" in output


def test_png_stays_an_image_reference():
    tree = MemoryTree({
        "article.html": b'<span class="htmlpart" data-url="img/x.png"></span>',
        "img/x.png": b"\x89PNG fake"})
    output = prerender(tree, "article.html").decode()
    assert '<img src="img/x.png" alt="">' in output
    assert b"PNG fake" not in output.encode()


def test_html_fragments_resolve_recursively():
    tree = MemoryTree({
        "article.html": b'<span class="htmlpart" data-url="part.html"></span>',
        "part.html": b'<em>inner <span class="number" data-url="n.json"></span></em>',
        "n.json": b"42"})
    output = prerender(tree, "article.html").decode()
    assert '<em>inner <span class="number" data-url="n.json">42</span></em>' in output


def test_fragment_inclusion_cycle_is_detected():
    tree = MemoryTree({
        "article.html": b'<span class="htmlpart" data-url="a.html"></span>',
        "a.html": b'<span class="htmlpart" data-url="b.html"></span>',
        "b.html": b'<span class="htmlpart" data-url="a.html"></span>'})
    with pytest.raises(RenderError, match="cycle"):
        prerender(tree, "article.html")


def test_self_closing_spans_from_minimal_articles_work():
    tree = MemoryTree({
        "article.html": b'<p>x = <span class="number" data-url="n.json"/></p>',
        "n.json": b"7"})
    output = prerender(tree, "article.html").decode()
    assert '<span class="number" data-url="n.json">7</span>' in output


# --- reference and source lists ---------------------------------------------------------

def test_reference_list_markup():
    tree = MemoryTree({
        "article.html": b'<div class="references" data-url="lit.bib"></div>',
        "lit.bib": BIB})
    output = prerender(tree, "article.html").decode()
    assert '<li id="shannon1948">C. E. Shannon. A Mathematical Theory of '
    assert "Bell System Technical Journal (1948)." in output
    assert '<a href="https://example.org/shannon1948">link</a>' in output
    assert '<li id="knuth1997">' in output


def test_missing_year_gets_a_placeholder():
    entries, _ = parse_bibtex("@misc{x, title={T}}")
    assert "(n.d.)." in reference_list_html(entries)


def test_empty_bib_renders_an_empty_list():
    tree = MemoryTree({
        "article.html": b'<div class="references" data-url="lit.bib"></div>',
        "lit.bib": b""})
    output = prerender(tree, "article.html").decode()
    assert '<ol class="bibliography"></ol>' in output


def test_source_listing_with_nostore_flag_and_links():
    sources = (b'{"mid.jsonl": {"type": "JSONL", "func": "r.d", "env": "native",'
               b' "nostore": true,'
               b' "params": {"xs": {"type": "JSONL", "uri": "rows.jsonl"}}}}')
    tree = MemoryTree({
        "article.html": b'<div class="sources" data-url="sources.json"></div>',
        "sources.json": sources})
    output = prerender(tree, "article.html").decode()
    assert "(JSONL, not stored)" in output
    assert '<a href="rows.jsonl">rows.jsonl</a>' in output
    assert "<code>r.d</code> [native]" in output


def test_sources_span_falls_back_from_singular_filename():
    tree = MemoryTree({
        "article.html": b'<div class="sources" data-url="source.json"></div>',
        "sources.json": SOURCES})
    output = prerender(tree, "article.html").decode()
    assert "data-sources" in output
    assert "<code>sum.json</code>" in output


# --- anchor labels -------------------------------------------------------------------------

FULL = b"""<html><body><article>
<p>See <a href="#figA"></a> and <a href="#tblB"></a> and <a href="#knuth1997"></a>
and <a href="#shannon1948"></a>; custom <a href="#figA">existing text</a>.</p>
<figure id="figA"><figcaption>f</figcaption></figure>
<table id="tblB"><caption>t</caption></table>
<div class="references" data-url="lit.bib"></div>
</article></body></html>"""


def test_anchor_labels_for_figures_tables_and_citations():
    tree = MemoryTree({"article.html": FULL, "lit.bib": BIB})
    output = prerender(tree, "article.html").decode()
    assert '<a href="#figA">Fig. 1</a>' in output
    assert '<a href="#tblB">Table 1</a>' in output
    assert '<a href="#shannon1948">[1]</a>' in output
    assert '<a href="#knuth1997">[2]</a>' in output
    assert '<a href="#figA">existing text</a>' in output  # authored text kept


def test_unknown_anchor_targets_are_left_alone():
    tree = MemoryTree({"article.html": b'<a href="#mystery"></a>'})
    assert prerender(tree, "article.html") == b'<a href="#mystery"></a>'


# --- bibtex subset ---------------------------------------------------------------------------

def test_bibtex_parses_fields_and_braces():
    entries, diagnostics = parse_bibtex(BIB.decode())
    assert diagnostics == []
    assert [e.key for e in entries] == ["shannon1948", "knuth1997"]
    assert entries[0].entry_type == "article"
    assert entries[0].get("journal") == "Bell System Technical Journal"


def test_bibtex_quoted_values_and_bare_numbers():
    entries, _ = parse_bibtex('@misc{k, title = "Quoted", year = 2001}')
    assert entries[0].get("title") == "Quoted"
    assert entries[0].get("year") == "2001"


def test_bibtex_protective_braces_are_stripped():
    entries, _ = parse_bibtex("@misc{k, title = {The {BIG} Idea}}")
    assert entries[0].get("title") == "The BIG Idea"


def test_bibtex_malformed_entry_is_skipped_with_diagnostic():
    entries, diagnostics = parse_bibtex(
        "@article{good, year = {1}}\n@broken{\n@misc{also, year = {2}}")
    assert [e.key for e in entries] == ["good", "also"]
    assert diagnostics


def test_bibtex_comment_entries_are_ignored():
    entries, _ = parse_bibtex("@comment{whatever}\n@misc{real, year={3}}")
    assert [e.key for e in entries] == ["real"]
