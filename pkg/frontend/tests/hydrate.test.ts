import { Window } from "happy-dom";
import { describe, expect, it } from "vitest";

import { hydrate } from "../src/interpreter";

const ORIGIN = "http://project.test";

function makeWindow(html: string): Window {
  const window = new Window({
    url: `${ORIGIN}/article.html`,
    settings: {
      disableJavaScriptFileLoading: true,
      disableJavaScriptEvaluation: true,
      disableCSSFileLoading: true,
    },
  });
  window.document.write(html);
  return window;
}

function stubFetch(files: Record<string, string>) {
  const seen: string[] = [];
  const fetchImpl = async (url: string) => {
    seen.push(url);
    const path = new URL(url).pathname.replace(/^\//, "");
    if (path in files) {
      return { ok: true, status: 200, text: async () => files[path] };
    }
    return { ok: false, status: 404, text: async () => "" };
  };
  return { fetchImpl, seen };
}

describe("hydrate", () => {
  it("fills number spans with the cited scalar", async () => {
    const window = makeWindow(
      '<article><span class="number" data-url="sum.json"></span></article>',
    );
    const { fetchImpl } = stubFetch({ "sum.json": "6" });
    await hydrate(window.document as any, { fetch: fetchImpl });
    const span = window.document.querySelector("span")!;
    expect(span.textContent).toBe("6");
  });

  it("leaves documents without dynamic spans untouched", async () => {
    const html = '<article><p>static &amp; plain</p><span class="other">x</span></article>';
    const window = makeWindow(html);
    const before = window.document.body.innerHTML;
    await hydrate(window.document as any, { fetch: stubFetch({}).fetchImpl });
    expect(window.document.body.innerHTML).toBe(before);
  });

  it("marks unresolved targets with a visible badge", async () => {
    const window = makeWindow(
      '<article><span class="number" data-url="missing.json"></span></article>',
    );
    await hydrate(window.document as any, { fetch: stubFetch({}).fetchImpl });
    const badge = window.document.querySelector(".citation-error")!;
    expect(badge).not.toBeNull();
    expect(badge.textContent).toContain("missing.json");
  });

  it("inlines svg htmlparts and keeps png as an image reference", async () => {
    const window = makeWindow(
      '<article><span class="htmlpart" data-url="plot.svg"></span>' +
        '<span class="htmlpart" data-url="img.png"></span></article>',
    );
    const { fetchImpl } = stubFetch({
      "plot.svg": "<svg><rect></rect></svg>",
      "img.png": "binary",
    });
    await hydrate(window.document as any, { fetch: fetchImpl });
    const html = window.document.body.innerHTML;
    expect(html).toContain("<svg><rect></rect></svg>");
    expect(html).toContain('<img src="img.png" alt="">');
  });

  it("resolves nested htmlparts recursively with a cycle guard", async () => {
    const window = makeWindow(
      '<article><span class="htmlpart" data-url="part.html"></span></article>',
    );
    const { fetchImpl } = stubFetch({
      "part.html": '<em><span class="number" data-url="n.json"></span></em>',
      "n.json": "42",
    });
    await hydrate(window.document as any, { fetch: fetchImpl });
    expect(window.document.body.innerHTML).toContain(">42</span></em>");

    const cyclic = makeWindow(
      '<article><span class="htmlpart" data-url="a.html"></span></article>',
    );
    const cycle = stubFetch({
      "a.html": '<span class="htmlpart" data-url="a.html"></span>',
    });
    await hydrate(cyclic.document as any, { fetch: cycle.fetchImpl });
    expect(cyclic.document.body.innerHTML).toContain("citation-error");
  });

  it("labels empty anchors to figures, tables, and citations", async () => {
    const window = makeWindow(
      "<article>" +
        '<p><a href="#fig1"></a> <a href="#tab1"></a> <a href="#alpha2020"></a>' +
        ' <a href="#fig1">kept</a></p>' +
        '<figure id="fig1"></figure><table id="tab1"></table>' +
        '<div class="references" data-url="lit.bib"></div></article>',
    );
    const { fetchImpl } = stubFetch({
      "lit.bib": "@misc{alpha2020, title={A}, year={2020}}",
    });
    await hydrate(window.document as any, { fetch: fetchImpl });
    const anchors = Array.from(window.document.querySelectorAll("a")).map(
      (a) => a.textContent,
    );
    expect(anchors).toEqual(["Fig. 1", "Table 1", "[1]", "kept"]);
  });

  it("is idempotent", async () => {
    const window = makeWindow(
      "<article>" +
        '<p><a href="#f"></a><span class="number" data-url="n.json"></span></p>' +
        '<figure id="f"></figure>' +
        '<div class="references" data-url="lit.bib"></div></article>',
    );
    const { fetchImpl } = stubFetch({
      "n.json": "7",
      "lit.bib": "@misc{k, title={T}, year={1}}",
    });
    await hydrate(window.document as any, { fetch: fetchImpl });
    const once = window.document.body.innerHTML;
    await hydrate(window.document as any, { fetch: fetchImpl });
    expect(window.document.body.innerHTML).toBe(once);
  });

  it("falls back from source.json to sources.json", async () => {
    const window = makeWindow(
      '<article><div class="sources" data-url="source.json"></div></article>',
    );
    const { fetchImpl } = stubFetch({
      "sources.json": JSON.stringify({
        "x.json": { type: "JSON", func: "f.g", env: "e", params: {} },
      }),
    });
    await hydrate(window.document as any, { fetch: fetchImpl });
    expect(window.document.body.innerHTML).toContain("data-sources");
  });

  it("never fetches outside the article origin", async () => {
    const window = makeWindow(
      '<article><span class="number" data-url="http://evil.test/x.json"></span>' +
        '<span class="number" data-url="n.json"></span></article>',
    );
    const { fetchImpl, seen } = stubFetch({
      "n.json": "1",
      "x.json": "13",
    });
    await hydrate(window.document as any, { fetch: fetchImpl });
    expect(seen.every((url) => url.startsWith(ORIGIN))).toBe(true);
    expect(window.document.body.innerHTML).toContain("citation-error");
  });
});
