/**
 * In-browser article interpreter.
 *
 * Hydrates an article document against its project files: number spans show
 * the cited scalar, htmlpart spans inline SVG/HTML (PNG stays an <img>
 * reference), references/sources divs become generated lists, and empty
 * anchors to figures, tables, and citation keys get labels. The generated
 * markup strings are a cross-component contract with the server-side
 * prerenderer: both produce identical lists for identical inputs.
 *
 * Author controls talk to the project service: edit any file with PUT,
 * trigger recomputation, poll the run, and re-hydrate when it finishes.
 * Network access is restricted to the article's origin plus the configured
 * API base. Math spans are left to whatever TeX renderer the article loads.
 *
 * Distributed as one script: <script type="module" src="interpreter.js">.
 */

export interface BibEntry {
  key: string;
  entryType: string;
  fields: Record<string, string>;
}

export interface SourceEntry {
  outputs: string[];
  format: string;
  func: string;
  env: string;
  nostore: boolean;
  inputs: string[];
}

// --- escaping (matches the prerenderer byte for byte) -----------------------------

function escText(text: string): string {
  return text.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}

function escAttr(text: string): string {
  return text.replace(/&/g, "&amp;").replace(/"/g, "&quot;");
}

// --- BibTeX subset ------------------------------------------------------------------

class Scanner {
  pos = 0;
  constructor(readonly text: string) {}

  eof(): boolean {
    return this.pos >= this.text.length;
  }

  peek(): string {
    return this.eof() ? "" : this.text[this.pos];
  }

  skipWs(): void {
    while (!this.eof() && /\s/.test(this.text[this.pos])) this.pos += 1;
  }

  until(stop: string): string {
    const start = this.pos;
    while (!this.eof() && !stop.includes(this.text[this.pos])) this.pos += 1;
    return this.text.slice(start, this.pos);
  }

  braced(): string {
    let depth = 0;
    const start = this.pos + 1;
    while (!this.eof()) {
      const ch = this.text[this.pos];
      if (ch === "{") depth += 1;
      else if (ch === "}") {
        depth -= 1;
        if (depth === 0) {
          const content = this.text.slice(start, this.pos);
          this.pos += 1;
          return content;
        }
      }
      this.pos += 1;
    }
    throw new Error("unbalanced braces");
  }

  quoted(): string {
    this.pos += 1;
    const start = this.pos;
    while (!this.eof() && this.text[this.pos] !== '"') this.pos += 1;
    if (this.eof()) throw new Error("unterminated quoted value");
    const content = this.text.slice(start, this.pos);
    this.pos += 1;
    return content;
  }
}

function stripBraces(value: string): string {
  return value.replace(/[{}]/g, "").trim();
}

export function parseBibtex(text: string): { entries: BibEntry[]; diagnostics: string[] } {
  const entries: BibEntry[] = [];
  const diagnostics: string[] = [];
  const scanner = new Scanner(text);
  for (;;) {
    scanner.until("@");
    if (scanner.eof()) break;
    scanner.pos += 1;
    const mark = scanner.pos;
    try {
      const entry = parseEntry(scanner);
      if (entry !== null) entries.push(entry);
    } catch (err) {
      diagnostics.push(`skipped malformed entry: ${(err as Error).message}`);
      scanner.pos = mark; // rescan from here so the next entry is not lost
    }
  }
  return { entries, diagnostics };
}

function parseEntry(scanner: Scanner): BibEntry | null {
  const entryType = scanner.until("{(").trim().toLowerCase();
  if (scanner.eof()) throw new Error("entry header without a body");
  if (entryType === "comment" || entryType === "preamble" || entryType === "string") {
    scanner.braced();
    return null;
  }
  if (!/^[a-z]+$/.test(entryType)) throw new Error(`bad entry type '${entryType}'`);
  scanner.pos += 1;
  scanner.skipWs();
  const key = scanner.until(",}").trim();
  if (!key) throw new Error("entry without a citation key");
  if (/[@{}"\\\s]/.test(key)) throw new Error(`bad citation key '${key}'`);
  const fields: Record<string, string> = {};
  for (;;) {
    scanner.skipWs();
    if (scanner.eof()) throw new Error(`unterminated entry '${key}'`);
    if (scanner.peek() === "}") {
      scanner.pos += 1;
      break;
    }
    if (scanner.peek() === ",") {
      scanner.pos += 1;
      continue;
    }
    const name = scanner.until("=,}").trim().toLowerCase();
    scanner.skipWs();
    if (scanner.peek() !== "=") {
      if (name) throw new Error(`field '${name}' of '${key}' has no value`);
      continue;
    }
    scanner.pos += 1;
    scanner.skipWs();
    const ch = scanner.peek();
    let value: string;
    if (ch === "{") value = scanner.braced();
    else if (ch === '"') value = scanner.quoted();
    else value = scanner.until(",}").trim();
    if (name) fields[name] = stripBraces(value);
  }
  return { key, entryType, fields };
}

// --- generated list markup (shared contract with the prerenderer) --------------------

export function referenceListHtml(entries: BibEntry[]): string {
  const items = entries.map((entry) => {
    const parts: string[] = [];
    for (const name of ["author", "title", "journal"]) {
      const value = entry.fields[name];
      if (value) parts.push(escText(value));
    }
    const year = entry.fields["year"] || "n.d.";
    let text = parts.join(". ");
    text = text ? `${text} (${escText(year)}).` : `(${escText(year)}).`;
    const url = entry.fields["url"];
    if (url) text += ` <a href="${escAttr(url)}">link</a>`;
    return `<li id="${escAttr(entry.key)}">${text}</li>`;
  });
  return `<ol class="bibliography">${items.join("")}</ol>`;
}

export function parseSourcesDoc(raw: string): SourceEntry[] {
  const doc = JSON.parse(raw) as Record<string, any>;
  const entries: SourceEntry[] = [];
  for (const key of Object.keys(doc)) {
    const descriptor = doc[key] ?? {};
    const params = descriptor.params ?? {};
    const inputs = new Set<string>();
    for (const name of Object.keys(params)) {
      const uri = params[name]?.uri;
      if (typeof uri === "string") inputs.add(uri);
    }
    entries.push({
      outputs: key.split(","),
      format: String(descriptor.type ?? ""),
      func: String(descriptor.func ?? ""),
      env: String(descriptor.env ?? ""),
      nostore: descriptor.nostore === true || descriptor.type === "FUNC",
      inputs: Array.from(inputs).sort(),
    });
  }
  entries.sort((a, b) => (a.outputs[0] < b.outputs[0] ? -1 : a.outputs[0] > b.outputs[0] ? 1 : 0));
  return entries;
}

export function sourceListHtml(entries: SourceEntry[]): string {
  const items = entries.map((entry) => {
    const key = entry.outputs[0];
    let format = entry.format;
    if (entry.nostore) format += ", not stored";
    let text =
      `<li id="src-${escAttr(key)}">` +
      `<code>${escText(entry.outputs.join(","))}</code> (${escText(format)}) from ` +
      `<code>${escText(entry.func)}</code> [${escText(entry.env)}]`;
    if (entry.inputs.length) {
      const links = entry.inputs
        .map((uri) => `<a href="${escAttr(uri)}">${escText(uri)}</a>`)
        .join(", ");
      text += `; inputs: ${links}`;
    }
    return text + "</li>";
  });
  return `<ul class="data-sources">${items.join("")}</ul>`;
}

// --- scalar rendering --------------------------------------------------------------------

function canonicalStringify(value: unknown): string {
  if (value === null || typeof value !== "object") return JSON.stringify(value);
  if (Array.isArray(value)) return `[${value.map(canonicalStringify).join(",")}]`;
  const keys = Object.keys(value as object).sort();
  const body = keys.map(
    (k) => `${JSON.stringify(k)}:${canonicalStringify((value as any)[k])}`,
  );
  return `{${body.join(",")}}`;
}

/** Text shown inside a number span. Strings are unquoted; bare numeric
 * scalars keep their canonical file spelling (so 2.0 stays "2.0"). */
export function scalarText(raw: string): string {
  const trimmed = raw.trim();
  let value: unknown;
  try {
    value = JSON.parse(trimmed);
  } catch {
    throw new Error("number target is not JSON");
  }
  if (typeof value === "string") return value;
  if (value !== null && typeof value === "object") return canonicalStringify(value);
  return trimmed;
}

// --- hydration ---------------------------------------------------------------------------

export interface HydrateOptions {
  /** fetch implementation; defaults to the document window's fetch */
  fetch?: (url: string) => Promise<{ ok: boolean; status: number; text(): Promise<string> }>;
  /** additional allowed URL prefix (the API base) */
  apiBase?: string;
}

const DYNAMIC_KINDS = ["number", "htmlpart", "references", "sources"] as const;
const IMG_EXTENSIONS = [".png", ".jpg", ".jpeg", ".gif"];

function documentBase(doc: Document): string {
  return doc.baseURI || doc.location?.href || "http://localhost/";
}

function guardUrl(uri: string, doc: Document, apiBase?: string): string {
  const base = documentBase(doc);
  const url = new URL(uri, base);
  const origin = new URL(base).origin;
  const allowed =
    url.origin === origin || (apiBase !== undefined && url.href.startsWith(apiBase));
  if (!allowed) {
    throw new Error(`refusing to fetch outside the article origin: ${url.href}`);
  }
  return url.href;
}

async function fetchProjectText(
  uri: string,
  doc: Document,
  options: HydrateOptions,
): Promise<string> {
  const href = guardUrl(uri, doc, options.apiBase);
  const fetchImpl =
    options.fetch ?? (doc.defaultView as any)?.fetch?.bind(doc.defaultView);
  if (!fetchImpl) throw new Error("no fetch implementation available");
  const response = await fetchImpl(href);
  if (!response.ok) throw new Error(`${uri}: HTTP ${response.status}`);
  return response.text();
}

function dynamicKind(el: Element): (typeof DYNAMIC_KINDS)[number] | null {
  const classes = (el.getAttribute("class") ?? "").split(/\s+/);
  if (!el.getAttribute("data-url")) return null;
  for (const kind of DYNAMIC_KINDS) {
    if (classes.includes(kind)) return kind;
  }
  return null;
}

function errorBadge(el: Element, uri: string, doc: Document): void {
  // never silently blank: a visible badge marks the unresolved citation
  el.innerHTML = `<span class="citation-error">unresolved: ${escText(uri)}</span>`;
}

async function buildLabels(
  doc: Document,
  options: HydrateOptions,
): Promise<{ labels: Map<string, string>; bib: Map<string, BibEntry[]> }> {
  const labels = new Map<string, string>();
  const bib = new Map<string, BibEntry[]>();
  doc.querySelectorAll("figure[id]").forEach((el, i) => {
    labels.set(el.getAttribute("id")!, `Fig. ${i + 1}`);
  });
  doc.querySelectorAll("table[id]").forEach((el, i) => {
    labels.set(el.getAttribute("id")!, `Table ${i + 1}`);
  });
  for (const el of Array.from(doc.querySelectorAll("[data-url]"))) {
    if (dynamicKind(el) !== "references") continue;
    const uri = el.getAttribute("data-url")!;
    try {
      const { entries } = parseBibtex(await fetchProjectText(uri, doc, options));
      bib.set(uri, entries);
      entries.forEach((entry, i) => {
        if (!labels.has(entry.key)) labels.set(entry.key, `[${i + 1}]`);
      });
    } catch {
      /* resolution failures surface as badges during the main pass */
    }
  }
  return { labels, bib };
}

async function resolveElement(
  el: Element,
  doc: Document,
  options: HydrateOptions,
  bib: Map<string, BibEntry[]>,
  visited: string[],
): Promise<void> {
  const kind = dynamicKind(el)!;
  const uri = el.getAttribute("data-url")!;
  try {
    if (kind === "number") {
      el.textContent = scalarText(await fetchProjectText(uri, doc, options));
      return;
    }
    if (kind === "references") {
      const entries =
        bib.get(uri) ?? parseBibtex(await fetchProjectText(uri, doc, options)).entries;
      el.innerHTML = referenceListHtml(entries);
      return;
    }
    if (kind === "sources") {
      let raw: string;
      try {
        raw = await fetchProjectText(uri, doc, options);
      } catch (err) {
        // the descriptor document is sources.json; articles written against
        // the singular spelling resolve to the same file
        if (uri.split("/").pop() === "source.json") {
          const fallback = uri.replace(/source\.json$/, "sources.json");
          raw = await fetchProjectText(fallback, doc, options);
        } else {
          throw err;
        }
      }
      el.innerHTML = sourceListHtml(parseSourcesDoc(raw));
      return;
    }
    // htmlpart
    const lower = uri.toLowerCase();
    if (IMG_EXTENSIONS.some((ext) => lower.endsWith(ext))) {
      el.innerHTML = `<img src="${escAttr(uri)}" alt="">`;
      return;
    }
    if (visited.includes(uri)) {
      throw new Error(`htmlpart inclusion cycle: ${[...visited, uri].join(" -> ")}`);
    }
    const fragment = await fetchProjectText(uri, doc, options);
    if (lower.endsWith(".html") || lower.endsWith(".htm") || lower.endsWith(".svg")) {
      el.innerHTML = fragment;
      visited.push(uri);
      try {
        for (const child of Array.from(el.querySelectorAll("[data-url]"))) {
          if (dynamicKind(child)) {
            await resolveElement(child, doc, options, bib, visited);
          }
        }
      } finally {
        visited.pop();
      }
    } else {
      el.textContent = fragment;
    }
  } catch {
    errorBadge(el, uri, doc);
  }
}

/** Resolve every dynamic span and anchor label in the document. Idempotent:
 * hydrating an already hydrated document changes nothing. */
export async function hydrate(doc: Document, options: HydrateOptions = {}): Promise<void> {
  const { labels, bib } = await buildLabels(doc, options);
  for (const el of Array.from(doc.querySelectorAll("[data-url]"))) {
    if (dynamicKind(el)) {
      await resolveElement(el, doc, options, bib, []);
    }
  }
  doc.querySelectorAll('a[href^="#"]').forEach((anchor) => {
    const target = anchor.getAttribute("href")!.slice(1);
    const label = labels.get(target);
    if (label !== undefined && !(anchor.textContent ?? "").trim()) {
      anchor.textContent = label;
    }
  });
}

// --- author controls -----------------------------------------------------------------------

export interface AuthorControlsOptions {
  token: string;
  apiBase?: string; // defaults to the article origin
  pollMs?: number;
  fetch?: HydrateOptions["fetch"];
}

export class AuthorControls {
  readonly panel: Element;
  private readonly doc: Document;
  private readonly token: string;
  private readonly apiBase: string;
  private readonly pollMs: number;
  private active = false;

  constructor(doc: Document, options: AuthorControlsOptions) {
    this.doc = doc;
    this.token = options.token;
    this.apiBase = options.apiBase ?? new URL(documentBase(doc)).origin;
    this.pollMs = options.pollMs ?? 300;
    this.panel = doc.createElement("div");
    this.panel.setAttribute("class", "author-controls");
    this.panel.innerHTML =
      '<div class="run-row">' +
      '<button class="recompute-all">recompute all</button>' +
      '<span class="run-status"></span></div>' +
      '<div class="edit-row">' +
      '<input class="edit-path" placeholder="project file">' +
      '<button class="edit-load">load</button>' +
      '<button class="edit-save">save</button></div>' +
      '<textarea class="edit-text"></textarea>' +
      '<div class="login-prompt" hidden>authentication required: ' +
      "set a valid write token</div>";
    doc.body.appendChild(this.panel);
    this.query(".recompute-all").addEventListener("click", () => {
      void this.triggerRun([]);
    });
    this.query(".edit-load").addEventListener("click", () => {
      void this.loadFile();
    });
    this.query(".edit-save").addEventListener("click", () => {
      void this.saveFile();
    });
  }

  query(selector: string): HTMLElement {
    return this.panel.querySelector(selector) as HTMLElement;
  }

  private get fetchImpl() {
    return (
      (this.doc.defaultView as any)?.fetch?.bind(this.doc.defaultView) ??
      (globalThis as any).fetch
    );
  }

  private setStatus(text: string): void {
    this.query(".run-status").textContent = text;
  }

  private showLogin(): void {
    this.query(".login-prompt").removeAttribute("hidden");
  }

  /** POST /api/compute and poll the run to completion; re-hydrates on success. */
  async triggerRun(targets: string[], force = false): Promise<string> {
    if (this.active) return "busy";
    const button = this.query(".recompute-all") as HTMLButtonElement;
    this.active = true;
    button.setAttribute("disabled", "");
    try {
      const response = await this.fetchImpl(`${this.apiBase}/api/compute`, {
        method: "POST",
        headers: {
          "Content-Type": "application/json",
          Authorization: `Bearer ${this.token}`,
        },
        body: JSON.stringify({ targets, force }),
      });
      if (response.status === 401) {
        this.showLogin();
        this.setStatus("unauthorized");
        return "unauthorized";
      }
      if (response.status === 409) {
        this.setStatus("another run is active");
        return "busy";
      }
      if (!response.ok) {
        this.setStatus(`trigger failed: HTTP ${response.status}`);
        return "failed";
      }
      const runId = (await response.json()).run_id as string;
      this.setStatus("running");
      const state = await this.pollRun(runId);
      this.setStatus(state);
      if (state === "ok") {
        await hydrate(this.doc, { apiBase: this.apiBase, fetch: this.fetchImpl });
      }
      return state;
    } finally {
      this.active = false;
      button.removeAttribute("disabled");
    }
  }

  private async pollRun(runId: string): Promise<string> {
    for (;;) {
      const response = await this.fetchImpl(`${this.apiBase}/api/runs/${runId}`, {
        headers: { Authorization: `Bearer ${this.token}` },
      });
      if (!response.ok) return `poll failed: HTTP ${response.status}`;
      const body = await response.json();
      if (body.state === "done") {
        if (body.error) return `failed: ${body.error}`;
        const report = body.report ?? {};
        if (report.status === "ok") return "ok";
        const nodes = report.nodes ?? {};
        const failed = Object.keys(nodes).filter(
          (uri) => nodes[uri].outcome === "failed",
        );
        const excerpt = failed.length
          ? ` ${failed[0]}: ${nodes[failed[0]].error ?? ""}`
          : "";
        return `failed:${excerpt}`;
      }
      await new Promise((resolve) => setTimeout(resolve, this.pollMs));
    }
  }

  async loadFile(): Promise<void> {
    const path = (this.query(".edit-path") as HTMLInputElement).value;
    try {
      const text = await fetchProjectText(path, this.doc, {
        apiBase: this.apiBase,
        fetch: this.fetchImpl,
      });
      (this.query(".edit-text") as HTMLTextAreaElement).value = text;
      this.setStatus(`loaded ${path}`);
    } catch (err) {
      this.setStatus(`load failed: ${(err as Error).message}`);
    }
  }

  async saveFile(): Promise<void> {
    const path = (this.query(".edit-path") as HTMLInputElement).value;
    const body = (this.query(".edit-text") as HTMLTextAreaElement).value;
    const href = guardUrl(path, this.doc, this.apiBase);
    const response = await this.fetchImpl(href, {
      method: "PUT",
      headers: { Authorization: `Bearer ${this.token}` },
      body,
    });
    if (response.status === 401) {
      this.showLogin();
      this.setStatus("unauthorized");
    } else if (response.ok) {
      this.setStatus(`saved ${path}`);
    } else {
      this.setStatus(`save failed: HTTP ${response.status}`);
    }
  }
}

export function authorControls(
  doc: Document,
  options: AuthorControlsOptions,
): AuthorControls {
  return new AuthorControls(doc, options);
}

// --- script-tag auto-initialisation ----------------------------------------------------------

declare global {
  interface Window {
    REPRODOC_TOKEN?: string;
  }
}

if (typeof document !== "undefined" && (document as any).currentScript) {
  const start = () => {
    void hydrate(document).then(() => {
      const token = (window as Window).REPRODOC_TOKEN;
      if (token) authorControls(document, { token });
    });
  };
  if (document.readyState === "loading") {
    document.addEventListener("DOMContentLoaded", start);
  } else {
    start();
  }
}
