"""Command line entry point.

    reprodoc validate [--format json|text]
    reprodoc plan [TARGET...] [--force] [--format json|text]
    reprodoc run [TARGET...] [--force] [--jobs N]
    reprodoc serve [--host H] [--port P] [--published]
    reprodoc render ARTICLE [-o OUT]

Exit codes: 0 success, 1 domain failure (findings, failed nodes, unresolved
citations), 2 unusable project (malformed sources.json or bad usage).
Machine-readable output (`--format json`) is canonical JSON.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .descriptors import parse_sources, validate
from .errors import (DuplicateUri, MalformedJson, ReprodocError, SchemaViolation,
                     UnknownTarget, UnresolvedCitation)
from .formats import canonical_json
from .graph import Manifest, build_graph, plan
from .project import Project
from .render import prerender
from .scheduler import OUTCOME_OK, EnvironmentRegistry, Scheduler
from .service import ProjectService

_PARSE_ERRORS = (MalformedJson, SchemaViolation, DuplicateUri)


def _load_project(args) -> Project:
    return Project(args.project)


def _parse_set(project: Project):
    return parse_sources(project.read_sources())


def cmd_validate(args) -> int:
    project = _load_project(args)
    try:
        source_set = _parse_set(project)
    except _PARSE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    report = validate(source_set, project.tree.paths())
    if args.format == "json":
        sys.stdout.buffer.write(canonical_json(report.to_json()) + b"\n")
    else:
        for finding in report.findings:
            where = f"{finding.uri}" + (f" [{finding.param}]" if finding.param else "")
            print(f"finding {finding.kind} at {where}: {finding.message}")
        for note in report.notes:
            print(f"note {note.kind} at {note.uri}: {note.message}")
        print("ok" if report.ok else f"{len(report.findings)} finding(s)")
    return 0 if report.ok else 1


def _build(args, project: Project):
    source_set = _parse_set(project)
    graph = build_graph(source_set, project.tree)
    manifest = Manifest.from_bytes(project.read_manifest())
    return graph, manifest


def cmd_plan(args) -> int:
    project = _load_project(args)
    try:
        graph, manifest = _build(args, project)
    except _PARSE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        computation = plan(graph, manifest, args.targets or None, force=args.force)
    except UnknownTarget as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.format == "json":
        sys.stdout.buffer.write(computation.to_bytes() + b"\n")
    elif computation.empty:
        print("nothing to do")
    else:
        for i, batch in enumerate(computation.batches, start=1):
            print(f"batch {i}: {', '.join(batch)}")
    return 0


def cmd_run(args) -> int:
    project = _load_project(args)
    try:
        graph, manifest = _build(args, project)
        registry = EnvironmentRegistry.from_bytes(project.read_environments())
    except _PARSE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        computation = plan(graph, manifest, args.targets or None, force=args.force)
    except UnknownTarget as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if computation.empty:
        print("nothing to do")
        return 0
    scheduler = Scheduler(project, registry, jobs=args.jobs)
    try:
        report = scheduler.run_plan(graph, computation, manifest)
    except ReprodocError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for uri, node in sorted(report.nodes.items()):
        if node.outcome == OUTCOME_OK:
            print(f"ok      {uri} ({node.wall_ms} ms)")
        elif node.outcome == "failed":
            print(f"failed  {uri}: {node.error}")
        else:
            print(f"skipped {uri}")
    print(f"status: {report.status}")
    return 0 if report.status == "ok" else 1


def cmd_serve(args) -> int:
    project = _load_project(args)
    service = ProjectService(
        project,
        write_token=os.environ.get("REPRODOC_TOKEN"),
        read_token=os.environ.get("REPRODOC_READ_TOKEN"),
        published=args.published,
        jobs=args.jobs)
    server = service.serve(host=args.host, port=args.port)
    print(f"serving {project.root} at {server.base_url}"
          + (" (published, read-only)" if args.published else ""), flush=True)
    try:
        server.serve_forever(poll_interval=0.2)
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def cmd_render(args) -> int:
    project = _load_project(args)
    try:
        output = prerender(project.tree, args.article)
    except UnresolvedCitation as exc:
        print("error: unresolved data citations:", file=sys.stderr)
        for uri in exc.uris:
            print(f"  {uri}", file=sys.stderr)
        return 1
    except ReprodocError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.output:
        Path(args.output).write_bytes(output)
    else:
        sys.stdout.buffer.write(output)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reprodoc",
        description="reproducible publication projects: validate, plan, run, serve, render")
    parser.add_argument("--project", default=".", help="project root (default: cwd)")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("validate", help="check descriptor consistency")
    p.add_argument("--format", choices=["text", "json"], default="text")
    p.set_defaults(handler=cmd_validate)

    p = commands.add_parser("plan", help="show what would be recomputed")
    p.add_argument("targets", nargs="*")
    p.add_argument("--force", action="store_true")
    p.add_argument("--format", choices=["text", "json"], default="text")
    p.set_defaults(handler=cmd_plan)

    p = commands.add_parser("run", help="recompute stale sources")
    p.add_argument("targets", nargs="*")
    p.add_argument("--force", action="store_true")
    p.add_argument("--jobs", type=int, default=None)
    p.set_defaults(handler=cmd_run)

    p = commands.add_parser("serve", help="serve the project over HTTP")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--published", action="store_true",
                   help="read-only deployment: no edits, no compute triggers")
    p.add_argument("--jobs", type=int, default=None)
    p.set_defaults(handler=cmd_serve)

    p = commands.add_parser("render", help="prerender an article to static HTML")
    p.add_argument("article")
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(handler=cmd_render)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    return args.handler(args)


if __name__ == "__main__":
    sys.exit(main())
