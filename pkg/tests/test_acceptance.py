"""Acceptance suite: one test per acceptance criterion, one printed line each.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
PASS/FAIL lines alongside pytest's own output.
"""

import functools
import json
import os
import random
import shutil
import signal
import subprocess
import sys
import tempfile
import time
from pathlib import Path

import pytest

from conftest import DEMO_DIR, EXECUTOR_CMD, write_project
from genproject import random_dag_project, random_source_set
from test_graph import fake_run, oracle_dirty, perturb
from reprodoc.cli import main as cli_main
from reprodoc.descriptors import parse_sources, serialize_sources
from reprodoc.errors import CycleError, UnresolvedCitation
from reprodoc.formats import DataFormat, decode, digest, encode
from reprodoc.graph import Manifest, build_graph, plan
from reprodoc.project import DirectoryTree, Project
from reprodoc.render import prerender
from reprodoc.scheduler import EnvironmentRegistry, Scheduler


def criterion(name):
    def decorate(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                fn(*args, **kwargs)
            except BaseException:
                print(f"\nACCEPTANCE {name}: FAIL")
                raise
            print(f"\nACCEPTANCE {name}: PASS")
        return wrapper
    return decorate


# --- 1. descriptor round-trip ---------------------------------------------------------

@criterion("descriptor-round-trip (200 random source sets)")
def test_descriptor_round_trip():
    rng = random.Random(1001)
    for _ in range(200):
        source_set = random_source_set(rng)
        data = serialize_sources(source_set)
        reparsed = parse_sources(data)
        assert reparsed == source_set
        assert serialize_sources(reparsed) == data  # byte-exact canonical form


# --- 2. planner oracle equivalence -----------------------------------------------------

@criterion("planner-oracle-equivalence (500 random DAGs, < 10 s)")
def test_planner_oracle_equivalence():
    rng = random.Random(2002)
    started = time.monotonic()
    for _ in range(500):
        project = random_dag_project(rng, max_nodes=20)
        graph, manifest = fake_run(project)
        for _ in range(rng.randint(0, 3)):
            perturb(rng, project, manifest)
        source_set = project.source_set()
        targets = None
        if rng.random() < 0.4:
            outputs = sorted(source_set.outputs)
            targets = set(rng.sample(outputs, rng.randint(1, len(outputs))))
        force = rng.random() < 0.05
        graph = build_graph(source_set, project.tree)
        computation = plan(graph, manifest, targets=targets, force=force)
        expected = oracle_dirty(project, manifest, targets=targets, force=force)
        assert computation.dirty == expected
    elapsed = time.monotonic() - started
    assert elapsed < 10.0, f"planner oracle sweep took {elapsed:.1f}s"


# --- 3. cycle detection ----------------------------------------------------------------

def _doc_edges(doc):
    edges = set()
    for key, descriptor in doc.items():
        outputs = key.split(",")
        for param in descriptor.get("params", {}).values():
            if "uri" in param:
                for out in outputs:
                    edges.add((param["uri"], out))
    return edges


@criterion("cycle-detection (100 randomly cyclized graphs)")
def test_cycle_detection():
    rng = random.Random(3003)
    made = 0
    while made < 100:
        project = random_dag_project(rng, max_nodes=12)
        doc = project.doc
        formats = {}
        for key, descriptor in doc.items():
            for out in key.split(","):
                formats[out] = descriptor["type"]
        keys = sorted(doc)
        key = rng.choice(keys)
        outputs = key.split(",")
        # choose a descendant of this descriptor (or itself) and feed it back in
        edges = _doc_edges(doc)
        children = {}
        for src, dst in edges:
            children.setdefault(src, set()).add(dst)
        reachable = set()
        frontier = list(outputs)
        while frontier:
            node = frontier.pop()
            for child in children.get(node, ()):
                if child not in reachable:
                    reachable.add(child)
                    frontier.append(child)
        target = rng.choice(sorted(reachable)) if reachable and rng.random() < 0.7 \
            else outputs[0]
        doc[key].setdefault("params", {})["backref"] = {
            "type": formats[target], "uri": target}
        made += 1
        source_set = project.source_set()
        with pytest.raises(CycleError) as err:
            build_graph(source_set, project.tree)
        cycle = err.value.cycle
        assert len(cycle) >= 2 and cycle[0] == cycle[-1]
        all_edges = _doc_edges(doc)
        for a, b in zip(cycle, cycle[1:]):
            # witness follows real reference edges (parent -> appears as (a <- b))
            assert (a, b) in all_edges or (b, a) in all_edges


# --- 4. reproducibility ------------------------------------------------------------------

def _fresh_demo(root: Path) -> Path:
    target = root / "demo"
    shutil.copytree(DEMO_DIR, target)
    envs = {"native": {"cmd": EXECUTOR_CMD, "max": 2}}
    (target / "environments.json").write_text(json.dumps(envs))
    return target


def _generated_state(root: Path) -> dict[str, str]:
    state = {}
    for uri in ("sum.json", "results/plot1.svg"):
        state[uri] = digest((root / uri).read_bytes())
    manifest = json.loads((root / ".prov/manifest.json").read_bytes())
    for uri, entry in manifest["entries"].items():
        state[f"manifest:{uri}:inputs"] = json.dumps(entry["inputs"], sort_keys=True)
        state[f"manifest:{uri}:code"] = entry["code"]
        state[f"manifest:{uri}:output"] = entry["output"]
    return state


@criterion("reproducibility (demo runs twice, byte-identical, < 10 s)")
def test_reproducibility(tmp_path):
    started = time.monotonic()
    root = _fresh_demo(tmp_path)
    assert cli_main(["--project", str(root), "run"]) == 0
    first = _generated_state(root)
    rendered_first = prerender(DirectoryTree(root), "article.html")
    # wipe every generated artifact and run from clean again
    (root / "sum.json").unlink()
    shutil.rmtree(root / "results")
    shutil.rmtree(root / ".prov")
    assert cli_main(["--project", str(root), "run"]) == 0
    assert _generated_state(root) == first
    assert prerender(DirectoryTree(root), "article.html") == rendered_first
    # second plan is empty
    project = Project(root)
    graph = build_graph(parse_sources(project.read_sources()), project.tree)
    assert plan(graph, Manifest.from_bytes(project.read_manifest())).empty
    elapsed = time.monotonic() - started
    assert elapsed < 10.0, f"demo double run took {elapsed:.1f}s"


# --- 5. crash safety ------------------------------------------------------------------------

class SimulatedCrash(BaseException):
    """Raised by the harness at an injected filesystem-mutation point."""


class CrashTree(DirectoryTree):
    """Counts mutations; dies before, in the middle of, or after the k-th write."""

    def __init__(self, root, crash_at: int, mode: str):
        super().__init__(root)
        self.mutations = 0
        self.crash_at = crash_at
        self.mode = mode

    def write(self, uri, data):
        self.mutations += 1
        shot = self.mutations == self.crash_at
        if shot and self.mode == "before":
            raise SimulatedCrash(uri)
        if shot and self.mode == "mid":
            # the kill lands between the temp write and the rename
            target = self._path(uri)
            target.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=target.parent)
            with os.fdopen(fd, "wb") as handle:
                handle.write(data)
            raise SimulatedCrash(uri)
        super().write(uri, data)
        if shot and self.mode == "after":
            raise SimulatedCrash(uri)


CHAIN = {
    "c1.json": {"type": "JSON", "func": "core.identity", "env": "native",
                "params": {"x": {"type": "JSON", "uri": "seed.json"}}},
    "c2.json": {"type": "JSON", "func": "core.identity", "env": "native",
                "params": {"x": {"type": "JSON", "uri": "c1.json"}}},
    "c3.json": {"type": "JSON", "func": "core.identity", "env": "native",
                "params": {"x": {"type": "JSON", "uri": "c2.json"}}},
}
CHAIN_FILES = {"seed.json": b'{"v":41}'}
CHAIN_OUTPUTS = ("c1.json", "c2.json", "c3.json")


def _run_chain(root: Path, tree=None):
    project = Project(root)
    if tree is not None:
        project.tree = tree
    source_set = parse_sources(project.read_sources())
    graph = build_graph(source_set, project.tree)
    manifest = Manifest.from_bytes(project.read_manifest())
    registry = EnvironmentRegistry.from_bytes(project.read_environments())
    scheduler = Scheduler(project, registry, jobs=1)
    computation = plan(graph, manifest)
    return scheduler.run_plan(graph, computation, manifest)


def _check_crash_invariants(root: Path):
    # every surviving final-path file is complete, and every manifest entry
    # has its output on disk with the recorded digest
    for uri in CHAIN_OUTPUTS:
        path = root / uri
        if path.exists():
            assert path.read_bytes() == b'{"v":41}', f"partial file at {uri}"
    manifest_path = root / ".prov/manifest.json"
    if manifest_path.exists():
        manifest = Manifest.from_bytes(manifest_path.read_bytes())
        for uri, entry in manifest.entries.items():
            assert entry.output_digest is not None
            assert (root / uri).exists(), f"manifest entry without output: {uri}"
            assert digest((root / uri).read_bytes()) == entry.output_digest
    visible = DirectoryTree(root).paths()
    expected = {"sources.json", "environments.json", "seed.json", *CHAIN_OUTPUTS}
    assert visible <= expected, f"unexpected visible files: {visible - expected}"


@criterion("crash-safety (20 injected kill points + SIGKILL smoke)")
def test_crash_safety(tmp_path):
    rng = random.Random(5005)
    # reference run: count mutations and freeze expected output bytes
    reference = write_project(tmp_path / "ref", CHAIN, CHAIN_FILES)
    counter = CrashTree(reference, crash_at=0, mode="before")
    report = _run_chain(reference, tree=counter)
    assert report.status == "ok"
    total_writes = counter.mutations
    assert total_writes >= 6  # 3 outputs + 3 manifest saves

    for trial in range(20):
        crash_at = rng.randint(1, total_writes)
        mode = rng.choice(["before", "mid", "after"])
        root = write_project(tmp_path / f"t{trial}", CHAIN, CHAIN_FILES)
        tree = CrashTree(root, crash_at=crash_at, mode=mode)
        try:
            _run_chain(root, tree=tree)
        except SimulatedCrash:
            pass
        _check_crash_invariants(root)
        # recovery: a plain rerun completes and converges
        report = _run_chain(root)
        assert report.status == "ok" or report.nodes == {}
        for uri in CHAIN_OUTPUTS:
            assert (root / uri).read_bytes() == b'{"v":41}'
        project = Project(root)
        graph = build_graph(parse_sources(project.read_sources()), project.tree)
        assert plan(graph, Manifest.from_bytes(project.read_manifest())).empty

    # real SIGKILL against the CLI, twice, at arbitrary moments
    slow = {
        "s1.json": {"type": "JSON", "func": "slow.echo", "env": "native",
                    "params": {"x": {"type": "JSON", "val": 7},
                               "delay": {"type": "JSON", "val": 0.4}}},
        "s2.json": {"type": "JSON", "func": "slow.echo", "env": "native",
                    "params": {"x": {"type": "JSON", "uri": "s1.json"},
                               "delay": {"type": "JSON", "val": 0.4}}},
    }
    for trial, kill_after in enumerate((0.9, 1.3)):
        root = write_project(tmp_path / f"kill{trial}", slow)
        process = subprocess.Popen(
            [sys.executable, "-m", "reprodoc.cli", "--project", str(root), "run"],
            stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
        time.sleep(kill_after)
        process.send_signal(signal.SIGKILL)
        process.wait(timeout=10)
        subprocess.run(["pkill", "-f", f"reprodoc.executor"], check=False)
        for uri in ("s1.json", "s2.json"):
            path = root / uri
            if path.exists():
                assert path.read_bytes() == b"7", f"partial file at {uri}"
        manifest_path = root / ".prov/manifest.json"
        if manifest_path.exists():
            manifest = Manifest.from_bytes(manifest_path.read_bytes())
            for uri, entry in manifest.entries.items():
                assert (root / uri).exists()
                assert digest((root / uri).read_bytes()) == entry.output_digest


# --- 6. canonical encoding fixed point ---------------------------------------------------

def _fixture_corpus():
    yield DEMO_DIR / "data/rows.csv", DataFormat.CSV
    yield DEMO_DIR / "sources.json", DataFormat.JSON
    yield DEMO_DIR / "literature.bib", DataFormat.TXT
    yield DEMO_DIR / "article.html", DataFormat.TXT


EXTRA_SAMPLES = [
    (b'{ "z" : 1, "a": [1, 2.50, 1e2] }', DataFormat.JSON),
    (b'1\r\n{"k": "v"}\r\n\r\n"text"\r\n', DataFormat.JSONL),
    (b'a,b\r\n"1","x,y"\r\n2,plain\r\n', DataFormat.CSV),
    ("unicode café → done\n".encode("utf-8"), DataFormat.TXT),
]


@criterion("canonical-encoding-fixed-point (fixture corpus)")
def test_canonical_encoding_fixed_point(tmp_path):
    samples = [(path.read_bytes(), fmt) for path, fmt in _fixture_corpus()]
    samples += EXTRA_SAMPLES
    # include generated outputs of a real run
    root = _fresh_demo(tmp_path)
    assert cli_main(["--project", str(root), "run"]) == 0
    samples.append(((root / "sum.json").read_bytes(), DataFormat.JSON))
    samples.append(((root / "results/plot1.svg").read_bytes(), DataFormat.TXT))
    for data, fmt in samples:
        canonical = encode(decode(data, fmt), fmt)
        assert encode(decode(canonical, fmt), fmt) == canonical


# --- 7. nostore semantics ---------------------------------------------------------------

@criterion("nostore-semantics (intermediate never stored, consumers correct)")
def test_nostore_semantics(tmp_path):
    sources = {
        "mid.jsonl": {"type": "JSONL", "func": "rows.double", "env": "native",
                      "nostore": True,
                      "params": {"xs": {"type": "JSONL", "uri": "rows.jsonl"}}},
        "sum.json": {"type": "JSON", "func": "stats.sum", "env": "native",
                     "params": {"xs": {"type": "JSONL", "uri": "mid.jsonl"}}},
    }
    root = write_project(tmp_path / "p", sources, {"rows.jsonl": b"1\n2\n3\n"})
    assert cli_main(["--project", str(root), "run"]) == 0
    assert (root / "sum.json").read_bytes() == b"12"
    assert not (root / "mid.jsonl").exists()
    for path in root.rglob("mid.jsonl"):
        raise AssertionError(f"nostore uri found on disk at {path}")
    stored = Manifest.from_bytes((root / ".prov/manifest.json").read_bytes())
    assert stored.entries["mid.jsonl"].output_digest is None


# --- 8. prerender fails before, succeeds after -------------------------------------------

@criterion("prerender-unresolved-then-resolved (demo article)")
def test_prerender_unresolved_then_resolved(tmp_path):
    root = _fresh_demo(tmp_path)
    tree = DirectoryTree(root)
    with pytest.raises(UnresolvedCitation) as err:
        prerender(tree, "article.html")
    assert set(err.value.uris) == {"sum.json", "results/plot1.svg"}
    assert cli_main(["--project", str(root), "run"]) == 0
    output = prerender(tree, "article.html").decode()
    assert '<span class="number" data-url="sum.json">6</span>' in output
    assert "<svg" in output
