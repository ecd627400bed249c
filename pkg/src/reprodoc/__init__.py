"""Reproducible web publications.

Every computed artifact of a project is declared by a source descriptor in
`sources.json`; descriptors link into an acyclic computation graph over raw
data files; pure functions are executed by per-environment HTTP executors;
content digests decide what is stale; and the article's cited numbers,
figures, and tables regenerate on demand or render to fully static HTML.
"""

from .descriptors import (Finding, ParameterSpec, SourceDescriptor, SourceSet,
                          ValidationReport, expand_wildcards, parse_sources,
                          serialize_sources, validate)
from .errors import ReprodocError
from .formats import DataFormat, FuncHandle, Table, decode, digest, encode, merge_inputs
from .graph import (ComputationPlan, DependencyGraph, Manifest, build_graph, plan,
                    topo_order)
from .project import DirectoryTree, MemoryTree, Project
from .render import prerender
from .scheduler import EnvironmentRegistry, RunReport, Scheduler
from .service import ProjectService

__version__ = "0.1.0"

__all__ = [
    "ComputationPlan", "DataFormat", "DependencyGraph", "DirectoryTree",
    "EnvironmentRegistry", "Finding", "FuncHandle", "Manifest", "MemoryTree",
    "ParameterSpec", "Project", "ProjectService", "ReprodocError", "RunReport",
    "Scheduler", "SourceDescriptor", "SourceSet", "Table", "ValidationReport",
    "build_graph", "decode", "digest", "encode", "expand_wildcards",
    "merge_inputs", "parse_sources", "plan", "prerender", "serialize_sources",
    "topo_order", "validate", "__version__",
]
