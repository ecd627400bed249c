import json
import shutil
import sys
from pathlib import Path

import pytest

from reprodoc.executor import ExecutorCore, ExecutorServer, builtin_registry

DEMO_DIR = Path(__file__).resolve().parent.parent / "demo"

# launch command pinned to the running interpreter so tests do not depend on
# what "python3" resolves to
EXECUTOR_CMD = [sys.executable, "-m", "reprodoc.executor", "{env}"]


def write_project(root: Path, sources: dict, files: dict[str, bytes] | None = None,
                  envs: dict | None = None) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    (root / "sources.json").write_bytes(json.dumps(sources).encode())
    for uri, data in (files or {}).items():
        path = root / uri
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
    if envs is None:
        envs = {"native": {"cmd": EXECUTOR_CMD, "max": 2}}
    (root / "environments.json").write_bytes(json.dumps(envs).encode())
    return root


@pytest.fixture
def demo_project(tmp_path):
    root = tmp_path / "proj"
    shutil.copytree(DEMO_DIR, root)
    envs = {"native": {"cmd": EXECUTOR_CMD, "max": 2}}
    (root / "environments.json").write_text(json.dumps(envs))
    return root


@pytest.fixture
def native_executor():
    server = ExecutorServer(ExecutorCore(builtin_registry(), "native"))
    server.start()
    yield server
    try:
        server.stop()
    except OSError:
        pass
