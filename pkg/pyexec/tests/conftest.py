import sys
from pathlib import Path

import pytest

FUNCS_DIR = str(Path(__file__).resolve().parent / "funcs")


@pytest.fixture
def py_executor():
    if FUNCS_DIR not in sys.path:
        sys.path.insert(0, FUNCS_DIR)
    from pyexec.server import PyExecutorServer
    import threading
    server = PyExecutorServer("py3")
    thread = threading.Thread(target=server.serve_forever,
                              kwargs={"poll_interval": 0.05}, daemon=True)
    thread.start()
    yield server
    try:
        server.stop()
    except OSError:
        pass
