"""Python executor for descriptor-driven computation projects."""

from .server import PyExecutorServer, serve

__version__ = "0.1.0"
__all__ = ["PyExecutorServer", "serve", "__version__"]
