"""Restricted code executor child process (line-delimited JSON over stdio)."""

from .runner import PROTOCOL_VERSION, SandboxPolicy, merge_policy, serve_loop

__version__ = "0.1.0"
