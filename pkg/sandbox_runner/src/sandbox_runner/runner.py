"""Executor child process: runs submitted code in a restricted scope.

Speaks line-delimited JSON (UTF-8, one object per line) on stdio:

  parent -> {"type": "hello", "version": 1, "tools": [...], "policy": {...}}
  child  -> {"type": "hello", "version": 1}
  parent -> {"type": "exec", "id": ..., "code": ..., "timeout_s": ...}
  child  -> {"type": "tool_call", "id": ..., "name": ..., "args": {"args": [...], "kwargs": {...}}}
  parent -> {"type": "tool_result", "id": ..., "value": ...}   (or "error": ...)
  child  -> {"type": "result", "id": ..., "stdout": ..., "stderr": ..., "status": ..., "duration": ...}

Each exec gets a fresh global scope with whitelisted builtins, the policy's
pre-imported modules, and proxies for the tools registered at handshake; no
state survives between execs.  Timeouts are enforced in-process with a real
interval timer; the parent's kill is the authoritative backstop.  The process
exits 0 when the channel closes.
"""

from __future__ import annotations

import argparse
import builtins
import importlib
import itertools
import json
import signal
import sys
import time
import traceback
from contextlib import redirect_stderr, redirect_stdout
from dataclasses import dataclass, field, fields, replace

PROTOCOL_VERSION = 1

DEFAULT_ALLOWED_IMPORTS = (
    "math",
    "statistics",
    "fractions",
    "decimal",
    "itertools",
    "functools",
    "collections",
    "re",
    "json",
    "random",
    "sympy",
    "numpy",
)
DEFAULT_PREIMPORTED = (
    "math",
    "statistics",
    "fractions",
    "decimal",
    "itertools",
    "functools",
    "collections",
    "re",
    "json",
    "random",
)
# file, process, environment, and escape hatches
DEFAULT_BANNED_BUILTINS = (
    "open",
    "input",
    "breakpoint",
    "exit",
    "quit",
    "eval",
    "exec",
    "compile",
)


class SandboxTimeout(BaseException):
    """Raised by the interval timer; BaseException so `except Exception` can't eat it."""


@dataclass(frozen=True)
class SandboxPolicy:
    allowed_imports: tuple = DEFAULT_ALLOWED_IMPORTS
    preimported: tuple = DEFAULT_PREIMPORTED
    banned_builtins: tuple = DEFAULT_BANNED_BUILTINS
    timeout_s: float = 60.0
    stdout_cap: int = 65536  # bytes

    def __post_init__(self):
        overlap = set(self.banned_builtins) & set(self.preimported)
        if overlap:
            raise ValueError(f"banned names also pre-imported: {sorted(overlap)}")
        if self.timeout_s <= 0:
            raise ValueError("timeout_s must be positive")
        if self.stdout_cap <= 0:
            raise ValueError("stdout_cap must be positive")


def merge_policy(base: SandboxPolicy, overrides: dict) -> SandboxPolicy:
    known = {f.name for f in fields(SandboxPolicy)}
    unknown = set(overrides) - known
    if unknown:
        raise ValueError(f"unknown policy fields: {sorted(unknown)}")
    coerced = {
        key: tuple(value) if isinstance(value, list) else value
        for key, value in overrides.items()
    }
    return replace(base, **coerced)


class CappedWriter:
    """File-like sink capped at a byte budget, with an explicit truncation marker."""

    def __init__(self, cap: int):
        self.cap = cap
        self.nbytes = 0
        self.truncated = False
        self.parts: list[str] = []

    def write(self, s: str) -> int:
        if not isinstance(s, str):
            s = str(s)
        if self.truncated:
            return len(s)
        data = s.encode("utf-8")
        room = self.cap - self.nbytes
        if len(data) <= room:
            self.parts.append(s)
            self.nbytes += len(data)
        else:
            self.parts.append(data[:room].decode("utf-8", "ignore"))
            self.nbytes = self.cap
            self.truncated = True
        return len(s)

    def flush(self) -> None:
        pass

    def value(self) -> str:
        text = "".join(self.parts)
        if self.truncated:
            text += "\n...[output truncated]\n"
        return text


class Channel:
    """The protocol side of stdio; captured before user stdout is redirected."""

    def __init__(self, reader, writer):
        self._reader = reader
        self._writer = writer

    def recv(self):
        line = self._reader.readline()
        if line == "":
            return None  # channel closed
        line = line.strip()
        if not line:
            return self.recv()
        try:
            return json.loads(line)
        except ValueError:
            return {"type": "_malformed", "detail": f"non-JSON line {line[:80]!r}"}

    def send(self, msg: dict) -> None:
        self._writer.write(json.dumps(msg) + "\n")
        self._writer.flush()


def _banned_stub(name: str):
    def stub(*_args, **_kwargs):
        raise RuntimeError(f"builtin '{name}' is disabled in the sandbox")

    stub.__name__ = name
    return stub


def _guarded_import(allowed: frozenset):
    def guarded(name, globals=None, locals=None, fromlist=(), level=0):
        root = name.split(".")[0]
        if root not in allowed:
            raise ImportError(f"import of '{root}' is not allowed in the sandbox")
        return importlib.__import__(name, globals, locals, fromlist, level)

    return guarded


def _make_tool_proxy(name: str, exec_id: str, channel: Channel, counter):
    def proxy(*args, **kwargs):
        call_id = f"{exec_id}/t{next(counter)}"
        channel.send(
            {
                "type": "tool_call",
                "id": call_id,
                "name": name,
                "args": {"args": list(args), "kwargs": kwargs},
            }
        )
        while True:
            msg = channel.recv()
            if msg is None:
                raise RuntimeError("executor channel closed while waiting for a tool result")
            if msg.get("type") == "tool_result":
                if msg.get("id") != call_id:
                    continue  # stale reply from an interrupted exec
                if msg.get("error") is not None:
                    raise RuntimeError(f"tool '{name}' failed: {msg['error']}")
                return msg.get("value")
            # anything else mid-call is a protocol violation worth surfacing
            raise RuntimeError(f"unexpected message while waiting for tool result: {msg.get('type')!r}")

    proxy.__name__ = name
    return proxy


def build_scope(policy: SandboxPolicy, preloaded: dict, tool_proxies: dict) -> dict:
    """Fresh restricted globals for one exec."""
    safe = {}
    for name in dir(builtins):
        if name.startswith("_"):
            continue
        if name in policy.banned_builtins:
            safe[name] = _banned_stub(name)
        else:
            safe[name] = getattr(builtins, name)
    safe["__import__"] = _guarded_import(frozenset(policy.allowed_imports))
    safe["__build_class__"] = builtins.__build_class__

    scope = {"__builtins__": safe, "__name__": "__main__"}
    scope.update(preloaded)
    if "random" in scope:
        scope["random"].seed(0)  # deterministic runs
    scope.update(tool_proxies)
    return scope


def _user_traceback(exc: BaseException) -> str:
    tb = exc.__traceback__
    while tb is not None and tb.tb_frame.f_code.co_filename != "<sandbox>":
        tb = tb.tb_next
    if tb is None:
        return "".join(traceback.format_exception_only(type(exc), exc))
    return "".join(traceback.format_exception(type(exc), exc, tb))


def run_code(
    code: str,
    exec_id: str,
    policy: SandboxPolicy,
    preloaded: dict,
    tool_names: list,
    channel: Channel,
    timeout_s: float,
) -> dict:
    out = CappedWriter(policy.stdout_cap)
    err = CappedWriter(policy.stdout_cap)
    counter = itertools.count(1)
    proxies = {name: _make_tool_proxy(name, exec_id, channel, counter) for name in tool_names}
    scope = build_scope(policy, preloaded, proxies)

    def on_alarm(signum, frame):
        raise SandboxTimeout()

    status = "ok"
    previous = signal.signal(signal.SIGALRM, on_alarm)
    started = time.perf_counter()
    signal.setitimer(signal.ITIMER_REAL, timeout_s)
    try:
        compiled = compile(code, "<sandbox>", "exec")
        with redirect_stdout(out), redirect_stderr(err):
            exec(compiled, scope)
    except SandboxTimeout:
        status = "timeout"
    except SyntaxError as exc:
        status = "error"
        err.write("".join(traceback.format_exception_only(type(exc), exc)))
    except BaseException as exc:  # user failures must never kill the server
        status = "error"
        err.write(_user_traceback(exc))
    finally:
        signal.setitimer(signal.ITIMER_REAL, 0)
        signal.signal(signal.SIGALRM, previous)

    duration = time.perf_counter() - started
    if status == "timeout":
        duration = max(duration, timeout_s)
    return {
        "type": "result",
        "id": exec_id,
        "stdout": out.value(),
        "stderr": err.value(),
        "status": status,
        "duration": duration,
    }


def _preload(policy: SandboxPolicy) -> dict:
    modules = {}
    for name in policy.preimported:
        try:
            modules[name] = importlib.import_module(name)
        except ImportError:
            pass  # optional packages may be absent
    return modules


def serve_loop(policy: SandboxPolicy | None = None, reader=None, writer=None) -> int:
    """Answer exec requests until the parent closes the channel; returns exit code."""
    channel = Channel(reader or sys.stdin, writer or sys.stdout)
    policy = policy or SandboxPolicy()

    hello = channel.recv()
    if hello is None:
        return 0
    if hello.get("type") != "hello" or hello.get("version") != PROTOCOL_VERSION:
        channel.send(
            {"type": "protocol_error", "detail": f"unsupported handshake {str(hello)[:120]}"}
        )
        return 1
    try:
        policy = merge_policy(policy, hello.get("policy") or {})
    except (ValueError, TypeError) as exc:
        channel.send({"type": "protocol_error", "detail": f"bad policy: {exc}"})
        return 1
    tool_names = list(hello.get("tools") or [])
    channel.send({"type": "hello", "version": PROTOCOL_VERSION})

    preloaded = _preload(policy)
    while True:
        msg = channel.recv()
        if msg is None:
            return 0
        kind = msg.get("type")
        if kind == "_malformed":
            channel.send({"type": "protocol_error", "detail": msg["detail"]})
        elif kind == "exec":
            timeout_s = float(msg.get("timeout_s") or policy.timeout_s)
            result = run_code(
                str(msg.get("code", "")),
                str(msg.get("id", "")),
                policy,
                preloaded,
                tool_names,
                channel,
                timeout_s,
            )
            channel.send(result)
        elif kind == "tool_result":
            continue  # stale reply from a timed-out exec
        else:
            channel.send({"type": "protocol_error", "detail": f"unexpected message type {kind!r}"})


def main(argv: list | None = None) -> int:
    parser = argparse.ArgumentParser(prog="sandbox-runner", description=__doc__)
    parser.add_argument("--policy", help="JSON file with policy field overrides")
    args = parser.parse_args(argv)
    policy = SandboxPolicy()
    if args.policy:
        with open(args.policy, encoding="utf-8") as fh:
            policy = merge_policy(policy, json.load(fh))
    return serve_loop(policy)


if __name__ == "__main__":
    sys.exit(main())
