"""Post-process reasoning output: detect python code blocks, execute the last
one via an external executor process, and splice real stdout over the model's
guessed output.

The executor child speaks line-delimited JSON on its stdio (see
``ExecutorHandle`` for the message shapes).  Tests and solver-less runs use
``StubRunner`` instead of a real child.
"""

from __future__ import annotations

import json
import logging
import queue
import subprocess
import threading
import time
import uuid
from dataclasses import dataclass
from typing import Callable, NamedTuple, Protocol, Sequence

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
_CODE_TAGS = {"python", "py", "python3"}

RESULT_OPEN = "[Execution result]"
RESULT_CLOSE = "[/Execution result]"


@dataclass(frozen=True)
class ExecOutcome:
    stdout: str
    stderr: str
    status: str  # "ok" | "error" | "timeout"
    duration: float

    def __post_init__(self):
        if self.status not in ("ok", "error", "timeout"):
            raise ValueError(f"unknown exec status {self.status!r}")


class CodeRunner(Protocol):
    def run(self, code: str) -> ExecOutcome: ...


class ExecutorError(Exception):
    """Spawn failure or wire-protocol violation."""


class _Block(NamedTuple):
    content: str
    open_line: int  # index of the opening fence line
    close_line: int  # index of the closing fence line


def _scan_blocks(text: str) -> list[_Block]:
    """Find complete fenced blocks tagged python/py/python3."""
    blocks: list[_Block] = []
    lines = text.splitlines()
    open_at: int | None = None
    is_code = False
    body: list[str] = []
    for i, line in enumerate(lines):
        if not line.strip().startswith("```"):
            if open_at is not None:
                body.append(line)
            continue
        if open_at is None:
            open_at = i
            is_code = line.strip()[3:].strip().lower() in _CODE_TAGS
            body = []
        else:
            if is_code:
                blocks.append(_Block("\n".join(body), open_at, i))
            open_at = None
    return blocks


def extract_code_blocks(text: str) -> list[str]:
    """Contents of fenced python code blocks, in document order.

    Fences with other tags (or no tag) are not treated as code.
    """
    return [b.content for b in _scan_blocks(text)]


def format_exec_result(outcome: ExecOutcome, unexecuted_blocks: int = 0) -> str:
    """Render the delimited execution-result section spliced into a step."""
    lines = [RESULT_OPEN]
    if unexecuted_blocks:
        lines.append(
            f"note: {unexecuted_blocks} earlier code block(s) were not executed; only the last block ran."
        )
    if outcome.status == "timeout":
        lines.append(f"execution timed out after {outcome.duration:.1f}s")
    elif outcome.status == "error":
        lines.append("execution failed:")
        lines.append(outcome.stderr.rstrip("\n") or "(no error detail)")
    elif outcome.stdout:
        lines.append("stdout:")
        lines.append(outcome.stdout.rstrip("\n"))
    else:
        lines.append("stdout: (empty output)")
    lines.append(RESULT_CLOSE)
    return "\n".join(lines)


def splice_output(step_text: str, outcome: ExecOutcome) -> str:
    """Replace the model's predicted-output region with the real result.

    The region runs from the end of the last code block to the next heading
    line (or end of text).  Without a complete code block the text is
    returned unchanged.
    """
    blocks = _scan_blocks(step_text)
    if not blocks:
        return step_text
    last = blocks[-1]
    lines = step_text.splitlines()
    tail_start = last.close_line + 1
    tail_end = len(lines)
    for i in range(tail_start, len(lines)):
        if lines[i].startswith("#"):
            tail_end = i
            break
    result = format_exec_result(outcome, unexecuted_blocks=len(blocks) - 1)
    out = lines[: tail_start] + ["", result, ""] + lines[tail_end:]
    return "\n".join(out).rstrip("\n") + "\n"


def postprocess_step(text: str, runner: CodeRunner) -> tuple[str, ExecOutcome | None]:
    """Execute the last code block of a step, if any, and splice its output."""
    blocks = extract_code_blocks(text)
    if not blocks:
        return text, None
    outcome = runner.run(blocks[-1])
    return splice_output(text, outcome), outcome


class StubRunner:
    """Canned outcomes keyed by exact code string (or computed by a callable).

    Lets the engine and harness run end-to-end without the executor child.
    """

    def __init__(self, outcomes: dict[str, ExecOutcome] | Callable[[str], ExecOutcome]):
        self._outcomes = outcomes
        self.executed: list[str] = []

    def run(self, code: str) -> ExecOutcome:
        self.executed.append(code)
        if callable(self._outcomes):
            return self._outcomes(code)
        try:
            return self._outcomes[code]
        except KeyError:
            return ExecOutcome("", f"no stubbed outcome for code {code[:60]!r}", "error", 0.0)


class ExecutorHandle:
    """Owns one executor child process speaking line-delimited JSON.

    Wire shapes (one JSON object per line, UTF-8):

      parent -> {"type": "hello", "version": 1, "tools": [...], "policy": {...}}
      child  -> {"type": "hello", "version": 1}
      parent -> {"type": "exec", "id": ..., "code": ..., "timeout_s": ...}
      child  -> {"type": "tool_call", "id": ..., "name": ..., "args": {"args": [...], "kwargs": {...}}}
      parent -> {"type": "tool_result", "id": ..., "value": ...} (or "error": ...)
      child  -> {"type": "result", "id": ..., "stdout": ..., "stderr": ..., "status": ..., "duration": ...}

    One in-flight execution per handle.  The child is killed at
    ``timeout + kill_grace_s`` as the authoritative backstop and the handle
    respawns a fresh child after any timeout or crash.
    """

    def __init__(
        self,
        command: Sequence[str],
        tools: dict[str, Callable] | None = None,
        policy: dict | None = None,
        default_timeout_s: float = 60.0,
        kill_grace_s: float = 5.0,
        spawn_timeout_s: float = 10.0,
    ):
        self.command = list(command)
        self.tools = dict(tools or {})
        self.policy = dict(policy or {})
        self.default_timeout_s = default_timeout_s
        self.kill_grace_s = kill_grace_s
        self.spawn_timeout_s = spawn_timeout_s
        self._lock = threading.Lock()
        self._proc: subprocess.Popen | None = None
        self._messages: queue.Queue = queue.Queue()
        self._stderr: list[str] = []
        self._spawn()

    # -- lifecycle ---------------------------------------------------------

    def _spawn(self) -> None:
        try:
            self._proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                text=True,
                encoding="utf-8",
                bufsize=1,
            )
        except OSError as exc:
            raise ExecutorError(f"could not spawn executor {self.command!r}: {exc}") from exc
        self._messages = queue.Queue()
        self._stderr = []
        threading.Thread(target=self._read_stdout, args=(self._proc,), daemon=True).start()
        threading.Thread(target=self._read_stderr, args=(self._proc,), daemon=True).start()
        self._send({
            "type": "hello",
            "version": PROTOCOL_VERSION,
            "tools": sorted(self.tools),
            "policy": self.policy,
        })
        try:
            msg = self._messages.get(timeout=self.spawn_timeout_s)
        except queue.Empty:
            self._kill()
            raise ExecutorError(f"executor {self.command!r} did not answer the handshake")
        if msg is None or msg.get("type") != "hello" or msg.get("version") != PROTOCOL_VERSION:
            self._kill()
            raise ExecutorError(f"bad executor handshake: {msg!r}")

    def _read_stdout(self, proc: subprocess.Popen) -> None:
        for line in proc.stdout:  # type: ignore[union-attr]
            line = line.strip()
            if not line:
                continue
            try:
                self._messages.put(json.loads(line))
            except ValueError:
                self._messages.put({"type": "protocol_error", "detail": f"non-JSON line {line[:80]!r}"})
        self._messages.put(None)  # EOF marker

    def _read_stderr(self, proc: subprocess.Popen) -> None:
        for line in proc.stderr:  # type: ignore[union-attr]
            self._stderr.append(line)

    def _send(self, msg: dict) -> None:
        proc = self._proc
        if proc is None or proc.stdin is None:
            raise ExecutorError("executor process is not running")
        try:
            proc.stdin.write(json.dumps(msg) + "\n")
            proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ExecutorError(f"executor channel closed: {exc}") from exc

    def _kill(self) -> None:
        if self._proc is not None:
            self._proc.kill()
            self._proc.wait()
            self._proc = None

    def _respawn(self) -> None:
        self._kill()
        self._spawn()

    def close(self) -> None:
        with self._lock:
            proc = self._proc
            if proc is None:
                return
            if proc.stdin is not None:
                try:
                    proc.stdin.close()  # child exits 0 on channel close
                except OSError:
                    pass
            try:
                proc.wait(timeout=3)
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait()
            self._proc = None

    def __enter__(self) -> "ExecutorHandle":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    # -- tools -------------------------------------------------------------

    def set_tool(self, name: str, fn: Callable) -> None:
        """Rebind an already-registered tool (names are fixed at spawn)."""
        if name not in self.tools:
            raise KeyError(f"tool {name!r} was not registered at spawn")
        self.tools[name] = fn

    def _dispatch_tool(self, msg: dict) -> None:
        call_id, name = msg.get("id"), msg.get("name")
        fn = self.tools.get(name)
        if fn is None:
            self._send({"type": "tool_result", "id": call_id, "error": f"unknown tool {name!r}"})
            return
        args = msg.get("args") or {}
        try:
            value = fn(*args.get("args", []), **args.get("kwargs", {}))
            reply = {"type": "tool_result", "id": call_id, "value": value}
            json.dumps(reply)  # guarantee the value is wire-representable
        except Exception as exc:
            reply = {"type": "tool_result", "id": call_id, "error": f"{type(exc).__name__}: {exc}"}
        self._send(reply)

    # -- execution ---------------------------------------------------------

    def execute(self, code: str, timeout_s: float | None = None) -> ExecOutcome:
        """Run one code string in the child; respawn on timeout or crash."""
        timeout_s = self.default_timeout_s if timeout_s is None else timeout_s
        with self._lock:
            if self._proc is None:
                self._spawn()
            exec_id = uuid.uuid4().hex[:12]
            started = time.perf_counter()
            deadline = started + timeout_s + self.kill_grace_s
            self._send({"type": "exec", "id": exec_id, "code": code, "timeout_s": timeout_s})
            while True:
                remaining = deadline - time.perf_counter()
                if remaining <= 0:
                    return self._timeout_outcome(started, timeout_s)
                try:
                    msg = self._messages.get(timeout=remaining)
                except queue.Empty:
                    return self._timeout_outcome(started, timeout_s)
                if msg is None:  # child died mid-execution
                    detail = "".join(self._stderr).strip() or "executor exited unexpectedly"
                    self._respawn()
                    return ExecOutcome("", f"executor crashed: {detail}", "error", time.perf_counter() - started)
                kind = msg.get("type")
                if kind == "tool_call":
                    self._dispatch_tool(msg)
                elif kind == "result" and msg.get("id") == exec_id:
                    outcome = ExecOutcome(
                        stdout=str(msg.get("stdout", "")),
                        stderr=str(msg.get("stderr", "")),
                        status=str(msg.get("status", "error")),
                        duration=float(msg.get("duration", time.perf_counter() - started)),
                    )
                    if outcome.status == "timeout":
                        self._respawn()
                    return outcome
                elif kind == "protocol_error":
                    raise ExecutorError(f"executor protocol error: {msg.get('detail')!r}")
                else:
                    raise ExecutorError(f"unexpected executor message {msg!r}")

    def _timeout_outcome(self, started: float, timeout_s: float) -> ExecOutcome:
        elapsed = time.perf_counter() - started
        log.warning("executor exceeded %.1fs; killing child", timeout_s)
        self._respawn()
        return ExecOutcome("", f"execution exceeded {timeout_s:g}s and was killed", "timeout", elapsed)

    def run(self, code: str) -> ExecOutcome:
        """CodeRunner interface: execute with the handle's default timeout."""
        return self.execute(code)
