from __future__ import annotations

import json
import subprocess
import sys

import pytest


class SandboxProc:
    """Drives the executor over its wire protocol, as the parent would."""

    def __init__(self, tools=("search",), policy=None):
        self.proc = subprocess.Popen(
            [sys.executable, "-m", "sandbox_runner"],
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            text=True,
            encoding="utf-8",
            bufsize=1,
        )
        self.send({"type": "hello", "version": 1, "tools": list(tools), "policy": policy or {}})
        reply = self.recv()
        assert reply == {"type": "hello", "version": 1}, reply
        self._ids = 0

    def send(self, msg):
        self.proc.stdin.write(json.dumps(msg) + "\n")
        self.proc.stdin.flush()

    def send_raw(self, line):
        self.proc.stdin.write(line + "\n")
        self.proc.stdin.flush()

    def recv(self, timeout=10.0):
        import select

        ready, _, _ = select.select([self.proc.stdout], [], [], timeout)
        if not ready:
            raise TimeoutError("no message from sandbox within timeout")
        line = self.proc.stdout.readline()
        if line == "":
            return None
        return json.loads(line)

    def exec(self, code, timeout_s=5.0):
        self._ids += 1
        exec_id = f"e{self._ids}"
        self.send({"type": "exec", "id": exec_id, "code": code, "timeout_s": timeout_s})
        return exec_id

    def exec_result(self, code, timeout_s=5.0):
        """Run code with no tool traffic expected; return the result message."""
        exec_id = self.exec(code, timeout_s)
        msg = self.recv()
        assert msg["type"] == "result" and msg["id"] == exec_id, msg
        return msg

    def close(self):
        if self.proc.stdin:
            self.proc.stdin.close()
        try:
            return self.proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self.proc.kill()
            self.proc.wait()
            return None


@pytest.fixture
def sandbox():
    proc = SandboxProc()
    yield proc
    proc.close()
