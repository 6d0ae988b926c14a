from __future__ import annotations

import json
import subprocess
import sys

import pytest

from conftest import SandboxProc
from sandbox_runner.runner import CappedWriter, SandboxPolicy, merge_policy


# -- policy ------------------------------------------------------------------


def test_policy_defaults_are_consistent():
    policy = SandboxPolicy()
    assert policy.timeout_s == 60.0
    assert set(policy.preimported) <= set(policy.allowed_imports)
    assert not set(policy.banned_builtins) & set(policy.preimported)


def test_policy_rejects_banned_preimported_overlap():
    with pytest.raises(ValueError):
        SandboxPolicy(banned_builtins=("math",), preimported=("math",))


def test_policy_rejects_bad_timeout():
    with pytest.raises(ValueError):
        SandboxPolicy(timeout_s=0)


def test_merge_policy_overrides_and_rejects_unknown():
    merged = merge_policy(SandboxPolicy(), {"timeout_s": 2.5, "allowed_imports": ["math"]})
    assert merged.timeout_s == 2.5
    assert merged.allowed_imports == ("math",)
    with pytest.raises(ValueError):
        merge_policy(SandboxPolicy(), {"volume": 11})


def test_capped_writer_truncates_with_marker():
    writer = CappedWriter(cap=8)
    writer.write("12345")
    writer.write("6789abc")
    text = writer.value()
    assert text.startswith("12345678")
    assert "[output truncated]" in text
    small = CappedWriter(cap=100)
    small.write("hi")
    assert small.value() == "hi"


# -- exec behaviour -------------------------------------------------------------


def test_exec_arithmetic(sandbox):
    result = sandbox.exec_result("print(sum(range(10)))")
    assert result["status"] == "ok"
    assert result["stdout"] == "45\n"
    assert result["stderr"] == ""
    assert result["duration"] >= 0


def test_exec_preimported_modules_available(sandbox):
    result = sandbox.exec_result("print(math.floor(2.9), json.dumps([1]))")
    assert result["status"] == "ok"
    assert result["stdout"] == "2 [1]\n"


def test_exec_whitelisted_import(sandbox):
    result = sandbox.exec_result("import fractions\nprint(fractions.Fraction(1, 2))")
    assert result["status"] == "ok"
    assert result["stdout"] == "1/2\n"


def test_exec_blocked_import_names_module(sandbox):
    result = sandbox.exec_result("import os")
    assert result["status"] == "error"
    assert "os" in result["stderr"]
    assert "not allowed" in result["stderr"]


def test_exec_blocked_import_via_submodule(sandbox):
    result = sandbox.exec_result("import os.path")
    assert result["status"] == "error"
    assert "'os'" in result["stderr"]


def test_exec_banned_builtin_names_it(sandbox):
    result = sandbox.exec_result("open('/etc/passwd')")
    assert result["status"] == "error"
    assert "'open'" in result["stderr"]
    assert "disabled" in result["stderr"]


def test_exec_exception_traceback(sandbox):
    result = sandbox.exec_result("x = [1]\nprint(x[5])")
    assert result["status"] == "error"
    assert "IndexError" in result["stderr"]
    assert "<sandbox>" in result["stderr"]


def test_exec_syntax_error(sandbox):
    result = sandbox.exec_result("def broken(:")
    assert result["status"] == "error"
    assert "SyntaxError" in result["stderr"]


def test_exec_timeout_clamps_duration(sandbox):
    result = sandbox.exec_result("while True:\n    pass", timeout_s=1.0)
    assert result["status"] == "timeout"
    assert result["duration"] >= 1.0
    # server survives and stays usable
    assert sandbox.exec_result("print(1)")["stdout"] == "1\n"


def test_exec_fresh_scope_between_execs(sandbox):
    assert sandbox.exec_result("x = 1")["status"] == "ok"
    result = sandbox.exec_result("print(x)")
    assert result["status"] == "error"
    assert "NameError" in result["stderr"]


def test_exec_seeded_random_is_deterministic(sandbox):
    first = sandbox.exec_result("print(random.randint(0, 10**9))")
    second = sandbox.exec_result("print(random.randint(0, 10**9))")
    assert first["stdout"] == second["stdout"]


def test_exec_stdout_cap_applied():
    proc = SandboxProc(policy={"stdout_cap": 64})
    try:
        result = proc.exec_result("print('x' * 1000)")
        assert result["status"] == "ok"
        assert "[output truncated]" in result["stdout"]
        assert len(result["stdout"]) < 200
    finally:
        proc.close()


def test_exec_system_exit_is_contained(sandbox):
    result = sandbox.exec_result("raise SystemExit(7)")
    assert result["status"] == "error"
    assert sandbox.exec_result("print('alive')")["stdout"] == "alive\n"


def test_main_guard_runs(sandbox):
    code = "if __name__ == '__main__':\n    print('ran')"
    assert sandbox.exec_result(code)["stdout"] == "ran\n"


# -- tool bridging ------------------------------------------------------------


def test_tool_round_trip(sandbox):
    exec_id = sandbox.exec("print(search('alpha beta', 2))")
    call = sandbox.recv()
    assert call["type"] == "tool_call"
    assert call["name"] == "search"
    assert call["args"] == {"args": ["alpha beta", 2], "kwargs": {}}
    sandbox.send({"type": "tool_result", "id": call["id"], "value": [{"title": "t", "score": 1.0}]})
    result = sandbox.recv()
    assert result["type"] == "result" and result["id"] == exec_id
    assert result["status"] == "ok"
    assert "'title': 't'" in result["stdout"]


def test_tool_error_raises_inside_sandbox(sandbox):
    sandbox.exec("search('q')")
    call = sandbox.recv()
    sandbox.send({"type": "tool_result", "id": call["id"], "error": "corpus missing"})
    result = sandbox.recv()
    assert result["status"] == "error"
    assert "corpus missing" in result["stderr"]


def test_tool_exception_can_be_caught_by_user_code(sandbox):
    code = (
        "try:\n"
        "    search('q')\n"
        "except RuntimeError as exc:\n"
        "    print('caught:', exc)\n"
    )
    sandbox.exec(code)
    call = sandbox.recv()
    sandbox.send({"type": "tool_result", "id": call["id"], "error": "boom"})
    result = sandbox.recv()
    assert result["status"] == "ok"
    assert "caught:" in result["stdout"]


def test_unregistered_tool_is_name_error(sandbox):
    result = sandbox.exec_result("fetch_web('x')")
    assert result["status"] == "error"
    assert "NameError" in result["stderr"]


def test_tool_kwargs_forwarded(sandbox):
    sandbox.exec("search('q', k=5)")
    call = sandbox.recv()
    assert call["args"] == {"args": ["q"], "kwargs": {"k": 5}}
    sandbox.send({"type": "tool_result", "id": call["id"], "value": []})
    assert sandbox.recv()["status"] == "ok"


# -- protocol edges -------------------------------------------------------------


def test_malformed_line_gets_protocol_error(sandbox):
    sandbox.send_raw("this is not json")
    reply = sandbox.recv()
    assert reply["type"] == "protocol_error"
    assert sandbox.exec_result("print(1)")["status"] == "ok"


def test_unexpected_message_type(sandbox):
    sandbox.send({"type": "dance"})
    reply = sandbox.recv()
    assert reply["type"] == "protocol_error"
    assert "dance" in reply["detail"]


def test_stale_tool_result_ignored(sandbox):
    sandbox.send({"type": "tool_result", "id": "ancient", "value": 1})
    assert sandbox.exec_result("print('ok')")["stdout"] == "ok\n"


def test_bad_handshake_version():
    proc = subprocess.Popen(
        [sys.executable, "-m", "sandbox_runner"],
        stdin=subprocess.PIPE,
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
        text=True,
        bufsize=1,
    )
    proc.stdin.write(json.dumps({"type": "hello", "version": 99}) + "\n")
    proc.stdin.flush()
    reply = json.loads(proc.stdout.readline())
    assert reply["type"] == "protocol_error"
    assert proc.wait(timeout=5) == 1


def test_bad_policy_rejected_at_handshake():
    proc = subprocess.Popen(
        [sys.executable, "-m", "sandbox_runner"],
        stdin=subprocess.PIPE,
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
        text=True,
        bufsize=1,
    )
    proc.stdin.write(json.dumps({"type": "hello", "version": 1, "policy": {"nope": 1}}) + "\n")
    proc.stdin.flush()
    reply = json.loads(proc.stdout.readline())
    assert reply["type"] == "protocol_error"
    assert "nope" in reply["detail"]
    proc.wait(timeout=5)


def test_exits_zero_on_channel_close(sandbox):
    assert sandbox.exec_result("print(1)")["status"] == "ok"
    assert sandbox.close() == 0
