"""Bridge to an external text agent running as a child process.

Request framing, written to the child's stdin::

    DXB/1 <brief_bytes> <sidecar_bytes>\\n
    <rendered brief, utf-8><sidecar json, utf-8>

The child answers with one line: the tool-call wire form.  An agent that does
not answer within ``timeout`` seconds is recorded as ``observe`` tagged
``timeout`` and restarted on the next request.
"""

from __future__ import annotations

import json
import os
import queue
import subprocess
import threading

from .toolcall import Observe, ReasonTag, format_tool_call

HEADER = "DXB/1"


def encode_request(rendered_text: str, sidecar: dict) -> bytes:
    body = rendered_text.encode("utf-8")
    side = json.dumps(sidecar, sort_keys=True, ensure_ascii=False, separators=(",", ":")).encode("utf-8")
    return f"{HEADER} {len(body)} {len(side)}\n".encode("ascii") + body + side


def decode_request(stream) -> tuple[str, dict] | None:
    """Read one framed request from a binary stream; None at EOF."""
    header = stream.readline()
    if not header:
        return None
    tag, nb, ns = header.decode("ascii").split()
    if tag != HEADER:
        raise ValueError(f"unexpected frame header {tag!r}")
    body = stream.read(int(nb)).decode("utf-8")
    side = json.loads(stream.read(int(ns)).decode("utf-8"))
    return body, side


TIMEOUT_LINE = format_tool_call(Observe((ReasonTag.TIMEOUT,), "agent did not answer in time"))


class ExternalAgent:
    def __init__(self, command: list[str], timeout: float = 10.0, env: dict | None = None):
        self.name = f"external({' '.join(command)})"
        self.command = list(command)
        self.timeout = timeout
        self.env = env
        self._proc: subprocess.Popen | None = None
        self._lines: queue.Queue = queue.Queue()

    def _start(self) -> None:
        self._proc = subprocess.Popen(self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                      env={**os.environ, **(self.env or {})})
        self._lines = queue.Queue()
        threading.Thread(target=self._pump, args=(self._proc, self._lines), daemon=True).start()

    @staticmethod
    def _pump(proc, lines) -> None:
        for raw in proc.stdout:
            lines.put(raw.decode("utf-8", errors="replace"))
        lines.put(None)

    def respond(self, sb, rendered, rng) -> str:
        if self._proc is None or self._proc.poll() is not None:
            self._start()
        try:
            self._proc.stdin.write(encode_request(rendered.text, sb.to_json()))
            self._proc.stdin.flush()
            line = self._lines.get(timeout=self.timeout)
        except (queue.Empty, BrokenPipeError, OSError):
            self.close()
            return TIMEOUT_LINE
        if line is None:
            self.close()
            return ""
        return line.rstrip("\n")

    def close(self) -> None:
        if self._proc is not None:
            self._proc.kill()
            self._proc.wait()
            self._proc = None
