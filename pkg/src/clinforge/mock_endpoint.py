"""A scriptable stand-in for a chat-completions server.

Replies are derived from the last user message, so runs are reproducible.
Markers in that message trigger failure modes:

  [[FILTER]]     HTTP 400 with error code ``content_filter``
  [[RATELIMIT]]  HTTP 429 the first time this exact prompt is seen
  [[EMPTY]]      HTTP 200 with empty content
  [[NOTAGS]]     HTTP 200 with prose lacking speaker tags
  [[DOWN]]       HTTP 503 every time

Run ``python -m clinforge.mock_endpoint --port 8000`` for a local server.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import re
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import httpx

_SENT = re.compile(r"(?<=[.!?])\s+")
_MARKER = re.compile(r"\[\[[A-Z]+\]\]")


@dataclass
class Call:
    t: float
    body: dict
    status: int


@dataclass
class MockChat:
    calls: list[Call] = field(default_factory=list)
    _seen: set = field(default_factory=set)
    _lock: threading.RLock = field(default_factory=threading.RLock)

    def reply_text(self, messages: list[dict]) -> str:
        user = _MARKER.sub("", [m["content"] for m in messages if m["role"] == "user"][-1])
        if len(messages) == 2:  # filler rewrite
            out = []
            for line in user.splitlines():
                who, _, said = line.partition(": ")
                out.append(f"{who}: Um, {said[:1].lower()}{said[1:]} Hmm.")
            return "\n".join(out)
        parts = [s.strip() for s in _SENT.split(" ".join(user.split())) if s.strip()]
        lines = ["Doctor: Hello, what brings you in today?"]
        for i, s in enumerate(parts[:12]):
            lines.append(f"{'Patient' if i % 2 == 0 else 'Doctor'}: {s}")
        lines.append("Doctor: Okay, we will follow up on all of that.")
        return "\n".join(lines)

    def respond(self, body: dict) -> tuple[int, dict, dict]:
        with self._lock:
            return self._respond(body)

    def _respond(self, body: dict) -> tuple[int, dict, dict]:
        msgs = body.get("messages") or []
        user = [m["content"] for m in msgs if m.get("role") == "user"]
        last = user[-1] if user else ""
        key = hashlib.sha1(json.dumps(msgs, sort_keys=True).encode()).hexdigest()
        headers: dict = {}
        if "[[DOWN]]" in last:
            status, payload = 503, {"error": {"code": "unavailable", "message": "down"}}
        elif "[[FILTER]]" in last:
            status, payload = 400, {"error": {"code": "content_filter",
                                              "message": "The prompt was filtered by moderation."}}
        elif "[[RATELIMIT]]" in last and key not in self._seen:
            status, payload = 429, {"error": {"code": "rate_limit", "message": "slow down"}}
            headers["Retry-After"] = "0"
        else:
            if "[[EMPTY]]" in last:
                content = ""
            elif "[[NOTAGS]]" in last:
                content = "I am unable to format this as a conversation."
            else:
                content = self.reply_text(msgs)
            status, payload = 200, {
                "id": "chatcmpl-" + key[:12], "object": "chat.completion",
                "choices": [{"index": 0, "finish_reason": "stop",
                             "message": {"role": "assistant", "content": content}}],
            }
        with self._lock:
            self._seen.add(key)
            self.calls.append(Call(time.monotonic(), body, status))
        return status, headers, payload

    def transport(self) -> httpx.MockTransport:
        def handle(request: httpx.Request) -> httpx.Response:
            status, headers, payload = self.respond(json.loads(request.content))
            return httpx.Response(status, headers=headers, json=payload)
        return httpx.MockTransport(handle)

    @property
    def retried(self) -> int:
        return sum(1 for c in self.calls if c.status == 429 or c.status >= 500)


def make_server(mock: MockChat, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            if not self.path.rstrip("/").endswith("/chat/completions"):
                self.send_error(404)
                return
            n = int(self.headers.get("Content-Length") or 0)
            status, headers, payload = mock.respond(json.loads(self.rfile.read(n)))
            data = json.dumps(payload).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            for k, v in headers.items():
                self.send_header(k, v)
            self.end_headers()
            self.wfile.write(data)

        def log_message(self, *args):
            pass

    return ThreadingHTTPServer((host, port), Handler)


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--host", default="127.0.0.1")
    ap.add_argument("--port", type=int, default=8000)
    args = ap.parse_args(argv)
    server = make_server(MockChat(), args.host, args.port)
    print(f"mock chat endpoint on http://{args.host}:{server.server_port}/v1")
    server.serve_forever()


if __name__ == "__main__":
    main()
