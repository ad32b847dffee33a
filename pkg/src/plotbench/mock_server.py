"""Local stand-in for a model endpoint, used by the hermetic tests and `plotbench mock-serve`.

Profiles:

* echo     - answers with the ground-truth config of the target image
* perturb  - same, with DAP + 2 and every plant shifted +0.1 m in x
* canned   - looks the answer up by sha256 of the request body

Both the OpenAI-compatible and the Ollama wire formats are served. The
target image is recognised by the sha256 of its bytes. A blind request that
still carries an evaluation image is refused and recorded as a violation.
"""
from __future__ import annotations

import base64
import hashlib
import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .config import SimulationConfig, canonical_serialize, config_from_dict, parse_config
from .dataset import DatasetManifest
from .prompts import BLIND_CUE
from .runner import config_from_partial, resolve_truth

log = logging.getLogger(__name__)

PROFILES = ("echo", "perturb", "canned")
DAP_SHIFT = 2
X_SHIFT_M = 0.1
NO_IMAGE_REPLY = "I cannot see an image to analyze."


def perturb(c: SimulationConfig) -> SimulationConfig:
    d = json.loads(canonical_serialize(c))
    d["metadata"]["dap"] += DAP_SHIFT
    for plot in d["field"]["plots"]:
        plot["plants"] = [[x + X_SHIFT_M, y] for x, y in plot["plants"]]
    return config_from_dict(d)


def fenced(c: SimulationConfig) -> str:
    return "Here is the configuration for this plot.\n```json\n" + canonical_serialize(c) + "\n```"


def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _request_parts(path: str, body: dict) -> list[tuple[str, str, list[bytes]]]:
    """(role, text, image bytes) per message, for either wire format."""
    out = []
    for m in body.get("messages", []):
        role, images, texts = m.get("role", ""), [], []
        content = m.get("content", "")
        if isinstance(content, str):
            texts.append(content)
        else:
            for part in content:
                if part.get("type") == "text":
                    texts.append(part.get("text", ""))
                elif part.get("type") == "image_url":
                    url = part["image_url"]["url"]
                    images.append(base64.b64decode(url.split(",", 1)[1]))
        for b64 in m.get("images", []) or []:
            images.append(base64.b64decode(b64))
        out.append((role, "\n".join(texts), images))
    return out


class MockEndpoint:
    """Threaded HTTP server on localhost; use as a context manager."""

    def __init__(self, manifest: DatasetManifest, profile: str = "echo", fail_first: int = 0,
                 canned: dict[str, str] | None = None, host: str = "127.0.0.1", port: int = 0):
        if profile not in PROFILES:
            raise ValueError(f"unknown profile {profile!r}")
        self.profile = profile
        self.canned = dict(canned or {})
        self.fail_remaining = fail_first
        self.requests: list[dict] = []
        self.violations: list[str] = []
        self._lock = threading.Lock()
        self._answers: dict[str, SimulationConfig] = {}

        template = None
        if manifest.few_shot:
            answer = json.loads(manifest.resolve(manifest.few_shot[0].answer).read_text(encoding="utf-8"))
            answer.pop("reasoning", None)
            template = config_from_dict(answer)
        for e in manifest.images:
            digest = _sha(manifest.resolve(e.path).read_bytes())
            if e.kind == "synthetic":
                c = parse_config(manifest.resolve(e.config).read_text(encoding="utf-8"))
            elif template is not None:
                c = config_from_partial(resolve_truth(manifest, e), template)
            else:
                continue
            self._answers[digest] = c
        self.eval_hashes = {_sha(manifest.resolve(e.path).read_bytes()) for e in manifest.images}

        self._server = ThreadingHTTPServer((host, port), self._handler_class())
        self._server.daemon_threads = True
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "MockEndpoint":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    def serve_forever(self) -> None:
        self._server.serve_forever()

    # -- request handling

    def reply_for(self, path: str, raw: bytes, body: dict) -> tuple[int, str]:
        with self._lock:
            self.requests.append(body)
            if self.fail_remaining > 0:
                self.fail_remaining -= 1
                return 500, "simulated failure"

        msgs = _request_parts(path, body)
        if not msgs:
            return 400, "no messages"
        role, text, images = msgs[-1]
        blind = not images and text.strip() == BLIND_CUE
        if blind:
            leaked = [i for _, _, ims in msgs for i in ims if _sha(i) in self.eval_hashes]
            if leaked:
                with self._lock:
                    self.violations.append(f"blind request carried {len(leaked)} evaluation image(s)")
                return 400, "blind request carries an evaluation image"
            prior = [t for r, t, _ in msgs if r == "assistant"]
            return 200, prior[-1] if prior else NO_IMAGE_REPLY

        if self.profile == "canned":
            key = _sha(raw)
            if key in self.canned:
                return 200, self.canned[key]
            return 200, "No canned answer for this request."
        target = next((self._answers.get(_sha(i)) for i in reversed(images)), None)
        if target is None:
            return 200, NO_IMAGE_REPLY
        return 200, fenced(perturb(target) if self.profile == "perturb" else target)

    def _handler_class(self):
        endpoint = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, fmt, *args):
                log.debug(fmt, *args)

            def do_POST(self):
                if self.path not in ("/v1/chat/completions", "/chat/completions", "/api/chat"):
                    self._send(404, {"error": "not found"})
                    return
                raw = self.rfile.read(int(self.headers.get("Content-Length", 0)))
                try:
                    body = json.loads(raw)
                except json.JSONDecodeError:
                    self._send(400, {"error": "body is not JSON"})
                    return
                status, text = endpoint.reply_for(self.path, raw, body)
                if status != 200:
                    self._send(status, {"error": text})
                elif self.path == "/api/chat":
                    self._send(200, {"model": body.get("model"), "message": {"role": "assistant", "content": text},
                                     "done": True, "done_reason": "stop"})
                else:
                    self._send(200, {"object": "chat.completion", "model": body.get("model"),
                                     "choices": [{"index": 0, "finish_reason": "stop",
                                                  "message": {"role": "assistant", "content": text}}]})

            def _send(self, status: int, payload: dict):
                data = json.dumps(payload).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

        return Handler
