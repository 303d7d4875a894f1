import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest


class MockJudgeServer:
    """Scriptable OpenAI-compatible endpoint for judge-client tests.

    Each scripted entry is (status, content): `content` becomes the
    assistant message of a well-formed chat completion, or the raw body
    when status != 200.  Requests beyond the script replay the last
    entry.  All received request bodies are captured for assertions.
    """

    def __init__(self):
        self.script = [(200, '{"score": 0.5, "reason": "ok"}')]
        self.requests = []
        self._lock = threading.Lock()
        server = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = self.rfile.read(length)
                with server._lock:
                    server.requests.append({
                        "path": self.path,
                        "headers": dict(self.headers),
                        "body": json.loads(body) if body else None,
                    })
                    index = min(len(server.requests) - 1, len(server.script) - 1)
                    status, content = server.script[index]
                if status == 200:
                    payload = json.dumps({
                        "choices": [{"message": {"role": "assistant",
                                                 "content": content}}],
                    }).encode("utf-8")
                else:
                    payload = content.encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            def log_message(self, *args):
                pass

        self._httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._httpd.serve_forever,
                                        daemon=True)
        self._thread.start()

    @property
    def base_url(self) -> str:
        host, port = self._httpd.server_address
        return f"http://{host}:{port}/v1"

    def set_script(self, script):
        with self._lock:
            self.script = list(script)
            self.requests = []

    def close(self):
        self._httpd.shutdown()
        self._httpd.server_close()


@pytest.fixture
def judge_server():
    server = MockJudgeServer()
    yield server
    server.close()
