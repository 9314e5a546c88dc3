import json
from pathlib import Path

import pytest

from patchloc.testing import RepoBuilder, build_release_fixture, fixture_record_dict, fixture_script
from patchloc.vuln_intel import VulnRecord

FIXTURES = Path(__file__).parent / "fixtures"

_acceptance: dict[str, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion check")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    number = getattr(report, "_acceptance", None)
    if number is None:
        return
    entry = _acceptance.setdefault(number[0], {"title": number[1], "passed": True})
    if report.outcome != "passed":
        entry["passed"] = False


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("acceptance")
    if marker is not None:
        outcome.get_result()._acceptance = marker.args


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_acceptance, key=int):
        entry = _acceptance[number]
        verdict = "PASS" if entry["passed"] else "FAIL"
        terminalreporter.write_line(f"[{verdict}] {number:>2}. {entry['title']}")


@pytest.fixture
def builder(tmp_path):
    return RepoBuilder(tmp_path / "repo")


@pytest.fixture(scope="session")
def release_fixture(tmp_path_factory):
    """The two-release-line repository, built once per session (treat as read-only)."""
    root = tmp_path_factory.mktemp("release")
    hashes = build_release_fixture(root / "repo")
    dataset = root / "records.ndjson"
    dataset.write_text(json.dumps(fixture_record_dict()) + "\n")
    script = root / "script.ndjson"
    script.write_text("".join(json.dumps(e) + "\n" for e in fixture_script(hashes["c5"])))
    return {"root": root, "repo": root / "repo", "hashes": hashes, "dataset": dataset, "script": script}


@pytest.fixture
def fixture_record():
    return VulnRecord.from_dict(fixture_record_dict())


class StubServer:
    """Local HTTP server with scripted replies; records every request it gets."""

    def __init__(self):
        import threading
        from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

        self.requests = []
        self.replies = {}
        self.default = (404, {"error": "not found"})
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def _reply(self, body=b""):
                stub.requests.append((self.command, self.path, body))
                reply = stub.replies.get(self.path.split("?")[0], stub.default)
                if callable(reply):
                    reply = reply(self.path, body)
                if isinstance(reply, list):
                    reply = reply.pop(0) if len(reply) > 1 else reply[0]
                status, payload = reply
                data = payload if isinstance(payload, bytes) else json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def do_GET(self):
                self._reply()

            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                self._reply(self.rfile.read(length))

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.server.server_address[1]}"
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()

    def close(self):
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def stub_server():
    server = StubServer()
    yield server
    server.close()
