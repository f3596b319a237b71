from __future__ import annotations

import base64
import json
import socket
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest
from hypothesis import given
from hypothesis import strategies as st

from mechforge.browser import (
    DriverUnavailable,
    RuntimeResult,
    WebDriverClient,
    instrument,
    probe_source,
    run_browser_check,
)
from mechforge.model import GameArtifact

ELEM = "element-6066-11e4-a52e-4f735466cecf"


class FakeDriver(BaseHTTPRequestHandler):
    """Just enough of the WebDriver protocol to exercise the check."""

    def _reply(self, value, status=200):
        data = json.dumps({"value": value}).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _body(self):
        n = int(self.headers.get("Content-Length") or 0)
        return json.loads(self.rfile.read(n) or b"{}")

    def do_POST(self):
        st_ = self.server.state
        body = self._body()
        path = self.path
        st_["log"].append(("POST", path, body))
        if path == "/session":
            if st_.get("refuse"):
                return self._reply({"error": "session not created", "message": "no"}, 500)
            return self._reply({"sessionId": "s1", "capabilities": {}})
        if path.endswith("/url"):
            st_["url"] = body["url"]
            return self._reply(None)
        if path.endswith("/element"):
            if st_.get("canvas", True):
                return self._reply({ELEM: "c1"})
            return self._reply({"error": "no such element"}, 404)
        if path.endswith("/actions"):
            st_["actions"] = body
            return self._reply(None)
        if path.endswith("/execute/async"):
            st_["samples"] = st_.get("samples", 0) + 1
            painted = st_["samples"] >= st_.get("paint_after", 1)
            return self._reply({"painted": painted, "canvases": 1})
        if path.endswith("/execute/sync"):
            return self._reply(list(st_.get("errors", [])))
        self._reply({"error": "unknown command"}, 404)

    def do_DELETE(self):
        self.server.state["log"].append(("DELETE", self.path, None))
        self._reply(None)

    def log_message(self, *a):
        pass


@pytest.fixture
def driver():
    srv = ThreadingHTTPServer(("127.0.0.1", 0), FakeDriver)
    srv.state = {"log": []}
    threading.Thread(target=srv.serve_forever, daemon=True).start()
    yield f"http://127.0.0.1:{srv.server_address[1]}", srv.state
    srv.shutdown()
    srv.server_close()


def closed_port():
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    return port


GAME = GameArtifact("<html><head><title>t</title></head><body><canvas></canvas></body></html>")


def test_paints_without_errors_is_playable(driver, demo_html):
    url, state = driver
    r = run_browser_check(GameArtifact(demo_html), url, timeout_ms=2000)
    assert r.playable and r.canvas_painted and r.console_errors == () and not r.degraded
    # the served page is the instrumented document
    served = base64.b64decode(state["url"].split(",", 1)[1]).decode()
    assert served.index("__mfProbe") < served.index("Flip Glider")
    assert state["log"][-1][0] == "DELETE"


def test_page_error_recorded(driver):
    url, state = driver
    state["errors"] = ["Uncaught ReferenceError: foo is not defined"]
    r = run_browser_check(GAME, url, timeout_ms=2000)
    assert not r.playable and r.canvas_painted
    assert r.console_errors == ("Uncaught ReferenceError: foo is not defined",)


def test_never_paints_times_out(driver):
    url, state = driver
    state["paint_after"] = 10**9
    r = run_browser_check(GAME, url, timeout_ms=300)
    assert (r.playable, r.canvas_painted) == (False, False)
    assert state["samples"] >= 1


def test_paint_after_several_samples(driver):
    url, state = driver
    state["paint_after"] = 3
    r = run_browser_check(GAME, url, timeout_ms=5000)
    assert r.playable and state["samples"] == 3


def test_inputs_space_arrows_and_canvas_click(driver):
    url, state = driver
    run_browser_check(GAME, url, timeout_ms=2000)
    key, ptr = state["actions"]["actions"]
    downs = [a["value"] for a in key["actions"] if a["type"] == "keyDown"]
    assert downs == ["\ue00d", "\ue012", "\ue013", "\ue014", "\ue015"]  # space, arrows
    move = ptr["actions"][0]
    assert move["origin"] == {ELEM: "c1"} and (move["x"], move["y"]) == (0, 0)
    assert [a["type"] for a in ptr["actions"][1:]] == ["pointerDown", "pointerUp"]


def test_no_canvas_clicks_viewport(driver):
    url, state = driver
    state["canvas"] = False
    run_browser_check(GAME, url, timeout_ms=2000)
    assert state["actions"]["actions"][1]["actions"][0]["origin"] == "viewport"


def test_closed_port_is_driver_unavailable():
    with pytest.raises(DriverUnavailable):
        run_browser_check(GAME, f"http://127.0.0.1:{closed_port()}", timeout_ms=1000)


def test_refused_session_is_driver_unavailable(driver):
    url, state = driver
    state["refuse"] = True
    with pytest.raises(DriverUnavailable):
        run_browser_check(GAME, url, timeout_ms=1000)


def test_empty_html_rejected():
    with pytest.raises(ValueError):
        run_browser_check(GameArtifact(""), "http://127.0.0.1:1")


def test_dispose_without_session_is_noop():
    WebDriverClient("http://127.0.0.1:1").dispose()


@pytest.mark.parametrize(
    "html,prefix",
    [
        ("<html><head><title>x</title></head></html>", "<html><head><script>"),
        ("<html lang=en><body></body></html>", "<html lang=en><head><script>"),
        ("<canvas></canvas>", "<script>"),
        ("<HTML><HEAD class=a><title>x</title>", "<HTML><HEAD class=a><script>"),
    ],
)
def test_instrument_places_probe_first(html, prefix):
    out = instrument(html, probe="P")
    assert out.startswith(prefix)
    assert out.replace("<script>P</script>", "").replace("<head></head>", "") == html


def test_probe_asset_ships():
    src = probe_source()
    assert "__mfProbe" in src and "getImageData" in src


@given(st.booleans(), st.lists(st.text(max_size=5), max_size=3), st.integers(0, 10**6))
def test_playable_invariant(painted, errors, ms):
    r = RuntimeResult.observed(painted, errors, ms)
    assert r.playable == (painted and not errors)
    assert RuntimeResult.from_dict(json.loads(json.dumps(r.to_dict()))) == r


def test_invariant_enforced_and_degraded_defaults():
    with pytest.raises(ValueError):
        RuntimeResult(playable=True, canvas_painted=False)
    d = RuntimeResult.degraded_result()
    assert d.degraded and not d.playable and d.console_errors == () and d.duration_ms == 0
