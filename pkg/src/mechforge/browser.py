"""Tier-2 execution check over the browser-driver wire protocol.

A headless browser is driven through a WebDriver endpoint (session create,
navigate, execute script, actions, dispose). The game document is served as
a data URL with a small probe script injected at the top of ``<head>`` so
errors raised while the page loads are captured too.
"""
from __future__ import annotations

import base64
import json
import logging
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from importlib import resources

from .model import GameArtifact

log = logging.getLogger(__name__)

PAINT_SAMPLE_GAP_MS = 250
DEFAULT_TIMEOUT_MS = 10000
_W3C_ELEMENT = "element-6066-11e4-a52e-4f735466cecf"


class DriverUnavailable(Exception):
    """The driver endpoint is unreachable or refused to create a session."""


@dataclass(frozen=True)
class RuntimeResult:
    playable: bool = False
    canvas_painted: bool = False
    console_errors: tuple[str, ...] = ()
    duration_ms: int = 0
    degraded: bool = False

    def __post_init__(self):
        object.__setattr__(self, "console_errors", tuple(self.console_errors))
        if self.playable != (self.canvas_painted and not self.console_errors):
            raise ValueError("playable must equal canvas_painted and no console errors")

    @classmethod
    def observed(cls, canvas_painted: bool, console_errors, duration_ms: int) -> RuntimeResult:
        errors = tuple(console_errors)
        return cls(canvas_painted and not errors, canvas_painted, errors, duration_ms, False)

    @classmethod
    def degraded_result(cls) -> RuntimeResult:
        return cls(degraded=True)

    def to_dict(self) -> dict:
        return {
            "playable": self.playable,
            "canvas_painted": self.canvas_painted,
            "console_errors": list(self.console_errors),
            "duration_ms": self.duration_ms,
            "degraded": self.degraded,
        }

    @classmethod
    def from_dict(cls, d: dict) -> RuntimeResult:
        return cls(
            playable=d.get("playable", False),
            canvas_painted=d.get("canvas_painted", False),
            console_errors=tuple(d.get("console_errors", ())),
            duration_ms=d.get("duration_ms", 0),
            degraded=d.get("degraded", False),
        )


def probe_source() -> str:
    return resources.files("mechforge").joinpath("data/probe.js").read_text(encoding="utf-8")


def instrument(html: str, probe: str | None = None) -> str:
    """Insert the probe as the first script of the document."""
    tag = f"<script>{probe or probe_source()}</script>"
    lower = html.lower()
    for anchor in ("<head>", "<head "):
        i = lower.find(anchor)
        if i >= 0:
            j = lower.find(">", i) + 1
            return html[:j] + tag + html[j:]
    i = lower.find("<html")
    if i >= 0:
        j = lower.find(">", i) + 1
        return html[:j] + "<head>" + tag + "</head>" + html[j:]
    return tag + html


def data_url(html: str) -> str:
    return "data:text/html;base64," + base64.b64encode(html.encode("utf-8")).decode("ascii")


# Keys: space, then the four arrows (WebDriver normalized key codes).
INPUT_KEYS = ("\ue00d", "\ue012", "\ue013", "\ue014", "\ue015")


def input_actions(canvas_ref: dict | None) -> dict:
    keys = []
    for k in INPUT_KEYS:
        keys += [{"type": "keyDown", "value": k}, {"type": "pause", "duration": 30}, {"type": "keyUp", "value": k}]
    pointer_origin = canvas_ref if canvas_ref else "viewport"
    pointer = [
        {"type": "pointerMove", "duration": 0, "origin": pointer_origin, "x": 0, "y": 0},
        {"type": "pointerDown", "button": 0},
        {"type": "pointerUp", "button": 0},
    ]
    return {
        "actions": [
            {"type": "key", "id": "keyboard", "actions": keys},
            {
                "type": "pointer",
                "id": "mouse",
                "parameters": {"pointerType": "mouse"},
                "actions": pointer,
            },
        ]
    }


@dataclass
class WebDriverClient:
    """Minimal W3C WebDriver client over ``urllib``."""

    endpoint: str
    timeout_s: float = 10.0
    session_id: str | None = field(default=None, init=False)

    def _call(self, method: str, path: str, body: dict | None = None) -> dict:
        url = self.endpoint.rstrip("/") + path
        data = None if body is None else json.dumps(body).encode("utf-8")
        req = urllib.request.Request(url, data=data, method=method, headers={"Content-Type": "application/json"})
        with urllib.request.urlopen(req, timeout=self.timeout_s) as resp:
            payload = json.loads(resp.read().decode("utf-8") or "{}")
        return payload.get("value", payload) if isinstance(payload, dict) else {"value": payload}

    def _session(self, method: str, suffix: str, body: dict | None = None):
        return self._call(method, f"/session/{self.session_id}{suffix}", body)

    def create_session(self, headless: bool = True) -> str:
        args = ["--headless=new", "--no-sandbox"] if headless else []
        caps = {
            "capabilities": {
                "alwaysMatch": {
                    "goog:chromeOptions": {"args": args},
                    "moz:firefoxOptions": {"args": ["-headless"] if headless else []},
                }
            }
        }
        try:
            value = self._call("POST", "/session", caps)
        except (urllib.error.URLError, OSError, ValueError) as exc:
            raise DriverUnavailable(f"{self.endpoint}: {exc}") from exc
        sid = value.get("sessionId") if isinstance(value, dict) else None
        if not sid:
            raise DriverUnavailable(f"{self.endpoint}: session creation refused: {value}")
        self.session_id = sid
        return sid

    def navigate(self, url: str):
        self._session("POST", "/url", {"url": url})

    def execute(self, script: str, args=None):
        return self._session("POST", "/execute/sync", {"script": script, "args": list(args or [])})

    def execute_async(self, script: str, args=None):
        return self._session("POST", "/execute/async", {"script": script, "args": list(args or [])})

    def find_css(self, selector: str):
        try:
            return self._session("POST", "/element", {"using": "css selector", "value": selector})
        except urllib.error.HTTPError:
            return None

    def perform(self, actions: dict):
        self._session("POST", "/actions", actions)

    def dispose(self):
        if self.session_id is None:
            return
        try:
            self._session("DELETE", "")
        except (urllib.error.URLError, OSError, ValueError):
            log.debug("session %s dispose failed", self.session_id)
        self.session_id = None


_READ_PROBE = "return window.__mfProbe ? window.__mfProbe.errors.slice() : null;"
_SAMPLE = (
    "var done = arguments[arguments.length - 1];"
    "window.__mfProbe.sample(arguments[0]).then(done, function (e) { done({error: String(e)}); });"
)


def run_browser_check(
    artifact: GameArtifact,
    driver_endpoint: str,
    timeout_ms: int = DEFAULT_TIMEOUT_MS,
    client: WebDriverClient | None = None,
) -> RuntimeResult:
    """Load ``artifact`` in a headless browser and report runtime viability.

    Raises :class:`DriverUnavailable` when no session can be created; the
    caller is expected to fall back to static analysis alone.
    """
    if not artifact.html:
        raise ValueError("artifact html is empty")
    started = time.monotonic()
    client = client or WebDriverClient(driver_endpoint, timeout_s=max(1.0, timeout_ms / 1000))
    client.create_session()
    deadline = started + timeout_ms / 1000.0
    try:
        try:
            client.navigate(data_url(instrument(artifact.html)))
            canvas = client.find_css("canvas")
            if isinstance(canvas, dict) and _W3C_ELEMENT in canvas:
                client.perform(input_actions({_W3C_ELEMENT: canvas[_W3C_ELEMENT]}))
            else:
                client.perform(input_actions(None))
            painted = False
            errors: list[str] = []
            while True:
                sample = client.execute_async(_SAMPLE, [PAINT_SAMPLE_GAP_MS]) or {}
                painted = bool(sample.get("painted"))
                errors = [str(e) for e in (client.execute(_READ_PROBE) or [])]
                if painted or errors or time.monotonic() >= deadline:
                    break
        except (urllib.error.URLError, OSError, ValueError) as exc:
            errors = [f"driver error: {exc}"]
            painted = False
    finally:
        client.dispose()
    duration = int((time.monotonic() - started) * 1000)
    return RuntimeResult.observed(painted, errors, duration)
