"""Scripted pipeline rigs shared by the pipeline, CLI and acceptance tests."""
from __future__ import annotations

import json
from importlib import resources

from mechforge.gateway import Gateway, ScriptedProvider
from mechforge.pipeline import Pipeline
from mechforge.store import LineageStore

FIXED_CLOCK = "2026-01-01T00:00:00+00:00"


def demo_entries() -> list[dict]:
    text = resources.files("mechforge").joinpath("data/demo_script.json").read_text(encoding="utf-8")
    data = json.loads(text)
    return data["entries"] if isinstance(data, dict) else data


def data_text(name: str) -> str:
    return resources.files("mechforge").joinpath("data", name).read_text(encoding="utf-8")


def script(**roles) -> list[dict]:
    """Demo script with whole roles replaced: ``script(reflection=[{"response": ...}])``."""
    out = [e for e in demo_entries() if e["role"] not in roles]
    for role, entries in roles.items():
        out += [{"role": role, **e} for e in entries]
    return out


def fenced(html: str) -> str:
    return f"Here you go.\n\n```html\n{html}\n```\n"


class Ticker:
    """Deterministic stand-in for perf_counter."""

    def __init__(self):
        self.t = 0.0

    def __call__(self):
        self.t += 0.001
        return self.t


def rig(root, entries, seed=1, provider=None, browser_check=None):
    store = LineageStore(root, seed=seed, clock=lambda: FIXED_CLOCK)
    provider = provider or ScriptedProvider(entries)
    gw = Gateway(provider, sleep=lambda s: None)
    kw = {"browser_check": browser_check} if browser_check else {}
    return Pipeline(gw, store, timer=Ticker(), **kw), provider
