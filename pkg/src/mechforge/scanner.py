"""Delimiter scanning front end.

Selects the compiled kernel when it is importable and falls back to the
pure-Python implementation otherwise. Set ``MECHFORGE_PURE_PYTHON=1`` to force
the fallback.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

from . import _scan_py

if os.environ.get("MECHFORGE_PURE_PYTHON"):
    _kernel = _scan_py
else:
    try:
        from . import _scan as _kernel  # type: ignore[attr-defined]
    except ImportError:  # pragma: no cover - depends on the build
        _kernel = _scan_py

BACKEND = "python" if _kernel is _scan_py else "cython"

CLASSES = ("brace", "paren", "bracket")
_END_MODES = {
    1: "double-quoted string",
    2: "single-quoted string",
    3: "template literal",
    5: "block comment",
    6: "regular expression",
}


@dataclass(frozen=True)
class ClassBalance:
    depth: int
    first_imbalance: int  # -1 when balanced
    kind: str | None  # "unexpected-closer" | "unclosed-opener" | None

    @property
    def balanced(self) -> bool:
        return self.first_imbalance < 0


@dataclass(frozen=True)
class BalanceResult:
    brace: ClassBalance
    paren: ClassBalance
    bracket: ClassBalance
    unterminated: str | None = None

    @property
    def balanced(self) -> bool:
        return self.brace.balanced and self.paren.balanced and self.bracket.balanced

    def by_class(self) -> dict[str, ClassBalance]:
        return {"brace": self.brace, "paren": self.paren, "bracket": self.bracket}


@dataclass(frozen=True)
class ScanResult:
    masked: str
    balance: BalanceResult


def _classify(depth: int, stray: int, open_at: int) -> ClassBalance:
    if stray >= 0:
        return ClassBalance(depth, stray, "unexpected-closer")
    if depth > 0:
        return ClassBalance(depth, open_at, "unclosed-opener")
    return ClassBalance(0, -1, None)


def _wrap(raw) -> ScanResult:
    masked, depths, strays, opens, end_mode = raw
    classes = [_classify(depths[k], strays[k], opens[k]) for k in range(3)]
    return ScanResult(masked, BalanceResult(*classes, unterminated=_END_MODES.get(end_mode)))


def scan(script: str, kernel=None) -> ScanResult:
    """Mask non-code characters of ``script`` and measure delimiter balance."""
    return _wrap((kernel or _kernel).scan(script))


def scan_balance(script: str, kernel=None) -> BalanceResult:
    return scan(script, kernel).balance


def kernels() -> dict:
    """Available scanner implementations keyed by backend name."""
    found = {"python": _scan_py}
    try:
        from . import _scan  # type: ignore[attr-defined]
    except ImportError:  # pragma: no cover
        pass
    else:
        found["cython"] = _scan
    return found
