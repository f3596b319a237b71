"""Tier-1 static analysis of single-file canvas games.

Nine lexical checks run over the inline scripts of a document. Scripts are
first passed through the delimiter scanner, which also yields a masked copy
with string, regex and comment bodies blanked; every pattern check runs on
code positions only. Each failing error check costs 0.20 of the score, each
failing warning check 0.05.
"""
from __future__ import annotations

import bisect
import re
from dataclasses import dataclass, field

from .browser import RuntimeResult
from .scanner import scan

ERROR = "error"
WARNING = "warning"
PASS = "pass"

ERROR_DEDUCTION = 0.20
WARNING_DEDUCTION = 0.05

# check id -> severity when the check fails
CHECKS: dict[str, str] = {
    "brace_balance": ERROR,
    "paren_bracket_balance": ERROR,
    "loop_invoked": ERROR,
    "loop_recursive": WARNING,
    "canvas_context": ERROR,
    "input_listener": ERROR,
    "init_on_load": WARNING,
    "render_call": WARNING,
    "state_update": WARNING,
}
CORE_FEATURE_CHECKS = ("canvas_context", "loop_invoked", "input_listener")


@dataclass(frozen=True)
class CheckOutcome:
    check_id: str
    severity: str
    message: str = ""
    location: tuple[int, int] | None = None

    def to_dict(self) -> dict:
        return {
            "check_id": self.check_id,
            "severity": self.severity,
            "message": self.message,
            "location": list(self.location) if self.location else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> CheckOutcome:
        loc = d.get("location")
        return cls(d["check_id"], d["severity"], d.get("message", ""), tuple(loc) if loc else None)


def deduction_score(error_count: int, warning_count: int) -> float:
    return min(1.0, max(0.0, 1.0 - ERROR_DEDUCTION * error_count - WARNING_DEDUCTION * warning_count))


@dataclass(frozen=True)
class ValidationReport:
    outcomes: tuple[CheckOutcome, ...]
    error_count: int
    warning_count: int
    score: float
    runtime: RuntimeResult | None = None
    external_scripts: tuple[str, ...] = ()

    @classmethod
    def from_outcomes(cls, outcomes, runtime=None, external_scripts=()) -> ValidationReport:
        outcomes = tuple(outcomes)
        errors = sum(o.severity == ERROR for o in outcomes)
        warnings = sum(o.severity == WARNING for o in outcomes)
        return cls(outcomes, errors, warnings, deduction_score(errors, warnings), runtime, tuple(external_scripts))

    def outcome(self, check_id: str) -> CheckOutcome:
        for o in self.outcomes:
            if o.check_id == check_id:
                return o
        raise KeyError(check_id)

    def failed(self, severity: str | None = None) -> list[CheckOutcome]:
        return [o for o in self.outcomes if o.severity != PASS and (severity is None or o.severity == severity)]

    def with_runtime(self, runtime: RuntimeResult | None) -> ValidationReport:
        return ValidationReport(
            self.outcomes, self.error_count, self.warning_count, self.score, runtime, self.external_scripts
        )

    def to_dict(self) -> dict:
        return {
            "outcomes": [o.to_dict() for o in self.outcomes],
            "error_count": self.error_count,
            "warning_count": self.warning_count,
            "score": self.score,
            "runtime": self.runtime.to_dict() if self.runtime else None,
            "external_scripts": list(self.external_scripts),
        }

    @classmethod
    def from_dict(cls, d: dict) -> ValidationReport:
        rt = d.get("runtime")
        return cls(
            outcomes=tuple(CheckOutcome.from_dict(x) for x in d["outcomes"]),
            error_count=d["error_count"],
            warning_count=d["warning_count"],
            score=d["score"],
            runtime=RuntimeResult.from_dict(rt) if rt else None,
            external_scripts=tuple(d.get("external_scripts", ())),
        )


# --- script extraction ---------------------------------------------------

_SCRIPT_OPEN = re.compile(r"<script\b([^>]*)>", re.IGNORECASE)
_SCRIPT_CLOSE = re.compile(r"</script\s*>", re.IGNORECASE)
_ATTR = re.compile(r"""([\w:-]+)\s*(?:=\s*(?:"([^"]*)"|'([^']*)'|([^\s"'>]+)))?""")
_JS_TYPES = {"", "text/javascript", "application/javascript", "module", "text/ecmascript", "application/ecmascript"}


@dataclass(frozen=True)
class ScriptElement:
    body: str
    offset: int  # index of the body in the document
    src: str | None = None


def find_scripts(html: str) -> list[ScriptElement]:
    """Locate JavaScript script elements in document order.

    Elements whose ``type`` marks them as data or shader text are skipped.
    An element left open at the end of the document runs to the end.
    """
    out = []
    pos = 0
    while True:
        m = _SCRIPT_OPEN.search(html, pos)
        if not m:
            break
        attrs = {}
        for a in _ATTR.finditer(m.group(1)):
            attrs[a.group(1).lower()] = next((g for g in a.groups()[1:] if g is not None), "")
        end = _SCRIPT_CLOSE.search(html, m.end())
        body_end = end.start() if end else len(html)
        pos = end.end() if end else len(html)
        if attrs.get("type", "").strip().lower() not in _JS_TYPES:
            continue
        out.append(ScriptElement(html[m.end():body_end], m.end(), attrs.get("src")))
    return out


def extract_scripts(html: str) -> list[str]:
    """Inline script bodies in document order (empty for ``src``-only elements)."""
    return [s.body for s in find_scripts(html)]


# --- lexical program map -------------------------------------------------

_IDENT = r"[A-Za-z_$][\w$]*"
_IDENT_RE = re.compile(_IDENT)
_REF_RE = re.compile(r"(?<![\w$])" + _IDENT)
_KEYWORDS = frozenset(
    """if for while switch catch with function return typeof new delete void
    do else try finally class const let var in of instanceof await yield
    async super this import export default case break continue throw get set
    static extends""".split()
)
_FUNC_DECL = re.compile(rf"\bfunction\b\s*\*?\s*({_IDENT})\s*\(")
_ASSIGNED = re.compile(
    rf"(?<![\w$])({_IDENT})\s*[:=]\s*(?:async\b\s*)?(?:(function\b\s*\*?\s*(?:{_IDENT})?\s*\()|(\(|{_IDENT}\s*=>))"
)
_METHOD = re.compile(rf"(?<![\w$.])({_IDENT})\s*(\()[^(){{}};]*\)\s*\{{")
_CLASS = re.compile(rf"\bclass\s+({_IDENT})(?:\s+extends\s+[\w$.]+)?\s*\{{")
_SCHEDULE = re.compile(r"\b(requestAnimationFrame|setInterval|setTimeout)\s*\(")


@dataclass(frozen=True)
class FunctionDef:
    name: str
    name_pos: int
    body_start: int  # index of the opening brace (or first char of an expression body)
    body_end: int  # index of the closing brace (inclusive)
    kind: str = "function"


def _pair_map(code: str, opener: str, closer: str) -> dict[int, int]:
    pairs = {}
    stack = []
    for m in re.finditer(re.escape(opener) + "|" + re.escape(closer), code):
        if m.group() == opener:
            stack.append(m.start())
        elif stack:
            pairs[stack.pop()] = m.start()
    for i in stack:
        pairs[i] = len(code) - 1
    return pairs


def _skip_ws(code: str, i: int) -> int:
    n = len(code)
    while i < n and code[i] in " \t\r\n":
        i += 1
    return i


@dataclass
class ProgramMap:
    """Function bodies, identifier references and reachability for masked code."""

    code: str
    braces: dict[int, int]
    parens: dict[int, int]
    defs: list[FunctionDef]
    owners: list[int]  # per identifier occurrence: index into defs, or -1 for top level
    idents: list[tuple[int, str]]
    live: set[int] = field(default_factory=set)
    _brace_pos: list[int] = field(default_factory=list, repr=False)
    _brace_depth: list[int] = field(default_factory=list, repr=False)

    def __post_init__(self):
        depth = 0
        for m in re.finditer(r"[{}]", self.code):
            depth = depth + 1 if m.group() == "{" else max(0, depth - 1)
            self._brace_pos.append(m.start())
            self._brace_depth.append(depth)

    def brace_depth(self, pos: int) -> int:
        i = bisect.bisect_left(self._brace_pos, pos)
        return self._brace_depth[i - 1] if i else 0

    def owner_of(self, pos: int) -> int:
        """Index of the innermost named function whose body holds ``pos``."""
        best = -1
        for k, d in enumerate(self.defs):
            if d.body_start <= pos <= d.body_end and (best < 0 or d.body_start >= self.defs[best].body_start):
                best = k
        return best

    def is_live_pos(self, pos: int) -> bool:
        k = self.owner_of(pos)
        return k < 0 or k in self.live

    def names(self) -> set[str]:
        return {d.name for d in self.defs if d.kind != "class"}


def _body_after_params(code, braces, parens, paren_pos):
    close = parens.get(paren_pos)
    if close is None:
        return None
    j = _skip_ws(code, close + 1)
    if j < len(code) and code[j] == "{":
        return j, braces.get(j, len(code) - 1)
    return None


def _arrow_body(code, braces, parens, start):
    # start points at '(' of the parameter list or at the bare parameter name
    if code[start] == "(":
        close = parens.get(start)
        if close is None:
            return None
        j = _skip_ws(code, close + 1)
    else:
        j = start
        while j < len(code) and (code[j].isalnum() or code[j] in "_$"):
            j += 1
        j = _skip_ws(code, j)
    if not code.startswith("=>", j):
        return None
    j = _skip_ws(code, j + 2)
    if j < len(code) and code[j] == "{":
        return j, braces.get(j, len(code) - 1)
    end = code.find("\n", j)
    return j, (len(code) - 1 if end < 0 else end)


def build_program_map(code: str, root_names=()) -> ProgramMap:
    braces = _pair_map(code, "{", "}")
    parens = _pair_map(code, "(", ")")
    by_body: dict[int, FunctionDef] = {}

    def add(name, name_pos, span, kind="function"):
        if span and span[0] not in by_body:
            by_body[span[0]] = FunctionDef(name, name_pos, span[0], span[1], kind)

    for m in _CLASS.finditer(code):
        j = m.end() - 1
        add(m.group(1), m.start(1), (j, braces.get(j, len(code) - 1)), "class")
    for m in _FUNC_DECL.finditer(code):
        add(m.group(1), m.start(1), _body_after_params(code, braces, parens, m.end() - 1))
    for m in _ASSIGNED.finditer(code):
        if m.group(2):
            add(m.group(1), m.start(1), _body_after_params(code, braces, parens, m.end(2) - 1))
        else:
            add(m.group(1), m.start(1), _arrow_body(code, braces, parens, m.start(3)))
    for m in _METHOD.finditer(code):
        name = m.group(1)
        if name in _KEYWORDS:
            continue
        add(name, m.start(1), _body_after_params(code, braces, parens, m.start(2)), "method")

    defs = sorted(by_body.values(), key=lambda d: (d.body_start, -d.body_end))
    def_sites = {d.name_pos for d in defs}
    # only references to defined names can create edges
    names = {d.name for d in defs}
    idents = [
        (m.start(), m.group())
        for m in _REF_RE.finditer(code)
        if m.group() in names and m.start() not in def_sites
    ]

    # sweep: innermost enclosing def for every identifier occurrence
    owners = []
    stack: list[int] = []
    k = 0
    for pos, _ in idents:
        while k < len(defs) and defs[k].body_start <= pos:
            while stack and defs[stack[-1]].body_end < defs[k].body_start:
                stack.pop()
            stack.append(k)
            k += 1
        while stack and defs[stack[-1]].body_end < pos:
            stack.pop()
        owners.append(stack[-1] if stack else -1)

    pm = ProgramMap(code, braces, parens, defs, owners, idents)
    pm.live = _reachable(pm, set(root_names))
    return pm


def _is_event_property(code: str, d: FunctionDef) -> bool:
    # `el.onload = function () {...}`: the browser calls it, nothing in the source does
    return d.name.startswith("on") and d.name_pos > 0 and code[d.name_pos - 1] == "."


def _reachable(pm: ProgramMap, root_names: set[str]) -> set[int]:
    by_name: dict[str, list[int]] = {}
    for k, d in enumerate(pm.defs):
        by_name.setdefault(d.name, []).append(k)
    edges: dict[int, set[int]] = {-1: set()}
    for k, d in enumerate(pm.defs):
        if d.name in root_names or _is_event_property(pm.code, d):
            edges[-1].add(k)
    for (pos, name), owner in zip(pm.idents, pm.owners):
        for target in by_name.get(name, ()):
            if target != owner:
                edges.setdefault(owner, set()).add(target)
    # a live class runs its constructor
    ctor_of = {}
    for k, d in enumerate(pm.defs):
        if d.kind == "class":
            for j, m in enumerate(pm.defs):
                if m.name == "constructor" and d.body_start < m.body_start <= d.body_end:
                    ctor_of.setdefault(k, set()).add(j)
    live: set[int] = set()
    todo = [-1]
    while todo:
        cur = todo.pop()
        nxt = set(edges.get(cur, ())) | ctor_of.get(cur, set())
        for t in nxt:
            if t not in live:
                live.add(t)
                todo.append(t)
    return live


# --- checks --------------------------------------------------------------

_CONTEXT_RE = re.compile(r"""\.getContext\s*\(\s*(['"`])(2d|webgl2?|experimental-webgl|bitmaprenderer)\1""")
_LISTENER_RE = re.compile(
    r"""addEventListener\s*\(\s*(['"`])(key\w*|mouse\w*|touch\w*|pointer\w*|click|dblclick|contextmenu|wheel)\1"""
)
_HANDLER_PROP_RE = re.compile(r"\.on(key\w+|mouse\w+|touch\w+|pointer\w+|click|dblclick|wheel)\s*=(?!=)")
_HTML_HANDLER_RE = re.compile(r"<[a-z][^>]*\son(key\w+|mouse\w+|touch\w+|pointer\w+|click)\s*=", re.IGNORECASE)
_HTML_HANDLER_ATTR_RE = re.compile(r"""\son\w+\s*=\s*(?:"([^"]*)"|'([^']*)')""", re.IGNORECASE)
_LOAD_LISTENER_RE = re.compile(r"""addEventListener\s*\(\s*(['"`])(load|DOMContentLoaded)\1""")
_ONLOAD_PROP_RE = re.compile(r"\bonload\s*=(?!=)|\bdocument\.readyState\b")
_BODY_ONLOAD_RE = re.compile(r"<body\b[^>]*\sonload\s*=", re.IGNORECASE)
_RENDER_RE = re.compile(r"\.(?:fill|stroke|draw|clear)\w*\s*\(")
_MUTATION_RE = re.compile(r"(?<![=!<>])=(?![=>])|\+\+|--|\.(?:push|pop|splice|shift|unshift|set|delete|add)\s*\(")


class _Doc:
    """Concatenated scripts plus a map from combined offsets to document positions."""

    def __init__(self, html: str, scripts: list[ScriptElement]):
        self.html = html
        parts, masked, starts = [], [], []
        self.balance = []
        at = 0
        for s in scripts:
            res = scan(s.body)
            starts.append((at, s.offset))
            parts.append(s.body)
            masked.append(res.masked)
            self.balance.append((at, res.balance))
            at += len(s.body) + 1
        self.src = "\n".join(parts)
        self.code = "\n".join(masked)
        self._starts = starts
        self._line_starts = [0] + [m.end() for m in re.finditer("\n", html)]

    def in_code(self, pos: int) -> bool:
        return 0 <= pos < len(self.code) and self.code[pos] == self.src[pos]

    def location(self, pos: int) -> tuple[int, int] | None:
        if pos < 0 or not self._starts:
            return None
        k = bisect.bisect_right([a for a, _ in self._starts], pos) - 1
        combined_start, doc_offset = self._starts[max(k, 0)]
        doc_pos = doc_offset + (pos - combined_start)
        line = bisect.bisect_right(self._line_starts, doc_pos)
        return line, doc_pos - self._line_starts[line - 1] + 1

    def code_matches(self, pattern: re.Pattern, text: str | None = None):
        text = self.src if text is None else text
        return [m for m in pattern.finditer(text) if self.in_code(m.start())]


def _balance_outcomes(doc: _Doc) -> list[CheckOutcome]:
    def first(classes):
        worst = None
        for at, bal in doc.balance:
            for name in classes:
                cb = getattr(bal, name)
                if not cb.balanced and (worst is None or at + cb.first_imbalance < worst[0]):
                    worst = (at + cb.first_imbalance, name, cb.kind)
        return worst

    out = []
    for check_id, classes in (("brace_balance", ("brace",)), ("paren_bracket_balance", ("paren", "bracket"))):
        hit = first(classes)
        if hit is None:
            out.append(CheckOutcome(check_id, PASS))
        else:
            pos, name, kind = hit
            out.append(CheckOutcome(check_id, ERROR, f"{name}: {kind}", doc.location(pos)))
    return out


@dataclass(frozen=True)
class _Schedule:
    api: str
    pos: int
    args: tuple[int, int]  # span of the argument list, exclusive of parens
    owner: int


def _schedules(doc: _Doc, pm: ProgramMap) -> list[_Schedule]:
    out = []
    for m in doc.code_matches(_SCHEDULE, doc.code):
        open_paren = m.end() - 1
        close = pm.parens.get(open_paren, len(doc.code) - 1)
        out.append(_Schedule(m.group(1), m.start(), (open_paren + 1, close), pm.owner_of(m.start())))
    return out


def _idents_in(pm: ProgramMap, span: tuple[int, int]) -> set[str]:
    return {m.group() for m in _IDENT_RE.finditer(pm.code, span[0], span[1])}


def _self_scheduling(pm: ProgramMap, s: _Schedule) -> bool:
    return s.owner >= 0 and pm.defs[s.owner].name in _idents_in(pm, s.args)


def analyze(html: str) -> ValidationReport:
    """Run the nine static checks over ``html`` and score the result."""
    scripts = find_scripts(html)
    doc = _Doc(html, scripts)
    scripts_free = _strip_scripts(html)
    handler_names = {
        m.group()
        for a in _HTML_HANDLER_ATTR_RE.finditer(scripts_free)
        for m in _IDENT_RE.finditer(a.group(1) or a.group(2) or "")
    }
    pm = build_program_map(doc.code, handler_names)
    outcomes = _balance_outcomes(doc)

    schedules = _schedules(doc, pm)
    loops = [s for s in schedules if s.api != "setTimeout" or _self_scheduling(pm, s)]
    live_loops = [s for s in loops if s.owner < 0 or s.owner in pm.live]
    if live_loops:
        outcomes.append(CheckOutcome("loop_invoked", PASS))
    elif loops:
        s = loops[0]
        name = pm.defs[s.owner].name if s.owner >= 0 else "?"
        outcomes.append(
            CheckOutcome(
                "loop_invoked",
                ERROR,
                f"{s.api} only appears inside {name}(), which is defined but never called",
                doc.location(s.pos),
            )
        )
    else:
        outcomes.append(CheckOutcome("loop_invoked", ERROR, "no requestAnimationFrame/setInterval call"))

    recursive = any(s.api == "setInterval" for s in live_loops) or any(
        _self_scheduling(pm, s) for s in schedules if s.api != "setInterval"
    )
    if recursive:
        outcomes.append(CheckOutcome("loop_recursive", PASS))
    else:
        where = doc.location(schedules[0].pos) if schedules else None
        outcomes.append(CheckOutcome("loop_recursive", WARNING, "frame callback never re-schedules itself", where))

    if doc.code_matches(_CONTEXT_RE):
        outcomes.append(CheckOutcome("canvas_context", PASS))
    else:
        outcomes.append(CheckOutcome("canvas_context", ERROR, "no getContext('2d'|'webgl') call"))

    if (
        doc.code_matches(_LISTENER_RE)
        or doc.code_matches(_HANDLER_PROP_RE, doc.code)
        or _HTML_HANDLER_RE.search(scripts_free)
    ):
        outcomes.append(CheckOutcome("input_listener", PASS))
    else:
        outcomes.append(CheckOutcome("input_listener", ERROR, "no keyboard, mouse or touch listener"))

    if (
        doc.code_matches(_LOAD_LISTENER_RE)
        or doc.code_matches(_ONLOAD_PROP_RE, doc.code)
        or _BODY_ONLOAD_RE.search(scripts_free)
        or _top_level_call(pm, schedules)
    ):
        outcomes.append(CheckOutcome("init_on_load", PASS))
    else:
        outcomes.append(CheckOutcome("init_on_load", WARNING, "nothing starts the game on load"))

    if doc.code_matches(_RENDER_RE, doc.code):
        outcomes.append(CheckOutcome("render_call", PASS))
    else:
        outcomes.append(CheckOutcome("render_call", WARNING, "no fill/stroke/draw/clear call"))

    if _loop_mutates(pm, loops):
        outcomes.append(CheckOutcome("state_update", PASS))
    else:
        outcomes.append(CheckOutcome("state_update", WARNING, "scheduled loop never updates state"))

    external = [s.src for s in scripts if s.src]
    return ValidationReport.from_outcomes(outcomes, external_scripts=external)


def _strip_scripts(html: str) -> str:
    return re.sub(r"<script\b.*?(</script\s*>|$)", "", html, flags=re.IGNORECASE | re.DOTALL)


def _top_level_call(pm: ProgramMap, schedules: list[_Schedule]) -> bool:
    """A scheduling call, or a call of a defined name, outside every block."""
    if any(pm.brace_depth(s.pos) == 0 for s in schedules):
        return True
    first_def = {}
    for d in pm.defs:
        first_def.setdefault(d.name, d.name_pos)
    code = pm.code
    for pos, name in pm.idents:
        if pos < first_def[name] or pm.brace_depth(pos) != 0:
            continue
        j = _skip_ws(code, pos + len(name))
        if j < len(code) and code[j] == "(":
            return True
    return False


def _loop_mutates(pm: ProgramMap, loops: list[_Schedule]) -> bool:
    if not loops:
        return False
    by_name: dict[str, list[int]] = {}
    for k, d in enumerate(pm.defs):
        by_name.setdefault(d.name, []).append(k)
    spans = []
    todo = []
    for s in loops:
        spans.append(s.args)
        for name in _idents_in(pm, s.args):
            todo.extend(by_name.get(name, ()))
    seen: set[int] = set()
    while todo:
        k = todo.pop()
        if k in seen:
            continue
        seen.add(k)
        d = pm.defs[k]
        spans.append((d.body_start, d.body_end + 1))
        for name in _idents_in(pm, (d.body_start, d.body_end + 1)):
            todo.extend(by_name.get(name, ()))
    return any(_MUTATION_RE.search(pm.code, a, b) for a, b in spans)
