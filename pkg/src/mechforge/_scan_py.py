"""Pure-Python delimiter scanner; fallback when the compiled kernel is absent.

Behaviour is identical to ``_scan.pyx`` (checked by the test suite).
"""

MODE_CODE, MODE_DQ, MODE_SQ, MODE_TPL = 0, 1, 2, 3
MODE_LINE_COMMENT, MODE_BLOCK_COMMENT, MODE_REGEX, MODE_SLASH = 4, 5, 6, 7

MAX_TEMPLATE_NESTING = 8

_OPEN = {"{": 0, "(": 1, "[": 2}
_CLOSE = {"}": 0, ")": 1, "]": 2}
_REGEX_PREFIX = frozenset("(,=:[!&|?{;+-*%<>~^")
_SPACE = frozenset(" \t\n\r")


class _State:
    __slots__ = (
        "mode", "escape", "star", "dollar", "rclass", "regex_ok",
        "depth", "stray", "open_at", "prev_sig", "tpl",
    )

    def __init__(self):
        self.mode = MODE_CODE
        self.escape = self.star = self.dollar = self.rclass = self.regex_ok = False
        self.depth = [0, 0, 0]
        self.stray = [-1, -1, -1]
        self.open_at = [-1, -1, -1]
        self.prev_sig = ""
        self.tpl = []

    def clear_flags(self):
        self.escape = self.star = self.dollar = self.rclass = self.regex_ok = False

    def code(self, c, pos):
        if c == '"':
            self.mode = MODE_DQ
        elif c == "'":
            self.mode = MODE_SQ
        elif c == "`":
            self.mode = MODE_TPL
        elif c == "/":
            self.mode = MODE_SLASH
            self.regex_ok = self.prev_sig == "" or self.prev_sig in _REGEX_PREFIX
            return True
        elif c in _OPEN:
            k = _OPEN[c]
            self.depth[k] += 1
            if self.depth[k] == 1:
                self.open_at[k] = pos
        elif c in _CLOSE:
            k = _CLOSE[c]
            if k == 0 and self.tpl and self.depth[0] == self.tpl[-1]:
                self.tpl.pop()
                self.mode = MODE_TPL
                self.clear_flags()
                return True
            if self.depth[k] > 0:
                self.depth[k] -= 1
            elif self.stray[k] < 0:
                self.stray[k] = pos
        if c not in _SPACE:
            self.prev_sig = c
        return True

    def regex(self, c):
        if self.escape:
            self.escape = False
            return False
        if c == "\\":
            self.escape = True
            return False
        if c == "\n":
            self.mode = MODE_CODE
            self.clear_flags()
            return True
        if self.rclass:
            if c == "]":
                self.rclass = False
            return False
        if c == "[":
            self.rclass = True
            return False
        if c == "/":
            self.mode = MODE_CODE
            self.clear_flags()
            self.prev_sig = ")"
            return True
        return False

    def step(self, c, pos):
        mode = self.mode
        if mode == MODE_CODE:
            return self.code(c, pos)
        if mode == MODE_DQ or mode == MODE_SQ:
            if self.escape:
                self.escape = False
                return False
            if c == "\\":
                self.escape = True
                return False
            if c == ('"' if mode == MODE_DQ else "'"):
                self.mode = MODE_CODE
                self.prev_sig = c
                return True
            if c == "\n":
                self.mode = MODE_CODE
                return True
            return False
        if mode == MODE_TPL:
            if self.escape:
                self.escape = False
                return False
            if c == "\\":
                self.clear_flags()
                self.escape = True
                return False
            if c == "`":
                self.mode = MODE_CODE
                self.clear_flags()
                self.prev_sig = c
                return True
            if c == "{" and self.dollar and len(self.tpl) < MAX_TEMPLATE_NESTING:
                self.tpl.append(self.depth[0])
                self.mode = MODE_CODE
                self.clear_flags()
                self.prev_sig = c
                return True
            self.dollar = c == "$"
            return c == "\n"
        if mode == MODE_LINE_COMMENT:
            if c == "\n":
                self.mode = MODE_CODE
                return True
            return False
        if mode == MODE_BLOCK_COMMENT:
            if self.star and c == "/":
                self.mode = MODE_CODE
                self.clear_flags()
                return False
            self.star = c == "*"
            return c == "\n"
        if mode == MODE_REGEX:
            return self.regex(c)
        # MODE_SLASH
        if c == "/":
            self.mode = MODE_LINE_COMMENT
            self.clear_flags()
            return False
        if c == "*":
            self.mode = MODE_BLOCK_COMMENT
            self.clear_flags()
            return False
        if self.regex_ok:
            self.mode = MODE_REGEX
            self.clear_flags()
            return self.regex(c)
        self.mode = MODE_CODE
        self.clear_flags()
        self.prev_sig = "/"
        return self.code(c, pos)


def scan(text):
    """Scan ``text``; return ``(masked, depths, strays, open_ats, end_mode)``."""
    st = _State()
    out = []
    append = out.append
    step = st.step
    for i, c in enumerate(text):
        if step(c, i) or c == "\n":
            append(c)
        else:
            append(" ")
    return ("".join(out), tuple(st.depth), tuple(st.stray), tuple(st.open_at), st.mode)
