# cython: language_level=3
"""Compiled delimiter scanner for embedded game scripts.

Walks a script once, skipping string, template, regex and comment bodies,
and tracks ``{}``, ``()`` and ``[]`` nesting per delimiter class. Also emits
a masked copy of the script where every non-code character is a blank, so
pattern checks downstream never match inside literals or comments.
"""

from cpython.unicode cimport PyUnicode_FromKindAndData, PyUnicode_4BYTE_KIND
from libc.stdlib cimport malloc, free


def scan(str text):
    """Scan ``text``; return ``(masked, depths, strays, open_ats, end_mode)``."""
    cdef Py_ssize_t n = len(text)
    cdef Py_ssize_t i
    cdef ScanState st
    cdef Py_UCS4 c
    cdef Py_UCS4* buf
    if n > 0x7FFFFFFF:
        raise ValueError("script too large to scan")
    buf = <Py_UCS4*> malloc((n if n > 0 else 1) * sizeof(Py_UCS4))
    if buf == NULL:
        raise MemoryError()
    scan_init(&st)
    try:
        for i in range(n):
            c = text[i]
            if scan_step(&st, c, <int> i) or c == u'\n':
                buf[i] = c
            else:
                buf[i] = u' '
        masked = PyUnicode_FromKindAndData(PyUnicode_4BYTE_KIND, buf, n)
    finally:
        free(buf)
    return (
        masked,
        (st.depth[0], st.depth[1], st.depth[2]),
        (st.stray[0], st.stray[1], st.stray[2]),
        (st.open_at[0], st.open_at[1], st.open_at[2]),
        st.mode,
    )
