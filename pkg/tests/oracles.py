"""Independent reference implementations used only by the tests.

Each oracle is written from the rule statement directly, without importing
the code under test, so agreement is evidence rather than tautology.
"""
from __future__ import annotations

import itertools
import math
import re

# --- reward -----------------------------------------------------------------


def reward_oracle(mr, smc, rmn, lc, rp, cop, rgp, sanity, runtime_ok):
    r = 0.20 * mr + 0.25 * smc + 0.20 * rmn + 0.15 * lc + 0.10 * rp - 0.15 * cop - 0.10 * rgp
    if sanity < 0.6:
        r = r * 0.25
    if not runtime_ok:
        r = r * 0.5
    return r


# --- delimiter balance ----------------------------------------------------------

OPEN = {"{": 0, "(": 1, "[": 2}
CLOSE = {"}": 0, ")": 1, "]": 2}


def balance_oracle(s: str):
    """Per class (brace, paren, bracket): (depth, first_imbalance) for quote-only scripts.

    Handles double-quoted strings without escapes, which is all the exhaustive
    alphabet can produce. first_imbalance is the first unmatched closer, or
    failing that the outermost still-open opener, or -1.
    """
    stacks = [[], [], []]
    stray = [-1, -1, -1]
    in_str = False
    for i, c in enumerate(s):
        if in_str:
            if c == '"':
                in_str = False
            continue
        if c == '"':
            in_str = True
        elif c in OPEN:
            stacks[OPEN[c]].append(i)
        elif c in CLOSE:
            k = CLOSE[c]
            if stacks[k]:
                stacks[k].pop()
            elif stray[k] < 0:
                stray[k] = i
    out = []
    for k in range(3):
        if stray[k] >= 0:
            first = stray[k]
        elif stacks[k]:
            first = stacks[k][0]
        else:
            first = -1
        out.append(first)
    return tuple(out), in_str


# --- token Jaccard ------------------------------------------------------------


def tokens_oracle(text: str) -> set[str]:
    cleaned = "".join(ch if ch.isalnum() else " " for ch in text.lower())
    return set(cleaned.split())


def jaccard_oracle(a: set, b: set) -> float:
    union = a | b
    return len(a & b) / len(union) if union else 0.0


# --- matching ---------------------------------------------------------------------


def all_matchings(n_parent: int, n_child: int):
    """Every partial injective matching between two index sets, as tuples of pairs."""
    for k in range(min(n_parent, n_child) + 1):
        for ps in itertools.combinations(range(n_parent), k):
            for cs in itertools.permutations(range(n_child), k):
                yield tuple(zip(ps, cs))


def best_matching_weight(sim, threshold) -> float:
    """Maximum total similarity over matchings that use only pairs at or above threshold."""
    n_p = len(sim)
    n_c = len(sim[0]) if sim else 0
    best = 0.0
    for m in all_matchings(n_p, n_c):
        if all(sim[i][j] >= threshold for i, j in m):
            best = max(best, sum(sim[i][j] for i, j in m))
    return best


# --- retrieval and percentiles --------------------------------------------------


def retrieval_oracle(items, query, k, beta):
    """items: list of (id, tokens, value). Score every item, sort, cut."""
    scored = []
    for iid, toks, value in items:
        sim = jaccard_oracle(set(query), set(toks))
        scored.append((beta * sim + (1 - beta) * (value + 1) / 2, iid))
    scored.sort(key=lambda t: (-t[0], t[1]))
    return [iid for _, iid in scored[:k]]


def percentile_oracle(values, p):
    import numpy as np

    return float(np.percentile(np.asarray(values, dtype=float), p * 100, method="inverted_cdf"))


# --- structural checks ----------------------------------------------------------


def deduction_oracle(errors: int, warnings: int) -> float:
    return min(1.0, max(0.0, 1 - 0.2 * errors - 0.05 * warnings))


def slugify(name: str) -> str:
    return "m-" + "-".join(re.findall(r"[a-z0-9]+", name.lower()))


def close(a, b, tol=1e-9) -> bool:
    return math.isclose(a, b, rel_tol=0, abs_tol=tol)


# --- delta partition --------------------------------------------------------------


def partition_violations(parent, child, delta, threshold=0.6):
    """Empty list iff delta splits both sides exactly and respects the thresholds."""
    problems = []
    matched_p = [p for p, _ in delta.modified] + [p for p, _ in delta.preserved]
    matched_c = [c for _, c in delta.modified] + [c for _, c in delta.preserved]
    if sorted(map(id, list(delta.removed) + matched_p)) != sorted(map(id, parent)):
        problems.append("parent side is not partitioned")
    if sorted(map(id, list(delta.added) + matched_c)) != sorted(map(id, child)):
        problems.append("child side is not partitioned")
    for p, c in delta.preserved:
        if jaccard_oracle(tokens_oracle(p.name + " " + p.description), tokens_oracle(c.name + " " + c.description)) < 0.9:
            problems.append("preserved pair below 0.9")
    for p, c in delta.modified:
        s = jaccard_oracle(tokens_oracle(p.name + " " + p.description), tokens_oracle(c.name + " " + c.description))
        if not threshold <= s < 0.9:
            problems.append("modified pair outside [threshold, 0.9)")
    return problems


def token_orbit_key(sets, perms):
    """Canonical form of a family of bitmask token sets under vocabulary relabeling."""
    best = None
    for perm in perms:
        mapped = tuple(sorted(sum(1 << perm[b] for b in range(6) if m >> b & 1) for m in sets))
        if best is None or mapped < best:
            best = mapped
    return best
