"""Static, self-contained HTML view of one lineage."""
from __future__ import annotations

from html import escape

from .reward import SIGNAL_NAMES
from .store import LineageNode, LineageTree


class EmptyLineage(ValueError):
    pass


_CSS = """
body{font:14px/1.4 system-ui,sans-serif;margin:24px;color:#222;background:#fafafa}
h1{font-size:20px}h2{font-size:16px;margin:0 0 6px}
.node{background:#fff;border:1px solid #ddd;border-radius:6px;padding:12px;margin:12px 0}
.gate{display:inline-block;padding:1px 6px;border-radius:4px;background:#c0392b;color:#fff;font-size:12px;margin-left:6px}
.bar{fill:#2e86c1}.neg{fill:#c0392b}
table{border-collapse:collapse}td{padding:2px 8px;vertical-align:top}
.muted{color:#777}
"""

_COL_W, _ROW_H, _R = 150, 60, 18


def _layout(tree: LineageTree) -> dict[str, tuple[int, int]]:
    """Depth on x, leaf order on y; parents sit at the mean of their children."""
    pos: dict[str, tuple[int, int]] = {}
    next_row = [0]

    def place(nid: str, depth: int) -> float:
        kids = tree.nodes[nid]["child_ids"]
        if not kids:
            row = next_row[0]
            next_row[0] += 1
        else:
            rows = [place(c, depth + 1) for c in kids]
            row = sum(rows) / len(rows)
        pos[nid] = (depth, row)
        return row

    place(tree.root_id, 0)
    return {n: (40 + d * _COL_W, int(30 + r * _ROW_H)) for n, (d, r) in pos.items()}


def _graph(tree: LineageTree, nodes: dict[str, LineageNode], order: list[str]) -> str:
    pos = _layout(tree)
    w = max(x for x, _ in pos.values()) + 110
    h = max(y for _, y in pos.values()) + 50
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" role="img">']
    for p, c in tree.edges():
        (x1, y1), (x2, y2) = pos[p], pos[c]
        parts.append(f'<line x1="{x1}" y1="{y1}" x2="{x2}" y2="{y2}" stroke="#888" stroke-width="2"/>')
    for nid in order:
        x, y = pos[nid]
        node = nodes[nid]
        gated = node.reward.soft_gate_applied or node.reward.hard_gate_applied
        fill = "#f5b7b1" if gated else "#aed6f1"
        label = f"v{order.index(nid) + 1}"
        parts.append(
            f'<g><title>{escape(nid)}</title><circle cx="{x}" cy="{y}" r="{_R}" fill="{fill}" stroke="#333"/>'
            f'<text x="{x}" y="{y + 4}" text-anchor="middle" font-size="12">{label}</text>'
            f'<text x="{x}" y="{y + _R + 14}" text-anchor="middle" font-size="11">{node.reward.final_reward:.3f}</text></g>'
        )
    parts.append("</svg>")
    return "".join(parts)


def _bars(node: LineageNode) -> str:
    r = node.reward
    scale = 300  # px per unit of weighted reward
    rows = []
    for i, (name, term) in enumerate(zip(SIGNAL_NAMES, r.weighted_terms)):
        width = abs(term) * scale
        cls = "neg" if term < 0 else "bar"
        rows.append(
            f'<text x="0" y="{i * 18 + 13}" font-size="12">{name}</text>'
            f'<rect class="{cls}" x="210" y="{i * 18 + 3}" width="{width:.1f}" height="12"/>'
            f'<text x="{215 + width:.1f}" y="{i * 18 + 13}" font-size="11">{term:+.3f}</text>'
        )
    height = len(SIGNAL_NAMES) * 18 + 4
    return f'<svg xmlns="http://www.w3.org/2000/svg" width="600" height="{height}">{"".join(rows)}</svg>'


def _names(items) -> str:
    return ", ".join(escape(m.name) for m in items) or '<span class="muted">none</span>'


def _pairs(pairs) -> str:
    return ", ".join(f"{escape(p.name)} &rarr; {escape(c.name)}" for p, c in pairs) or '<span class="muted">none</span>'


def _node_section(node: LineageNode, label: str) -> str:
    r = node.reward
    gates = ""
    if r.soft_gate_applied:
        gates += '<span class="gate" data-gate="soft">soft gate &times;0.25</span>'
    if r.hard_gate_applied:
        gates += '<span class="gate" data-gate="hard">hard gate &times;0.5</span>'
    d = node.mechanic_delta
    edge = f"from {escape(node.parent_id)}" if node.parent_id else "root"
    return (
        f'<div class="node" id="{escape(node.node_id)}">'
        f"<h2>{label} &middot; {escape(node.node_id)}{gates}</h2>"
        f'<div class="muted">{edge} &middot; {escape(node.artifact.title or "untitled")} &middot; '
        f"{node.iterations_used} iteration(s) &middot; static score {node.validation.score:.2f}</div>"
        f"<p>{escape(node.prompt)}</p>"
        f"<p>pre-gate {r.pre_gate_reward:.4f} &rarr; final <b>{r.final_reward:.4f}</b></p>"
        f"{_bars(node)}"
        "<table>"
        f"<tr><td>added</td><td>{_names(d.added)}</td></tr>"
        f"<tr><td>removed</td><td>{_names(d.removed)}</td></tr>"
        f"<tr><td>modified</td><td>{_pairs(d.modified)}</td></tr>"
        f"<tr><td>preserved</td><td>{_pairs(d.preserved)}</td></tr>"
        f"<tr><td>structural change</td><td>{d.structural_change:.3f}</td></tr>"
        "</table></div>"
    )


def render_report(tree: LineageTree, nodes: dict[str, LineageNode]) -> str:
    if tree.root_id is None or not tree.nodes:
        raise EmptyLineage(tree.lineage_id)
    # breadth-first order gives the v1, v2, ... labels
    order, queue = [], [tree.root_id]
    while queue:
        nid = queue.pop(0)
        order.append(nid)
        queue.extend(tree.nodes[nid]["child_ids"])
    sections = "".join(_node_section(nodes[n], f"v{i + 1}") for i, n in enumerate(order))
    return (
        "<!DOCTYPE html><html><head><meta charset=\"utf-8\">"
        f"<title>Lineage {escape(tree.lineage_id)}</title><style>{_CSS}</style></head><body>"
        f"<h1>Lineage {escape(tree.lineage_id)}</h1><p>{escape(tree.prompt)}</p>"
        f"{_graph(tree, nodes, order)}{sections}</body></html>\n"
    )
