"""Small builders for store and report tests."""
from __future__ import annotations

from mechforge.model import EvaluationReport, GameArtifact, MechanicDescriptor, MechanicPlan, compute_mechanic_delta
from mechforge.reward import GateInputs, SignalVector, compute_reward
from mechforge.store import LineageNode
from mechforge.validator import analyze

GAME = "<html><head><title>Tiny</title></head><body><canvas></canvas><script>let c = document.querySelector('canvas').getContext('2d');</script></body></html>"


def mech(name, layers=("actions",)):
    return MechanicDescriptor("m-" + name.replace(" ", "-"), name, f"{name} mechanic", frozenset(layers))


def make_node(node_id, parent_id=None, prompt="make a game", soft=False, hard=False, added=("dash",), when="2026-01-01T00:00:00+00:00"):
    plan = MechanicPlan(add=tuple(mech(a) for a in added))
    evaluation = EvaluationReport(
        creativity_10=6,
        playability_10=7,
        overall_10=6.5,
        realized_mechanics=tuple(mech(a) for a in added),
        realization_flags={a: True for a in added},
        structural_change_score=0.4,
        meaningful_play_asserted=True,
    )
    delta = compute_mechanic_delta([], [mech(a) for a in added])
    signals = SignalVector(1.0, 0.7, 0.6, 3 / 7, 0.8, 0.0, 1 / 3)
    reward = compute_reward(signals, GateInputs(0.5 if soft else 0.9, not hard))
    return LineageNode(
        node_id=node_id,
        parent_id=parent_id,
        prompt=prompt,
        artifact=GameArtifact(GAME),
        evaluation=evaluation,
        validation=analyze(GAME),
        reward=reward,
        mechanic_plan=plan,
        mechanic_delta=delta,
        created_at=when,
        iterations_used=2,
    )
