"""Creative proxy reward: seven weighted signals and two multiplicative gates."""
from __future__ import annotations

from dataclasses import dataclass, fields

from .model import EvaluationReport, MechanicDelta, MechanicPlan
from .validator import CORE_FEATURE_CHECKS, PASS, ValidationReport

SOFT_GATE_THRESHOLD = 0.6
SOFT_GATE_FACTOR = 0.25
HARD_GATE_FACTOR = 0.5
COSMETIC_THRESHOLD = 0.15


def _clamp01(x: float) -> float:
    return min(1.0, max(0.0, float(x)))


@dataclass(frozen=True)
class SignalVector:
    mechanic_realization: float = 0.0
    structural_mechanic_change: float = 0.0
    relative_mechanic_novelty: float = 0.0
    llm_creativity: float = 0.0
    runtime_playability: float = 0.0
    cosmetic_only_penalty: float = 0.0
    regression_penalty: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            v = float(getattr(self, f.name))
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{f.name} must lie in [0, 1], got {v}")
            object.__setattr__(self, f.name, v)

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(getattr(self, f.name) for f in fields(self))

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> SignalVector:
        return cls(**{f.name: d[f.name] for f in fields(cls)})


SIGNAL_NAMES = tuple(f.name for f in fields(SignalVector))


@dataclass(frozen=True)
class RewardWeights:
    mechanic_realization: float = 0.20
    structural_mechanic_change: float = 0.25
    relative_mechanic_novelty: float = 0.20
    llm_creativity: float = 0.15
    runtime_playability: float = 0.10
    cosmetic_only_penalty: float = -0.15
    regression_penalty: float = -0.10

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(getattr(self, f.name) for f in fields(self))


DEFAULT_WEIGHTS = RewardWeights()


@dataclass(frozen=True)
class GateInputs:
    playability_sanity: float
    runtime_test_passed: bool

    def __post_init__(self):
        if not 0.0 <= self.playability_sanity <= 1.0:
            raise ValueError(f"playability_sanity must lie in [0, 1], got {self.playability_sanity}")

    def to_dict(self) -> dict:
        return {"playability_sanity": self.playability_sanity, "runtime_test_passed": self.runtime_test_passed}


@dataclass(frozen=True)
class RewardBreakdown:
    signals: SignalVector
    weighted_terms: tuple[float, ...]
    pre_gate_reward: float
    soft_gate_applied: bool
    hard_gate_applied: bool
    final_reward: float
    gates: GateInputs | None = None

    def to_dict(self) -> dict:
        return {
            "signals": self.signals.to_dict(),
            "weighted_terms": dict(zip(SIGNAL_NAMES, self.weighted_terms)),
            "pre_gate_reward": self.pre_gate_reward,
            "soft_gate_applied": self.soft_gate_applied,
            "hard_gate_applied": self.hard_gate_applied,
            "final_reward": self.final_reward,
            "gates": self.gates.to_dict() if self.gates else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> RewardBreakdown:
        terms = d["weighted_terms"]
        if isinstance(terms, dict):
            terms = [terms[n] for n in SIGNAL_NAMES]
        g = d.get("gates")
        return cls(
            signals=SignalVector.from_dict(d["signals"]),
            weighted_terms=tuple(terms),
            pre_gate_reward=d["pre_gate_reward"],
            soft_gate_applied=d["soft_gate_applied"],
            hard_gate_applied=d["hard_gate_applied"],
            final_reward=d["final_reward"],
            gates=GateInputs(**g) if g else None,
        )


def llm_creativity_signal(score_10: float) -> float:
    """Map a 0-10 creativity score to [0, 1]; 3 and below count as nothing."""
    return _clamp01((score_10 - 3.0) / 7.0)


def _norm(name: str) -> str:
    return " ".join(name.lower().split())


def mechanic_realization(plan: MechanicPlan, evaluation: EvaluationReport) -> float:
    planned = plan.planned_names
    flags = {_norm(k): bool(v) for k, v in evaluation.realization_flags.items()}
    hit = sum(flags.get(_norm(n), False) for n in planned)
    return hit / max(1, len(planned))


def relative_novelty(delta: MechanicDelta, archive) -> float:
    if not delta.added:
        return 0.0
    return sum(1.0 - archive.max_similarity(m) for m in delta.added) / len(delta.added)


def compute_signals(
    plan: MechanicPlan,
    evaluation: EvaluationReport,
    delta: MechanicDelta,
    validation: ValidationReport,
    archive,
) -> SignalVector:
    smc = _clamp01(0.5 * delta.structural_change + 0.5 * evaluation.structural_change_score)
    runtime = validation.runtime
    playability = 1.0 if runtime is not None and not runtime.degraded and runtime.playable else validation.score
    missing = sum(validation.outcome(c).severity != PASS for c in CORE_FEATURE_CHECKS)
    return SignalVector(
        mechanic_realization=mechanic_realization(plan, evaluation),
        structural_mechanic_change=smc,
        relative_mechanic_novelty=_clamp01(relative_novelty(delta, archive)),
        llm_creativity=llm_creativity_signal(evaluation.creativity_10),
        runtime_playability=_clamp01(playability),
        cosmetic_only_penalty=1.0 if smc < COSMETIC_THRESHOLD else 0.0,
        regression_penalty=missing / len(CORE_FEATURE_CHECKS),
    )


def gate_inputs(evaluation: EvaluationReport, validation: ValidationReport) -> GateInputs:
    sanity = _clamp01(0.5 * evaluation.playability_10 / 10.0 + 0.5 * validation.score)
    runtime = validation.runtime
    if runtime is not None and not runtime.degraded:
        passed = runtime.playable
    else:
        passed = validation.error_count == 0
    return GateInputs(sanity, passed)


def compute_reward(
    signals: SignalVector, gates: GateInputs, weights: RewardWeights = DEFAULT_WEIGHTS
) -> RewardBreakdown:
    terms = tuple(w * s for w, s in zip(weights.as_tuple(), signals.as_tuple()))
    pre = sum(terms)
    soft = gates.playability_sanity < SOFT_GATE_THRESHOLD
    hard = not gates.runtime_test_passed
    final = pre
    if soft:
        final *= SOFT_GATE_FACTOR
    if hard:
        final *= HARD_GATE_FACTOR
    return RewardBreakdown(signals, terms, pre, soft, hard, final, gates)
