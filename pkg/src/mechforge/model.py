"""Game-structure vocabulary, mechanics, deltas, plans and evaluation reports."""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Iterable


class StructureLayer(str, Enum):
    PLAYERS = "players"
    STATE = "state"
    ACTIONS = "actions"
    TRANSITION = "transition"
    OBSERVATION = "observation"
    FEEDBACK = "feedback"
    RESOURCES = "resources"
    OUTCOMES = "outcomes"
    PREFERENCES = "preferences"
    CHALLENGE = "challenge"
    CONTENT = "content"
    REPRESENTATION = "representation"
    META = "meta"


LAYERS: tuple[StructureLayer, ...] = tuple(StructureLayer)
CORE_LAYERS = frozenset(LAYERS[:10])
SUPPORT_LAYERS = frozenset(LAYERS[10:])
# Layers a mechanic may change: actions, transition, observation, feedback,
# resources and outcomes.
MECHANIC_LAYERS = frozenset(
    {
        StructureLayer.ACTIONS,
        StructureLayer.TRANSITION,
        StructureLayer.OBSERVATION,
        StructureLayer.FEEDBACK,
        StructureLayer.RESOURCES,
        StructureLayer.OUTCOMES,
    }
)

STRUCTURAL = "structural"
COSMETIC = "cosmetic"


def classify_change(delta_layers: Iterable[StructureLayer | str]) -> str:
    """Return ``"structural"`` if any core layer changed, else ``"cosmetic"``."""
    layers = {StructureLayer(x) for x in delta_layers}
    return STRUCTURAL if layers & CORE_LAYERS else COSMETIC


_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> frozenset[str]:
    """Lowercase word tokens; punctuation acts as a separator."""
    return frozenset(_TOKEN_RE.findall(text.lower()))


def jaccard(a: frozenset[str] | set[str], b: frozenset[str] | set[str]) -> float:
    if not a and not b:
        return 0.0
    return len(a & b) / len(a | b)


def _unit(name: str, value: float) -> float:
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value}")
    return value


@dataclass(frozen=True)
class MechanicDescriptor:
    id: str
    name: str
    description: str
    delta_layers: frozenset[StructureLayer]
    existence: float = 1.0
    importance: float = 0.5
    showcase: float = 0.5

    def __post_init__(self):
        layers = frozenset(StructureLayer(x) for x in self.delta_layers)
        if not layers:
            raise ValueError(f"mechanic {self.name!r} changes no layer")
        if not layers <= MECHANIC_LAYERS:
            bad = sorted(x.value for x in layers - MECHANIC_LAYERS)
            raise ValueError(f"mechanic {self.name!r} uses non-mechanic layers {bad}")
        object.__setattr__(self, "delta_layers", layers)
        for name in ("existence", "importance", "showcase"):
            object.__setattr__(self, name, _unit(name, getattr(self, name)))

    @cached_property
    def tokens(self) -> frozenset[str]:
        return tokenize(f"{self.name} {self.description}")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "description": self.description,
            "delta_layers": sorted(x.value for x in self.delta_layers),
            "existence": self.existence,
            "importance": self.importance,
            "showcase": self.showcase,
        }

    @classmethod
    def from_dict(cls, d: dict) -> MechanicDescriptor:
        return cls(
            id=d["id"],
            name=d["name"],
            description=d.get("description", ""),
            delta_layers=frozenset(d["delta_layers"]),
            existence=d.get("existence", 1.0),
            importance=d.get("importance", 0.5),
            showcase=d.get("showcase", 0.5),
        )


def mechanic_similarity(a: MechanicDescriptor, b: MechanicDescriptor) -> float:
    """Token-set Jaccard overlap of name plus description."""
    return jaccard(a.tokens, b.tokens)


MATCH_THRESHOLD = 0.6
PRESERVE_THRESHOLD = 0.9


@dataclass(frozen=True)
class MechanicDelta:
    added: tuple[MechanicDescriptor, ...] = ()
    removed: tuple[MechanicDescriptor, ...] = ()
    modified: tuple[tuple[MechanicDescriptor, MechanicDescriptor], ...] = ()
    preserved: tuple[tuple[MechanicDescriptor, MechanicDescriptor], ...] = ()
    structural_change: float = 0.0

    def to_dict(self) -> dict:
        return {
            "added": [m.to_dict() for m in self.added],
            "removed": [m.to_dict() for m in self.removed],
            "modified": [[p.to_dict(), c.to_dict()] for p, c in self.modified],
            "preserved": [[p.to_dict(), c.to_dict()] for p, c in self.preserved],
            "structural_change": self.structural_change,
        }

    @classmethod
    def from_dict(cls, d: dict) -> MechanicDelta:
        m = MechanicDescriptor.from_dict
        return cls(
            added=tuple(m(x) for x in d.get("added", [])),
            removed=tuple(m(x) for x in d.get("removed", [])),
            modified=tuple((m(p), m(c)) for p, c in d.get("modified", [])),
            preserved=tuple((m(p), m(c)) for p, c in d.get("preserved", [])),
            structural_change=float(d.get("structural_change", 0.0)),
        )


def compute_mechanic_delta(
    parent: Iterable[MechanicDescriptor],
    child: Iterable[MechanicDescriptor],
    match_threshold: float = MATCH_THRESHOLD,
) -> MechanicDelta:
    """Greedy max-similarity matching of parent mechanics to child mechanics.

    Pairs at or above ``match_threshold`` are taken in descending similarity
    order (ties by input order). Matches at 0.9 or more count as preserved,
    the rest as modified. Unmatched parents are removed, unmatched children
    added.
    """
    if not 0.0 < match_threshold <= 1.0:
        raise ValueError("match_threshold must lie in (0, 1]")
    parent = list(parent)
    child = list(child)
    candidates = []
    for i, p in enumerate(parent):
        for j, c in enumerate(child):
            sim = mechanic_similarity(p, c)
            if sim >= match_threshold:
                candidates.append((-sim, i, j))
    candidates.sort()
    used_p: set[int] = set()
    used_c: set[int] = set()
    modified, preserved = [], []
    for neg_sim, i, j in candidates:
        if i in used_p or j in used_c:
            continue
        used_p.add(i)
        used_c.add(j)
        pair = (parent[i], child[j])
        (preserved if -neg_sim >= PRESERVE_THRESHOLD else modified).append(pair)
    added = tuple(c for j, c in enumerate(child) if j not in used_c)
    removed = tuple(p for i, p in enumerate(parent) if i not in used_p)
    score = (len(added) + len(removed) + 0.5 * len(modified)) / max(1, len(parent) + len(added))
    return MechanicDelta(
        added=added,
        removed=removed,
        modified=tuple(modified),
        preserved=tuple(preserved),
        structural_change=min(1.0, max(0.0, score)),
    )


@dataclass(frozen=True)
class MechanicPlan:
    preserve: tuple[str, ...] = ()
    add: tuple[MechanicDescriptor, ...] = ()
    remove: tuple[str, ...] = ()
    recombine: tuple[tuple[str, str, str], ...] = ()

    def __post_init__(self):
        clash = {x.lower() for x in self.preserve} & {x.lower() for x in self.remove}
        if clash:
            raise ValueError(f"mechanics both preserved and removed: {sorted(clash)}")

    @property
    def planned_names(self) -> list[str]:
        """Names of mechanics the game is expected to realize."""
        return list(self.preserve) + [m.name for m in self.add]

    def is_empty(self) -> bool:
        return not (self.preserve or self.add or self.remove or self.recombine)

    def to_dict(self) -> dict:
        return {
            "preserve": list(self.preserve),
            "add": [m.to_dict() for m in self.add],
            "remove": list(self.remove),
            "recombine": [list(r) for r in self.recombine],
        }

    @classmethod
    def from_dict(cls, d: dict) -> MechanicPlan:
        return cls(
            preserve=tuple(d.get("preserve", [])),
            add=tuple(MechanicDescriptor.from_dict(x) for x in d.get("add", [])),
            remove=tuple(d.get("remove", [])),
            recombine=tuple(tuple(r) for r in d.get("recombine", [])),
        )


_TITLE_RE = re.compile(r"<title[^>]*>(.*?)</title\s*>", re.IGNORECASE | re.DOTALL)


@dataclass(frozen=True)
class GameArtifact:
    html: str
    title: str = ""
    byte_length: int = field(default=0)

    def __post_init__(self):
        if not self.html:
            raise ValueError("artifact html is empty")
        if not self.title:
            m = _TITLE_RE.search(self.html)
            object.__setattr__(self, "title", " ".join(m.group(1).split()) if m else "")
        object.__setattr__(self, "byte_length", len(self.html.encode("utf-8")))

    def to_dict(self) -> dict:
        return {"html": self.html, "title": self.title, "byte_length": self.byte_length}

    @classmethod
    def from_dict(cls, d: dict) -> GameArtifact:
        return cls(html=d["html"], title=d.get("title", ""))


def _clamp(x: float, lo: float, hi: float) -> float:
    return min(hi, max(lo, float(x)))


@dataclass(frozen=True)
class EvaluationReport:
    creativity_10: float = 0.0
    playability_10: float = 0.0
    overall_10: float = 0.0
    realized_mechanics: tuple[MechanicDescriptor, ...] = ()
    realization_flags: dict[str, bool] = field(default_factory=dict)
    structural_change_score: float = 0.0
    meaningful_play_asserted: bool | None = None
    learnability_asserted: bool | None = None
    novelty_grounding_notes: str = ""

    def __post_init__(self):
        for name in ("creativity_10", "playability_10", "overall_10"):
            object.__setattr__(self, name, _clamp(getattr(self, name), 0.0, 10.0))
        object.__setattr__(
            self, "structural_change_score", _clamp(self.structural_change_score, 0.0, 1.0)
        )
        object.__setattr__(self, "realized_mechanics", tuple(self.realized_mechanics))

    def to_dict(self) -> dict:
        return {
            "creativity_10": self.creativity_10,
            "playability_10": self.playability_10,
            "overall_10": self.overall_10,
            "realized_mechanics": [m.to_dict() for m in self.realized_mechanics],
            "realization_flags": dict(sorted(self.realization_flags.items())),
            "structural_change_score": self.structural_change_score,
            "meaningful_play_asserted": self.meaningful_play_asserted,
            "learnability_asserted": self.learnability_asserted,
            "novelty_grounding_notes": self.novelty_grounding_notes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> EvaluationReport:
        return cls(
            creativity_10=d.get("creativity_10", 0.0),
            playability_10=d.get("playability_10", 0.0),
            overall_10=d.get("overall_10", 0.0),
            realized_mechanics=tuple(
                MechanicDescriptor.from_dict(x) for x in d.get("realized_mechanics", [])
            ),
            realization_flags=dict(d.get("realization_flags", {})),
            structural_change_score=d.get("structural_change_score", 0.0),
            meaningful_play_asserted=d.get("meaningful_play_asserted"),
            learnability_asserted=d.get("learnability_asserted"),
            novelty_grounding_notes=d.get("novelty_grounding_notes", ""),
        )


class Role(str, Enum):
    PLANNING = "planning"
    SKELETON = "skeleton"
    FEATURE = "feature"
    VISUAL = "visual"
    REFINEMENT = "refinement"
    REPAIR = "repair"
    EVALUATION = "evaluation"
    REFLECTION = "reflection"
    FORMATTING = "formatting"


@dataclass(frozen=True)
class RoleProfile:
    role: Role
    temperature: float
    token_budget: int

    def to_dict(self) -> dict:
        return {"role": self.role.value, "temperature": self.temperature, "token_budget": self.token_budget}


DEFAULT_ROLE_PROFILES: dict[Role, RoleProfile] = {
    p.role: p
    for p in (
        RoleProfile(Role.PLANNING, 0.7, 12000),
        RoleProfile(Role.SKELETON, 0.7, 4096),
        RoleProfile(Role.FEATURE, 0.8, 16000),
        RoleProfile(Role.VISUAL, 0.8, 20000),
        RoleProfile(Role.REFINEMENT, 0.7, 24000),
        RoleProfile(Role.REPAIR, 0.3, 20000),
        RoleProfile(Role.EVALUATION, 0.2, 4000),
        RoleProfile(Role.REFLECTION, 0.3, 3000),
        RoleProfile(Role.FORMATTING, 0.2, 5000),
    )
}
