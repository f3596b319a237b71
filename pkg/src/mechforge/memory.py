"""Lineage memory (value-updated experience items) and the global mechanic archive."""
from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Iterable

from .model import MechanicDescriptor, jaccard, mechanic_similarity, tokenize

DUPLICATE_SIMILARITY = 0.9
UNDEREXPLORED_PERCENTILE = 0.25
OVERUSED_PERCENTILE = 0.90
FORBIDDEN = "forbidden"


class RewardOutOfRange(ValueError):
    pass


@dataclass(frozen=True)
class MemoryConfig:
    alpha: float = 0.3
    beta_similarity: float = 0.5
    top_k: int = 5
    write_back_threshold: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if not 0.0 <= self.beta_similarity <= 1.0:
            raise ValueError("beta_similarity must lie in [0, 1]")
        if self.top_k < 1:
            raise ValueError("top_k must be at least 1")


@dataclass(frozen=True)
class MemoryItem:
    id: str
    intent: str
    representation: str
    value: float = 0.0
    visits: int = 0
    tokens: frozenset[str] = field(default=frozenset(), compare=False)

    def __post_init__(self):
        if not -1.0 <= self.value <= 1.0:
            raise ValueError(f"memory value must lie in [-1, 1], got {self.value}")
        object.__setattr__(self, "tokens", tokenize(f"{self.intent} {self.representation}"))

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "intent": self.intent,
            "representation": self.representation,
            "tokens": sorted(self.tokens),
            "value": self.value,
            "visits": self.visits,
        }

    @classmethod
    def from_dict(cls, d: dict) -> MemoryItem:
        return cls(d["id"], d["intent"], d["representation"], float(d["value"]), int(d["visits"]))


def update_value(item: MemoryItem, r: float, alpha: float = 0.3) -> MemoryItem:
    """Exponential averaging of the item's value toward the return ``r``."""
    if not -1.0 <= r <= 1.0:
        raise RewardOutOfRange(f"return must lie in [-1, 1], got {r}")
    q = (1.0 - alpha) * item.value + alpha * r
    return replace(item, value=min(1.0, max(-1.0, q)), visits=item.visits + 1)


def reward_to_return(final_reward: float) -> float:
    return min(1.0, max(-1.0, 2.0 * final_reward - 1.0))


def retrieval_score(item: MemoryItem, query: frozenset[str], beta: float) -> float:
    return beta * jaccard(query, item.tokens) + (1.0 - beta) * (item.value + 1.0) / 2.0


def retrieve(store: Iterable[MemoryItem], query, k: int = 5, beta: float = 0.5) -> list[MemoryItem]:
    if k < 1:
        raise ValueError("k must be at least 1")
    query = frozenset(query)
    ranked = sorted(store, key=lambda it: (-retrieval_score(it, query, beta), it.id))
    return ranked[:k]


@dataclass
class LineageMemory:
    items: list[MemoryItem] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"items": [it.to_dict() for it in self.items]}

    @classmethod
    def from_dict(cls, d: dict) -> LineageMemory:
        return cls([MemoryItem.from_dict(x) for x in d.get("items", [])])

    def next_id(self) -> str:
        return f"mem{len(self.items) + 1:04d}"

    def replace_items(self, updated: Iterable[MemoryItem]):
        by_id = {it.id: it for it in updated}
        self.items = [by_id.pop(it.id, it) for it in self.items] + list(by_id.values())


# --- global mechanic archive ---------------------------------------------


@dataclass(frozen=True)
class MechanicArchiveEntry:
    mechanic: MechanicDescriptor
    usage_count: int = 1
    mean_reward: float = 0.0
    flags: frozenset[str] = frozenset()

    def __post_init__(self):
        if self.usage_count < 1:
            raise ValueError("stored archive entries have usage_count >= 1")
        object.__setattr__(self, "flags", frozenset(self.flags))

    @property
    def forbidden(self) -> bool:
        return FORBIDDEN in self.flags

    def to_dict(self) -> dict:
        return {
            "mechanic": self.mechanic.to_dict(),
            "usage_count": self.usage_count,
            "mean_reward": self.mean_reward,
            "flags": sorted(self.flags),
        }

    @classmethod
    def from_dict(cls, d: dict) -> MechanicArchiveEntry:
        return cls(
            MechanicDescriptor.from_dict(d["mechanic"]),
            int(d.get("usage_count", 1)),
            float(d.get("mean_reward", 0.0)),
            frozenset(d.get("flags", ())),
        )


def atomic_write_json(path, payload) -> None:
    """Write JSON to a sibling temp file, fsync, then rename over ``path``."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", suffix=".json", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, ensure_ascii=False)
            fh.write("\n")
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass(frozen=True)
class MechanicArchive:
    entries: tuple[MechanicArchiveEntry, ...] = ()

    def __len__(self):
        return len(self.entries)

    def max_similarity(self, mechanic: MechanicDescriptor) -> float:
        return max((mechanic_similarity(mechanic, e.mechanic) for e in self.entries), default=0.0)

    def to_dict(self) -> dict:
        return {"entries": [e.to_dict() for e in self.entries]}

    @classmethod
    def from_dict(cls, d: dict) -> MechanicArchive:
        return cls(tuple(MechanicArchiveEntry.from_dict(x) for x in d.get("entries", [])))

    @classmethod
    def load(cls, path) -> MechanicArchive:
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path) -> None:
        atomic_write_json(path, self.to_dict())

    @classmethod
    def seed(cls) -> MechanicArchive:
        text = resources.files("mechforge").joinpath("data/seed_archive.json").read_text(encoding="utf-8")
        return cls.from_dict(json.loads(text))


def nearest_rank(sorted_values: list, p: float):
    """Nearest-rank percentile: the smallest value with at least ``p`` of the data at or below it."""
    n = len(sorted_values)
    return sorted_values[max(0, math.ceil(p * n) - 1)]


@dataclass(frozen=True)
class ArchiveContext:
    relevant: tuple[MechanicArchiveEntry, ...] = ()
    underexplored: tuple[MechanicArchiveEntry, ...] = ()
    overused: tuple[MechanicArchiveEntry, ...] = ()
    forbidden: tuple[MechanicArchiveEntry, ...] = ()

    def to_dict(self) -> dict:
        names = lambda xs: [e.mechanic.name for e in xs]  # noqa: E731
        return {
            "relevant": names(self.relevant),
            "underexplored": names(self.underexplored),
            "overused": names(self.overused),
            "forbidden": names(self.forbidden),
        }

    def render(self) -> str:
        lines = []
        for label, group in (
            ("Relevant", self.relevant),
            ("Underexplored", self.underexplored),
            ("Overused (avoid repeating)", self.overused),
            ("Forbidden", self.forbidden),
        ):
            lines.append(f"{label}:")
            lines.extend(f"- {e.mechanic.name}: {e.mechanic.description}" for e in group)
            if not group:
                lines.append("- (none)")
        return "\n".join(lines)


def archive_query(archive: MechanicArchive, prompt_tokens, cfg: MemoryConfig = MemoryConfig()) -> ArchiveContext:
    entries = archive.entries
    if not entries:
        return ArchiveContext()
    prompt_tokens = frozenset(prompt_tokens)
    scored = [(jaccard(prompt_tokens, e.mechanic.tokens), i, e) for i, e in enumerate(entries)]
    scored = [s for s in scored if s[0] > 0.0 and not s[2].forbidden]
    scored.sort(key=lambda s: (-s[0], s[2].mechanic.id, s[1]))
    relevant = tuple(e for _, _, e in scored[: cfg.top_k])
    counts = sorted(e.usage_count for e in entries)
    low = nearest_rank(counts, UNDEREXPLORED_PERCENTILE)
    high = nearest_rank(counts, OVERUSED_PERCENTILE)
    return ArchiveContext(
        relevant=relevant,
        underexplored=tuple(e for e in relevant if e.usage_count <= low),
        overused=tuple(e for e in entries if e.usage_count >= high),
        forbidden=tuple(e for e in entries if e.forbidden),
    )


def archive_write_back(
    archive: MechanicArchive,
    realized: Iterable[MechanicDescriptor],
    final_reward: float,
    cfg: MemoryConfig = MemoryConfig(),
) -> MechanicArchive:
    if final_reward < cfg.write_back_threshold:
        return archive
    entries = list(archive.entries)
    for mech in realized:
        best, best_i = 0.0, -1
        for i, e in enumerate(entries):
            sim = mechanic_similarity(mech, e.mechanic)
            if sim > best:
                best, best_i = sim, i
        if best_i >= 0 and best >= DUPLICATE_SIMILARITY:
            e = entries[best_i]
            n = e.usage_count + 1
            entries[best_i] = replace(e, usage_count=n, mean_reward=e.mean_reward + (final_reward - e.mean_reward) / n)
        else:
            entries.append(MechanicArchiveEntry(mech, 1, float(final_reward)))
    return MechanicArchive(tuple(entries))
