"""On-disk lineage trees, node records, traces and shared memory.

Layout under the store root::

    lineages/<lineage_id>/tree.json
    lineages/<lineage_id>/nodes/node_<id>.json
    lineages/<lineage_id>/trace/node_<id>.json
    lineages/<lineage_id>/memory.json
    locks/<lineage_id>.lock
    mechanic_archive.json, creativity_rules.json, game_pool.json

Every file is pretty-printed UTF-8 JSON and is replaced atomically.
"""
from __future__ import annotations

import contextlib
import datetime as _dt
import errno
import hashlib
import json
import os
import secrets
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from filelock import FileLock, Timeout

from .memory import LineageMemory, MechanicArchive, atomic_write_json
from .model import EvaluationReport, GameArtifact, MechanicDelta, MechanicPlan
from .reward import RewardBreakdown
from .validator import ValidationReport

MAX_ITERATIONS = 3


class StoreError(Exception):
    pass


class StoreUnwritable(StoreError):
    pass


class UnknownLineage(StoreError):
    pass


class UnknownNode(StoreError):
    pass


class UnknownParent(StoreError):
    pass


class LockNotHeld(StoreError):
    pass


class LineageBusy(StoreError):
    pass


def utc_now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


@dataclass(frozen=True)
class LineageNode:
    node_id: str
    parent_id: str | None
    prompt: str
    artifact: GameArtifact
    evaluation: EvaluationReport
    validation: ValidationReport
    reward: RewardBreakdown
    mechanic_plan: MechanicPlan
    mechanic_delta: MechanicDelta
    created_at: str
    iterations_used: int

    def __post_init__(self):
        if not 1 <= self.iterations_used <= MAX_ITERATIONS:
            raise ValueError(f"iterations_used must lie in [1, {MAX_ITERATIONS}]")

    def to_dict(self) -> dict:
        return {
            "node_id": self.node_id,
            "parent_id": self.parent_id,
            "prompt": self.prompt,
            "created_at": self.created_at,
            "iterations_used": self.iterations_used,
            "mechanic_plan": self.mechanic_plan.to_dict(),
            "evaluation": self.evaluation.to_dict(),
            "mechanic_delta": self.mechanic_delta.to_dict(),
            "validation": self.validation.to_dict(),
            "reward": self.reward.to_dict(),
            "artifact": self.artifact.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> LineageNode:
        return cls(
            node_id=d["node_id"],
            parent_id=d.get("parent_id"),
            prompt=d["prompt"],
            artifact=GameArtifact.from_dict(d["artifact"]),
            evaluation=EvaluationReport.from_dict(d["evaluation"]),
            validation=ValidationReport.from_dict(d["validation"]),
            reward=RewardBreakdown.from_dict(d["reward"]),
            mechanic_plan=MechanicPlan.from_dict(d["mechanic_plan"]),
            mechanic_delta=MechanicDelta.from_dict(d["mechanic_delta"]),
            created_at=d["created_at"],
            iterations_used=d["iterations_used"],
        )


@dataclass
class LineageTree:
    lineage_id: str
    prompt: str = ""
    root_id: str | None = None
    nodes: dict[str, dict] = field(default_factory=dict)  # id -> {parent_id, child_ids}

    def add(self, node_id: str, parent_id: str | None):
        if node_id in self.nodes:
            raise StoreError(f"node {node_id} already saved")
        if parent_id is None:
            if self.root_id is not None:
                raise UnknownParent(f"lineage {self.lineage_id} already has root {self.root_id}")
            self.root_id = node_id
        elif parent_id not in self.nodes:
            raise UnknownParent(parent_id)
        else:
            self.nodes[parent_id]["child_ids"].append(node_id)
        self.nodes[node_id] = {"parent_id": parent_id, "child_ids": []}

    def depth(self) -> int:
        """Longest root-to-leaf path, counted in nodes."""
        if self.root_id is None:
            return 0
        best, stack = 0, [(self.root_id, 1)]
        while stack:
            nid, d = stack.pop()
            best = max(best, d)
            stack.extend((c, d + 1) for c in self.nodes[nid]["child_ids"])
        return best

    def path_to(self, node_id: str) -> list[str]:
        path = []
        cur = node_id
        while cur is not None:
            path.append(cur)
            cur = self.nodes[cur]["parent_id"]
        return path[::-1]

    def edges(self) -> list[tuple[str, str]]:
        return [(p, c) for p, rec in self.nodes.items() for c in rec["child_ids"]]

    def check(self) -> None:
        """Raise if the tree is not a single-rooted, acyclic, consistent graph."""
        roots = [n for n, r in self.nodes.items() if r["parent_id"] is None]
        if self.nodes and roots != [self.root_id]:
            raise StoreError(f"expected exactly one root, found {roots}")
        for nid, rec in self.nodes.items():
            for c in rec["child_ids"]:
                if self.nodes.get(c, {}).get("parent_id") != nid:
                    raise StoreError(f"edge {nid}->{c} has no matching parent_id")
            p = rec["parent_id"]
            if p is not None and nid not in self.nodes[p]["child_ids"]:
                raise StoreError(f"{nid} names parent {p} without a matching edge")
        seen: set[str] = set()
        if self.root_id is not None:
            stack = [self.root_id]
            while stack:
                n = stack.pop()
                if n in seen:
                    raise StoreError("cycle in lineage tree")
                seen.add(n)
                stack.extend(self.nodes[n]["child_ids"])
        if seen != set(self.nodes):
            raise StoreError("nodes unreachable from root")

    def to_dict(self) -> dict:
        return {"lineage_id": self.lineage_id, "prompt": self.prompt, "root_id": self.root_id, "nodes": self.nodes}

    @classmethod
    def from_dict(cls, d: dict) -> LineageTree:
        return cls(d["lineage_id"], d.get("prompt", ""), d.get("root_id"), d.get("nodes", {}))


@dataclass(frozen=True)
class StoreStats:
    lineage_count: int = 0
    node_count: int = 0
    multi_node_lineages: int = 0
    max_depth: int = 0
    archive_entries: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _read_json(path: Path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


class LineageStore:
    """Filesystem store for lineages.

    With ``seed`` set, lineage and node id suffixes are derived from a hash
    instead of random bytes, which makes whole stores reproducible.
    """

    def __init__(self, root, seed: int | None = None, clock: Callable[[], str] = utc_now, lock_timeout_s: float = 30.0):
        self.root = Path(root)
        self.seed = seed
        self.clock = clock
        self.lock_timeout_s = lock_timeout_s
        self._held: dict[str, int] = {}
        self._held_lock = threading.Lock()

    # paths
    @property
    def lineages_dir(self) -> Path:
        return self.root / "lineages"

    def lineage_dir(self, lineage_id: str) -> Path:
        return self.lineages_dir / lineage_id

    def _lock_path(self, lineage_id: str) -> Path:
        return self.root / "locks" / f"{lineage_id}.lock"

    @property
    def archive_path(self) -> Path:
        return self.root / "mechanic_archive.json"

    def _suffix(self, *parts) -> str:
        if self.seed is None:
            return secrets.token_hex(3)
        h = hashlib.sha256(json.dumps([self.seed, *parts]).encode("utf-8"))
        return h.hexdigest()[:6]

    def _ensure_dir(self, path: Path):
        try:
            path.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise StoreUnwritable(f"{path}: {exc.strerror or exc}") from exc
        if not os.access(path, os.W_OK | os.X_OK):
            raise StoreUnwritable(f"{path}: not writable")

    def _write(self, path: Path, payload):
        try:
            atomic_write_json(path, payload)
        except OSError as exc:
            if exc.errno in (errno.EACCES, errno.EROFS, errno.EPERM, errno.ENOSPC):
                raise StoreUnwritable(f"{path}: {exc.strerror}") from exc
            raise

    # lineages
    def list_lineages(self) -> list[str]:
        if not self.lineages_dir.is_dir():
            return []
        return sorted(p.name for p in self.lineages_dir.iterdir() if (p / "tree.json").is_file())

    def create_lineage(self, prompt: str) -> str:
        self._ensure_dir(self.lineages_dir)
        n = len(self.list_lineages()) + 1
        attempt = 0
        while True:
            lineage_id = f"lin{n:04d}-{self._suffix('lineage', n, prompt, attempt)}"
            d = self.lineage_dir(lineage_id)
            try:
                d.mkdir()
                break
            except FileExistsError:
                attempt += 1
            except OSError as exc:
                raise StoreUnwritable(f"{d}: {exc.strerror}") from exc
        for sub in ("nodes", "trace"):
            self._ensure_dir(d / sub)
        self._write(d / "memory.json", LineageMemory().to_dict())
        self._write(d / "tree.json", LineageTree(lineage_id, prompt).to_dict())
        return lineage_id

    def _require(self, lineage_id: str) -> Path:
        d = self.lineage_dir(lineage_id)
        if not (d / "tree.json").is_file():
            raise UnknownLineage(lineage_id)
        return d

    # locking
    @contextlib.contextmanager
    def lock(self, lineage_id: str, timeout_s: float | None = None):
        """Hold the advisory writer lock of one lineage (re-entrant within a store object)."""
        self._require(lineage_id)
        self._ensure_dir(self._lock_path(lineage_id).parent)
        with self._held_lock:
            nested = self._held.get(lineage_id, 0) > 0
            if nested:
                self._held[lineage_id] += 1
        if nested:
            try:
                yield
            finally:
                with self._held_lock:
                    self._held[lineage_id] -= 1
            return
        fl = FileLock(str(self._lock_path(lineage_id)))
        try:
            fl.acquire(timeout=self.lock_timeout_s if timeout_s is None else timeout_s)
        except Timeout as exc:
            raise LineageBusy(f"lineage {lineage_id} is locked by another writer") from exc
        with self._held_lock:
            self._held[lineage_id] = 1
        try:
            yield
        finally:
            with self._held_lock:
                self._held.pop(lineage_id, None)
            fl.release()

    def holds_lock(self, lineage_id: str) -> bool:
        with self._held_lock:
            return self._held.get(lineage_id, 0) > 0

    def _check_lock(self, lineage_id: str):
        if not self.holds_lock(lineage_id):
            raise LockNotHeld(lineage_id)

    # nodes
    def load_tree(self, lineage_id: str) -> LineageTree:
        return LineageTree.from_dict(_read_json(self._require(lineage_id) / "tree.json"))

    def next_node_id(self, lineage_id: str) -> str:
        tree = self.load_tree(lineage_id)
        k = len(tree.nodes) + 1
        return f"n{k:03d}-{self._suffix('node', lineage_id, k)}"

    def save_node(self, lineage_id: str, parent_id: str | None, node: LineageNode, trace) -> str:
        d = self._require(lineage_id)
        self._check_lock(lineage_id)
        if node.parent_id != parent_id:
            raise StoreError(f"node.parent_id {node.parent_id!r} differs from parent_id {parent_id!r}")
        tree = self.load_tree(lineage_id)
        tree.add(node.node_id, parent_id)
        self._write(d / "nodes" / f"node_{node.node_id}.json", node.to_dict())
        self._write(d / "trace" / f"node_{node.node_id}.json", trace)
        # the tree is written last so a failure above leaves no dangling edge
        self._write(d / "tree.json", tree.to_dict())
        return node.node_id

    def save_partial_trace(self, lineage_id: str, label: str, trace) -> Path:
        path = self._require(lineage_id) / "trace" / f"partial_{label}.json"
        self._write(path, trace)
        return path

    def load_node(self, lineage_id: str, node_id: str) -> LineageNode:
        path = self._require(lineage_id) / "nodes" / f"node_{node_id}.json"
        if not path.is_file():
            raise UnknownNode(f"{lineage_id}/{node_id}")
        return LineageNode.from_dict(_read_json(path))

    def load_node_dict(self, lineage_id: str, node_id: str) -> dict:
        path = self._require(lineage_id) / "nodes" / f"node_{node_id}.json"
        if not path.is_file():
            raise UnknownNode(f"{lineage_id}/{node_id}")
        return _read_json(path)

    def load_trace(self, lineage_id: str, node_id: str):
        path = self._require(lineage_id) / "trace" / f"node_{node_id}.json"
        if not path.is_file():
            raise UnknownNode(f"{lineage_id}/{node_id}")
        return _read_json(path)

    # memory
    def load_memory(self, lineage_id: str) -> LineageMemory:
        return LineageMemory.from_dict(_read_json(self._require(lineage_id) / "memory.json"))

    def save_memory(self, lineage_id: str, memory: LineageMemory):
        d = self._require(lineage_id)
        self._check_lock(lineage_id)
        self._write(d / "memory.json", memory.to_dict())

    # global layers
    def load_archive(self) -> MechanicArchive:
        """The global archive, or the shipped seed archive when none is stored yet."""
        if self.archive_path.is_file():
            return MechanicArchive.load(self.archive_path)
        return MechanicArchive.seed()

    def save_archive(self, archive: MechanicArchive):
        self._ensure_dir(self.root)
        self._write(self.archive_path, archive.to_dict())

    def _load_list(self, name: str, key: str) -> list:
        path = self.root / name
        return list(_read_json(path).get(key, [])) if path.is_file() else []

    def load_creativity_rules(self) -> list[str]:
        return self._load_list("creativity_rules.json", "rules")

    def save_creativity_rules(self, rules: list[str]):
        self._ensure_dir(self.root)
        self._write(self.root / "creativity_rules.json", {"rules": list(rules)})

    def load_game_pool(self) -> list[str]:
        return self._load_list("game_pool.json", "games")

    def save_game_pool(self, games: list[str]):
        self._ensure_dir(self.root)
        self._write(self.root / "game_pool.json", {"games": list(games)})

    def stats(self) -> StoreStats:
        """Counts from tree files and the archive file only; node bodies are never read.

        Lineages without a saved node are not counted.
        """
        lineages = nodes = multi = depth = 0
        for lid in self.list_lineages():
            tree = LineageTree.from_dict(_read_json(self.lineage_dir(lid) / "tree.json"))
            if tree.root_id is None:
                continue  # created but never completed a generation
            lineages += 1
            nodes += len(tree.nodes)
            multi += len(tree.nodes) > 1
            depth = max(depth, tree.depth())
        archive = 0
        if self.archive_path.is_file():
            archive = len(_read_json(self.archive_path).get("entries", []))
        return StoreStats(lineages, nodes, multi, depth, archive)
