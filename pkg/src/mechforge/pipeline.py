"""One generation call: plan, generate, validate and repair, evaluate, reward, reflect, format, persist."""
from __future__ import annotations

import hashlib
import json
import logging
import re
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable

from . import browser
from .gateway import CompletionRequest, Gateway, ProviderExhausted
from .memory import (
    LineageMemory,
    MemoryConfig,
    MemoryItem,
    archive_query,
    archive_write_back,
    retrieve,
    reward_to_return,
    update_value,
)
from .model import (
    MECHANIC_LAYERS,
    EvaluationReport,
    GameArtifact,
    MechanicDescriptor,
    MechanicPlan,
    Role,
    compute_mechanic_delta,
    tokenize,
)
from .reward import compute_reward, compute_signals, gate_inputs
from .store import LineageNode, LineageStore, UnknownParent
from .validator import ValidationReport, analyze

log = logging.getLogger(__name__)

CONTINUE = "continue"
STOP = "stop"


class PipelineFailed(Exception):
    pass


class MissingMechanicSet(ValueError):
    pass


class EvaluationUnparseable(ValueError):
    pass


class FormatFailed(ValueError):
    pass


# --- parsing ---------------------------------------------------------------

_FENCE_RE = re.compile(r"```([^\n`]*)\n(.*?)(?:```|\Z)", re.DOTALL)
_SECTION_RE = re.compile(r"^\s*(PRESERVE|ADD|REMOVE|RECOMBINE)\s*:(.*)$", re.IGNORECASE)
_EMPTY_ENTRY = {"", "-", "none", "n/a", "(none)"}


def slug(name: str) -> str:
    return "m-" + ("-".join(re.findall(r"[^\W_]+", name.lower())) or "unnamed")


def _entries(text: str) -> list[str]:
    return [e.strip() for e in text.split(";") if e.strip().lower() not in _EMPTY_ENTRY]


def _find_set_block(text: str) -> str:
    for m in _FENCE_RE.finditer(text):
        info, body = m.group(1).strip(), m.group(2)
        if info.upper() == "CURRENT_MECHANIC_SET":
            return body
        first, _, rest = body.partition("\n")
        if first.strip().upper() == "CURRENT_MECHANIC_SET":
            return rest
    raise MissingMechanicSet("no fenced CURRENT_MECHANIC_SET block")


def parse_mechanic_plan(planner_text: str, warnings: list | None = None) -> MechanicPlan:
    """Parse the planner's fenced ``CURRENT_MECHANIC_SET`` block."""
    warn = warnings.append if warnings is not None else (lambda _msg: None)
    body = _find_set_block(planner_text)
    sections: dict[str, list[str]] = {"PRESERVE": [], "ADD": [], "REMOVE": [], "RECOMBINE": []}
    current = None
    for line in body.splitlines():
        m = _SECTION_RE.match(line)
        if m:
            current = m.group(1).upper()
            sections[current].extend(_entries(m.group(2)))
        elif current and line.strip():
            sections[current].extend(_entries(line))

    seen: set[str] = set()

    def fresh(name: str) -> bool:
        key = name.lower()
        if key in seen:
            return False
        seen.add(key)
        return True

    preserve = [n for n in sections["PRESERVE"] if fresh(n)]
    add = []
    for entry in sections["ADD"]:
        parts = [p.strip() for p in entry.split("|")]
        name = parts[0]
        desc = parts[1] if len(parts) > 1 else ""
        layers = {x.strip().lower() for x in parts[2].split(",")} if len(parts) > 2 else set()
        layers &= {x.value for x in MECHANIC_LAYERS}
        if not layers:
            warn(f"ADD entry {name!r} names no mechanic layer; skipped")
            continue
        if fresh(name):
            add.append(MechanicDescriptor(slug(name), name, desc, frozenset(layers)))
    kept = {n.lower() for n in preserve}
    remove = []
    for n in sections["REMOVE"]:
        if n.lower() in kept:
            warn(f"{n!r} both preserved and removed; kept as preserved")
        elif n.lower() not in {r.lower() for r in remove}:
            remove.append(n)
    recombine = []
    for entry in sections["RECOMBINE"]:
        head, _, desc = entry.partition("|")
        names = [x.strip() for x in re.split(r"\s*\+\s*", head) if x.strip()]
        if len(names) != 2:
            warn(f"RECOMBINE entry {entry!r} needs exactly two names; skipped")
            continue
        recombine.append((names[0], names[1], desc.strip()))
    return MechanicPlan(tuple(preserve), tuple(add), tuple(remove), tuple(recombine))


def render_contract(plan: MechanicPlan) -> str:
    """Serialize a plan as the fenced contract block prepended to generation prompts."""
    add = "; ".join(f"{m.name} | {m.description} | {','.join(sorted(x.value for x in m.delta_layers))}" for m in plan.add)
    rec = "; ".join(f"{a} + {b} | {d}" for a, b, d in plan.recombine)
    return (
        "```CURRENT_MECHANIC_SET\n"
        f"PRESERVE: {'; '.join(plan.preserve)}\n"
        f"ADD: {add}\n"
        f"REMOVE: {'; '.join(plan.remove)}\n"
        f"RECOMBINE: {rec}\n"
        "```"
    )


_EVAL_KEYS = ("creativity", "playability", "overall", "realized_mechanics", "structural_change")


def _json_objects(text: str):
    dec = json.JSONDecoder()
    i = text.find("{")
    while i >= 0:
        try:
            obj, end = dec.raw_decode(text, i)
        except ValueError:
            i = text.find("{", i + 1)
            continue
        if isinstance(obj, dict):
            yield obj
        i = text.find("{", end)


def _score(d: dict, key: str, hi: float, warn) -> float:
    try:
        v = float(d[key])
    except (TypeError, ValueError) as exc:
        raise EvaluationUnparseable(f"{key} is not a number") from exc
    if not 0.0 <= v <= hi:
        warn(f"{key} {v} outside [0, {hi}]; clamped")
    return min(hi, max(0.0, v))


def parse_evaluation(evaluator_text: str, warnings: list | None = None) -> EvaluationReport:
    """Read the first JSON object carrying all evaluation keys."""
    warn = warnings.append if warnings is not None else (lambda _msg: None)
    for obj in _json_objects(evaluator_text):
        if all(k in obj for k in _EVAL_KEYS):
            break
    else:
        raise EvaluationUnparseable("no JSON object with evaluation keys")
    mechanics = []
    flags = {}
    for raw in obj.get("realized_mechanics") or []:
        if not isinstance(raw, dict) or not raw.get("name"):
            warn(f"malformed realized mechanic {raw!r}; skipped")
            continue
        name = str(raw["name"])
        layers = {str(x).lower() for x in raw.get("delta_layers", [])} & {x.value for x in MECHANIC_LAYERS}
        try:
            mechanics.append(
                MechanicDescriptor(
                    id=str(raw.get("id") or slug(name)),
                    name=name,
                    description=str(raw.get("description", "")),
                    delta_layers=frozenset(layers),
                    **{k: min(1.0, max(0.0, float(raw[k]))) for k in ("existence", "importance", "showcase") if k in raw},
                )
            )
        except (ValueError, TypeError) as exc:
            warn(f"realized mechanic {name!r} rejected: {exc}")
            continue
        if "realized" in raw:
            flags[name] = bool(raw["realized"])
    for k, v in (obj.get("realization") or obj.get("realization_flags") or {}).items():
        flags[str(k)] = bool(v)

    def opt_bool(*keys):
        for k in keys:
            if isinstance(obj.get(k), bool):
                return obj[k]
        return None

    return EvaluationReport(
        creativity_10=_score(obj, "creativity", 10.0, warn),
        playability_10=_score(obj, "playability", 10.0, warn),
        overall_10=_score(obj, "overall", 10.0, warn),
        realized_mechanics=tuple(mechanics),
        realization_flags=flags,
        structural_change_score=_score(obj, "structural_change", 1.0, warn),
        meaningful_play_asserted=opt_bool("meaningful_play", "meaningful_play_asserted"),
        learnability_asserted=opt_bool("learnability", "learnability_asserted"),
        novelty_grounding_notes=str(obj.get("novelty_notes", obj.get("novelty_grounding_notes", ""))),
    )


_DOCTYPE_RE = re.compile(r"<!doctype\s+html", re.IGNORECASE)
_HTML_OPEN_RE = re.compile(r"<html\b", re.IGNORECASE)
_HTML_CLOSE_RE = re.compile(r"</html\s*>", re.IGNORECASE)


def _is_document(text: str) -> bool:
    return bool((_DOCTYPE_RE.search(text) or _HTML_OPEN_RE.search(text)) and _HTML_CLOSE_RE.search(text))


def find_html(text: str) -> str | None:
    """A full document from a fenced block, else the bare document span, else None."""
    for m in _FENCE_RE.finditer(text):
        body = m.group(2).strip()
        if _is_document(body):
            return body
    start = _DOCTYPE_RE.search(text) or _HTML_OPEN_RE.search(text)
    if start:
        ends = list(_HTML_CLOSE_RE.finditer(text, start.start()))
        if ends:
            return text[start.start():ends[-1].end()]
    return None


def extract_final_html(formatter_text: str, last_good: GameArtifact | None, warnings: list | None = None) -> GameArtifact:
    html = find_html(formatter_text or "")
    if html:
        return GameArtifact(html)
    if last_good is None:
        raise FormatFailed("formatter output holds no document and no earlier artifact exists")
    if warnings is not None:
        warnings.append("formatter output holds no document; kept the last validated artifact")
    return last_good


@dataclass(frozen=True)
class PipelineConfig:
    max_iterations: int = 3
    stop_reward: float = 0.75
    retrieval_k: int = 5
    browser_enabled: bool = False
    browser_endpoint: str = "http://127.0.0.1:4444"
    browser_timeout_ms: int = browser.DEFAULT_TIMEOUT_MS
    role_overrides: dict = field(default_factory=dict)
    memory: MemoryConfig = field(default_factory=MemoryConfig)
    prompt_dir: str | None = None

    def __post_init__(self):
        if not 1 <= self.max_iterations <= 3:
            raise ValueError("max_iterations must lie in [1, 3]")
        if self.retrieval_k < 1:
            raise ValueError("retrieval_k must be at least 1")


def loop_decision(iteration: int, reward: float, verdict: str, config: PipelineConfig) -> str:
    if iteration >= config.max_iterations or verdict == STOP or reward >= config.stop_reward:
        return STOP
    return CONTINUE


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    lineage_id: str | None = None
    parent_node_id: str | None = None
    config: PipelineConfig = field(default_factory=PipelineConfig)

    def __post_init__(self):
        if self.parent_node_id is not None and self.lineage_id is None:
            raise ValueError("parent_node_id requires lineage_id")


@dataclass(frozen=True)
class GenerationResult:
    lineage_id: str
    node_id: str
    reward: object  # RewardBreakdown
    iterations_used: int

    def to_dict(self) -> dict:
        return {
            "lineage_id": self.lineage_id,
            "node_id": self.node_id,
            "iterations_used": self.iterations_used,
            "final_reward": self.reward.final_reward,
        }


# --- prompts ---------------------------------------------------------------

_PLACEHOLDER_RE = re.compile(r"\{([A-Z_]+)\}")


class PromptSet:
    """Role templates: system text, a ``---`` line, then user text."""

    def __init__(self, directory: str | Path | None = None):
        self.directory = Path(directory) if directory else None
        self._cache: dict[Role, tuple[str, str]] = {}

    def _read(self, role: Role) -> str:
        name = f"{role.value}.txt"
        if self.directory and (self.directory / name).is_file():
            return (self.directory / name).read_text(encoding="utf-8")
        return resources.files("mechforge").joinpath("prompts", name).read_text(encoding="utf-8")

    def template(self, role: Role) -> tuple[str, str]:
        if role not in self._cache:
            system, sep, user = self._read(role).partition("\n---\n")
            self._cache[role] = (system.strip(), user.strip()) if sep else ("", system.strip())
        return self._cache[role]

    def render(self, role: Role, values: dict[str, str]) -> tuple[str, str]:
        # one pass, so substituted text is never rescanned for placeholders
        sub = lambda m: values.get(m.group(1), m.group(0))  # noqa: E731
        system, user = self.template(role)
        return _PLACEHOLDER_RE.sub(sub, system), _PLACEHOLDER_RE.sub(sub, user)


def _digest(*parts: str) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(p.encode("utf-8"))
        h.update(b"\0")
    return h.hexdigest()[:16]


# --- orchestration ---------------------------------------------------------

CONTRACT_ROLES = (Role.SKELETON, Role.FEATURE, Role.VISUAL, Role.REFINEMENT)


@dataclass
class _Iteration:
    index: int
    artifact: GameArtifact
    validation: ValidationReport
    evaluation: EvaluationReport
    delta: object
    reward: object
    verdict: str
    notes: str = ""
    memory_payload: dict | None = None


class Pipeline:
    def __init__(
        self,
        gateway: Gateway,
        store: LineageStore,
        prompts: PromptSet | None = None,
        timer: Callable[[], float] = time.perf_counter,
        browser_check: Callable = browser.run_browser_check,
    ):
        self.gateway = gateway
        self.store = store
        self.prompts = prompts or PromptSet()
        self.timer = timer
        self.browser_check = browser_check

    def generate(self, request: GenerationRequest) -> GenerationResult:
        store = self.store
        cfg = request.config
        if cfg.prompt_dir and self.prompts.directory is None:
            self.prompts = PromptSet(cfg.prompt_dir)
        lineage_id = request.lineage_id or store.create_lineage(request.prompt)
        with store.lock(lineage_id):
            run = _Run(self, request, lineage_id)
            try:
                return run.execute()
            except PipelineFailed:
                store.save_partial_trace(lineage_id, run.trace_label(), run.trace_payload(failed=True))
                raise


class _Run:
    def __init__(self, pipeline: Pipeline, request: GenerationRequest, lineage_id: str):
        self.p = pipeline
        self.request = request
        self.cfg = request.config
        self.lineage_id = lineage_id
        self.records: list[dict] = []
        self.warnings: list[str] = []
        self.node_id = pipeline.store.next_node_id(lineage_id)

    # trace helpers
    def trace_label(self) -> str:
        return self.node_id

    def trace_payload(self, failed: bool = False) -> dict:
        return {
            "lineage_id": self.lineage_id,
            "node_id": self.node_id,
            "prompt": self.request.prompt,
            "failed": failed,
            "stages": self.records,
            "warnings": self.warnings,
        }

    def _record(self, stage: str, role: Role | None, iteration: int, req=None, res=None, started=None, **outcome):
        rec = {
            "stage": stage,
            "role": role.value if role else None,
            "iteration": iteration,
            "request_digest": _digest(req.system_text, req.user_text) if req else None,
            "response_digest": _digest(res.text) if res else None,
            "attempts": res.attempts if res else outcome.pop("attempts", 0),
            "used_fallback": res.used_fallback if res else False,
            "duration_ms": round((self.p.timer() - started) * 1000.0, 3) if started is not None else 0.0,
            "outcome": outcome,
        }
        self.records.append(rec)
        return rec

    def call(self, stage: str, role: Role, values: dict, iteration: int, prefix: str = ""):
        """One gateway call; returns the text or None when the provider is exhausted."""
        system, user = self.p.prompts.render(role, values)
        if prefix:
            user = f"{prefix}\n\n{user}"
        gw = self.p.gateway
        req = CompletionRequest.for_role(role, system, user, {**gw.role_overrides, **self.cfg.role_overrides})
        started = self.p.timer()
        try:
            res = gw.complete(req)
        except ProviderExhausted as exc:
            self._record(stage, role, iteration, req, None, started, status="exhausted", attempts=exc.attempts,
                         error=exc.last_error)
            self.warnings.append(f"{stage}: provider exhausted; stage fallback used")
            return None, None
        rec = self._record(stage, role, iteration, req, res, started, status="ok")
        return res.text, rec

    # stages
    def plan(self, ctx: dict) -> MechanicPlan:
        for attempt in range(2):
            text, rec = self.call("plan", Role.PLANNING, ctx, 0)
            if text is None:
                break
            w: list[str] = []
            try:
                plan = parse_mechanic_plan(text, w)
            except MissingMechanicSet as exc:
                rec["outcome"].update(status="unparsed", error=str(exc))
                continue
            rec["outcome"]["plan"] = plan.to_dict()
            if w:
                rec["outcome"]["warnings"] = w
                self.warnings.extend(w)
            return plan
        self.warnings.append("planner gave no mechanic set; continuing with an empty plan")
        return MechanicPlan()

    def generate_stage(self, stage: str, role: Role, values: dict, iteration: int, prefix: str,
                       previous: GameArtifact | None) -> GameArtifact | None:
        text, rec = self.call(stage, role, values, iteration, prefix)
        html = find_html(text) if text is not None else None
        if html:
            rec["outcome"]["bytes"] = len(html.encode("utf-8"))
            return GameArtifact(html)
        if rec is not None:
            rec["outcome"].update(status="no-document")
            self.warnings.append(f"{stage}: output held no HTML document; stage fallback used")
        if previous is not None:
            self.records[-1]["outcome"]["degraded"] = True
        return previous

    def validate(self, artifact: GameArtifact, iteration: int, values: dict) -> tuple[GameArtifact, ValidationReport]:
        started = self.p.timer()
        report = analyze(artifact.html)
        self._record("validate", None, iteration, started=started, errors=report.error_count,
                     warnings=report.warning_count, score=report.score)
        if report.error_count:
            errs = "\n".join(
                f"- {o.check_id}: {o.message}" + (f" (line {o.location[0]})" if o.location else "")
                for o in report.failed()
            )
            fixed = self.generate_stage("repair", Role.REPAIR, {**values, "ERRORS": errs, "CURRENT_CODE": artifact.html},
                                        iteration, "", None)
            if fixed is not None:
                started = self.p.timer()
                again = analyze(fixed.html)
                self._record("revalidate", None, iteration, started=started, errors=again.error_count,
                             warnings=again.warning_count, score=again.score)
                if again.score >= report.score:
                    artifact, report = fixed, again
        if self.cfg.browser_enabled:
            started = self.p.timer()
            try:
                runtime = self.p.browser_check(artifact, self.cfg.browser_endpoint, self.cfg.browser_timeout_ms)
            except browser.DriverUnavailable as exc:
                runtime = browser.RuntimeResult.degraded_result()
                self.warnings.append(f"browser check unavailable ({exc}); Tier-1 only")
            self._record("browser", None, iteration, started=started, **runtime.to_dict())
            report = report.with_runtime(runtime)
        return artifact, report

    def evaluate(self, values: dict, iteration: int) -> EvaluationReport:
        for attempt in range(2):
            text, rec = self.call("evaluate", Role.EVALUATION, values, iteration)
            if text is None:
                break
            w: list[str] = []
            try:
                ev = parse_evaluation(text, w)
            except EvaluationUnparseable as exc:
                rec["outcome"].update(status="unparsed", error=str(exc))
                continue
            if w:
                rec["outcome"]["warnings"] = w
                self.warnings.extend(w)
            rec["outcome"]["creativity_10"] = ev.creativity_10
            return ev
        self.warnings.append("evaluation unusable; conservative defaults substituted")
        return EvaluationReport()

    def reflect(self, values: dict, iteration: int) -> tuple[str, str, dict | None]:
        text, rec = self.call("reflect", Role.REFLECTION, values, iteration)
        if text is None:
            return CONTINUE, "", None
        for obj in _json_objects(text):
            verdict = str(obj.get("verdict", "")).strip().lower()
            if verdict in (CONTINUE, STOP):
                mem = obj.get("memory") if isinstance(obj.get("memory"), dict) else None
                rec["outcome"]["verdict"] = verdict
                return verdict, str(obj.get("notes", "")), mem
        m = re.search(r"\b(continue|stop)\b", text, re.IGNORECASE)
        verdict = m.group(1).lower() if m else CONTINUE
        rec["outcome"].update(verdict=verdict, status="loose-parse")
        return verdict, "", None

    # main flow
    def execute(self) -> GenerationResult:
        store = self.p.store
        req = self.request
        cfg = self.cfg
        tree = store.load_tree(self.lineage_id)
        if req.parent_node_id is None and tree.root_id is not None:
            raise UnknownParent(f"lineage {self.lineage_id} already has a root; name a parent node")
        if req.parent_node_id is not None and req.parent_node_id not in tree.nodes:
            raise UnknownParent(req.parent_node_id)
        parent = store.load_node(self.lineage_id, req.parent_node_id) if req.parent_node_id else None
        parent_code = parent.artifact.html if parent else ""
        parent_mechanics = parent.evaluation.realized_mechanics if parent else ()

        prompt_tokens = tokenize(req.prompt)
        memory = store.load_memory(self.lineage_id)
        retrieved = retrieve(memory.items, prompt_tokens, cfg.retrieval_k, cfg.memory.beta_similarity)
        archive = store.load_archive()
        arch_ctx = archive_query(archive, prompt_tokens, cfg.memory)
        rules = store.load_creativity_rules()
        pool = store.load_game_pool()
        mem_text = "\n".join(f"- ({it.value:+.2f}) {it.intent}: {it.representation}" for it in retrieved) or "- (none)"
        if rules:
            mem_text += "\nGeneral rules:\n" + "\n".join(f"- {r}" for r in rules)
        arch_text = arch_ctx.render()
        if pool:
            arch_text += "\nReference games:\n" + "\n".join(f"- {g}" for g in pool)
        self._record("context", None, 0, retrieved=[it.id for it in retrieved], archive=arch_ctx.to_dict())

        values = {
            "PROMPT": req.prompt,
            "PARENT_CODE": parent_code,
            "MEMORY_CONTEXT": mem_text,
            "ARCHIVE_CONTEXT": arch_text,
            "ERRORS": "",
            "CURRENT_CODE": "",
            "FEEDBACK": "",
        }
        plan = self.plan(values)
        contract = render_contract(plan)
        values["MECHANIC_CONTRACT"] = contract

        fallback_art = parent.artifact if parent else None
        iterations: list[_Iteration] = []
        for i in range(1, cfg.max_iterations + 1):
            if i == 1:
                art = self.generate_stage("skeleton", Role.SKELETON, values, i, contract, fallback_art)
                for stage, role in (("feature", Role.FEATURE), ("visual", Role.VISUAL)):
                    cur = {**values, "CURRENT_CODE": art.html if art else parent_code}
                    art = self.generate_stage(stage, role, cur, i, contract, art)
            else:
                prev = iterations[-1]
                cur = {**values, "CURRENT_CODE": prev.artifact.html, "FEEDBACK": self._feedback(prev)}
                art = self.generate_stage("refine", Role.REFINEMENT, cur, i, contract, prev.artifact)
            if art is None:
                raise PipelineFailed("no stage produced a game document and no earlier artifact exists")

            art, report = self.validate(art, i, values)
            errs = "\n".join(f"- [{o.severity}] {o.check_id}: {o.message}" for o in report.failed()) or "- none"
            ev = self.evaluate({**values, "CURRENT_CODE": art.html, "ERRORS": errs}, i)
            delta = compute_mechanic_delta(parent_mechanics, ev.realized_mechanics)
            signals = compute_signals(plan, ev, delta, report, archive)
            reward = compute_reward(signals, gate_inputs(ev, report))
            self._record("reward", None, i, final_reward=reward.final_reward, pre_gate=reward.pre_gate_reward,
                         soft_gate=reward.soft_gate_applied, hard_gate=reward.hard_gate_applied)
            it = _Iteration(i, art, report, ev, delta, reward, CONTINUE)
            verdict, notes, payload = self.reflect({**values, "FEEDBACK": self._feedback(it)}, i)
            it.verdict, it.notes, it.memory_payload = verdict, notes, payload
            iterations.append(it)
            decision = loop_decision(i, reward.final_reward, verdict, cfg)
            self._record("decide", None, i, decision=decision)
            if decision == STOP:
                break

        last = iterations[-1]
        final_art, final_report = self.format(last, values)
        node = LineageNode(
            node_id=self.node_id,
            parent_id=req.parent_node_id,
            prompt=req.prompt,
            artifact=final_art,
            evaluation=last.evaluation,
            validation=final_report,
            reward=last.reward,
            mechanic_plan=plan,
            mechanic_delta=last.delta,
            created_at=store.clock(),
            iterations_used=last.index,
        )
        self._update_memory(memory, retrieved, last)
        store.save_node(self.lineage_id, req.parent_node_id, node, self.trace_payload())
        store.save_memory(self.lineage_id, memory)
        updated = archive_write_back(archive, last.evaluation.realized_mechanics, last.reward.final_reward, cfg.memory)
        if updated is not archive or not store.archive_path.is_file():
            store.save_archive(updated)
        return GenerationResult(self.lineage_id, self.node_id, last.reward, last.index)

    def _feedback(self, it: _Iteration) -> str:
        r = it.reward
        lines = [
            f"creativity {it.evaluation.creativity_10:g}/10, playability {it.evaluation.playability_10:g}/10",
            f"reward {r.final_reward:.3f} (soft gate {'on' if r.soft_gate_applied else 'off'},"
            f" hard gate {'on' if r.hard_gate_applied else 'off'})",
            "unrealized: " + (", ".join(k for k, v in sorted(it.evaluation.realization_flags.items()) if not v) or "none"),
            "static issues: " + (", ".join(o.check_id for o in it.validation.failed()) or "none"),
        ]
        if it.notes:
            lines.append(f"reviewer notes: {it.notes}")
        return "\n".join(lines)

    def format(self, last: _Iteration, values: dict) -> tuple[GameArtifact, ValidationReport]:
        text, rec = self.call("format", Role.FORMATTING, {**values, "CURRENT_CODE": last.artifact.html}, last.index)
        w: list[str] = []
        art = extract_final_html(text or "", last.artifact, w)
        if w:
            self.warnings.extend(w)
        if art.html == last.artifact.html:
            return last.artifact, last.validation
        report = analyze(art.html)
        if report.error_count > last.validation.error_count:
            self.warnings.append("formatted output added static errors; kept the last iteration's artifact")
            return last.artifact, last.validation
        return art, report.with_runtime(last.validation.runtime)

    def _update_memory(self, memory: LineageMemory, retrieved: list[MemoryItem], last: _Iteration):
        r = reward_to_return(last.reward.final_reward)
        alpha = self.cfg.memory.alpha
        memory.replace_items(update_value(it, r, alpha) for it in retrieved)
        payload = last.memory_payload
        if payload and (payload.get("intent") or payload.get("representation")):
            item = MemoryItem(memory.next_id(), str(payload.get("intent", "")), str(payload.get("representation", "")))
            memory.items.append(update_value(item, r, alpha))
