"""Command line entry point.

Exit codes: 0 on success, 1 on domain errors (including a validated game
with errors), 2 on usage or configuration errors.
"""
from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

from . import browser
from .gateway import Gateway, HttpProvider, RetryPolicy, ScriptedProvider
from .memory import MemoryConfig, archive_query, nearest_rank
from .model import GameArtifact, tokenize
from .pipeline import GenerationRequest, Pipeline, PipelineConfig, PipelineFailed
from .report import EmptyLineage, render_report
from .reward import SIGNAL_NAMES
from .store import LineageStore, StoreError
from .validator import analyze

log = logging.getLogger("mechforge")

DEFAULTS: dict = {
    "store_root": "mechforge-store",
    "seed": None,
    "provider": {
        "kind": "mock",
        "script": None,  # None selects the bundled demo script
        "url": "http://127.0.0.1:8000/v1/chat/completions",
        "model": "default",
        "fallback_url": None,
        "fallback_model": None,
        "api_key_env": "MECHFORGE_API_KEY",
        "timeout_s": 120.0,
    },
    "retry": {"max_retries": 3, "backoff_base_ms": 500},
    "browser": {"enabled": False, "endpoint": "http://127.0.0.1:4444", "timeout_ms": 10000},
    "pipeline": {"max_iterations": 3, "stop_reward": 0.75, "retrieval_k": 5, "prompt_dir": None, "role_overrides": {}},
    "memory": {"alpha": 0.3, "beta_similarity": 0.5, "write_back_threshold": 0.5},
}

# environment variable -> dotted config key
ENV_KEYS = {
    "MECHFORGE_STORE": "store_root",
    "MECHFORGE_SEED": "seed",
    "MECHFORGE_PROVIDER": "provider.kind",
    "MECHFORGE_MOCK_SCRIPT": "provider.script",
    "MECHFORGE_PROVIDER_URL": "provider.url",
    "MECHFORGE_MODEL": "provider.model",
    "MECHFORGE_FALLBACK_URL": "provider.fallback_url",
    "MECHFORGE_MAX_RETRIES": "retry.max_retries",
    "MECHFORGE_BROWSER": "browser.enabled",
    "MECHFORGE_BROWSER_ENDPOINT": "browser.endpoint",
}


class ConfigError(Exception):
    pass


def _merge(base: dict, update: dict, path: str = "") -> None:
    for key, value in update.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key: {where}")
        if isinstance(base[key], dict) and key != "role_overrides":
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where} must be an object")
            _merge(base[key], value, where + ".")
        else:
            base[key] = value


def _set(cfg: dict, dotted: str, value) -> None:
    *parents, leaf = dotted.split(".")
    node = cfg
    for p in parents:
        node = node[p]
    default = node[leaf]
    if isinstance(default, bool):
        value = str(value).strip().lower() in ("1", "true", "yes", "on")
    elif isinstance(default, int) or dotted == "seed":
        try:
            value = int(value)
        except ValueError as exc:
            raise ConfigError(f"{dotted} expects an integer, got {value!r}") from exc
    node[leaf] = value


def load_config(path: str | None, env: dict | None = None, flags: dict | None = None) -> dict:
    """Defaults, then the JSON file, then environment, then command-line flags."""
    env = os.environ if env is None else env
    cfg = copy.deepcopy(DEFAULTS)
    path = path or env.get("MECHFORGE_CONFIG")
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config root must be an object")
        _merge(cfg, data)
    for var, key in ENV_KEYS.items():
        if var in env:
            _set(cfg, key, env[var])
    for key, value in (flags or {}).items():
        if value is not None:
            _set(cfg, key, value)
    if cfg["provider"]["kind"] not in ("mock", "http"):
        raise ConfigError(f"provider.kind must be 'mock' or 'http', not {cfg['provider']['kind']!r}")
    return cfg


def build_store(cfg: dict) -> LineageStore:
    return LineageStore(cfg["store_root"], seed=cfg["seed"])


def build_gateway(cfg: dict, env=None) -> Gateway:
    env = os.environ if env is None else env
    p = cfg["provider"]
    policy = RetryPolicy(max_retries=int(cfg["retry"]["max_retries"]), backoff_base_ms=int(cfg["retry"]["backoff_base_ms"]))
    overrides = cfg["pipeline"]["role_overrides"]
    if p["kind"] == "mock":
        script = p["script"] or resources.files("mechforge").joinpath("data/demo_script.json")
        try:
            primary = ScriptedProvider.from_file(script)
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot load mock script {script}: {exc}") from exc
        return Gateway(primary, policy=policy, role_overrides=overrides, sleep=lambda _s: None, seed=cfg["seed"])
    key = env.get(p["api_key_env"])
    primary = HttpProvider(p["url"], p["model"], key, float(p["timeout_s"]))
    fallback = None
    if p["fallback_url"]:
        fallback = HttpProvider(p["fallback_url"], p["fallback_model"] or p["model"], key, float(p["timeout_s"]))
    return Gateway(primary, fallback, policy, overrides, seed=cfg["seed"])


def pipeline_config(cfg: dict) -> PipelineConfig:
    pc, b, m = cfg["pipeline"], cfg["browser"], cfg["memory"]
    try:
        return PipelineConfig(
            max_iterations=int(pc["max_iterations"]),
            stop_reward=float(pc["stop_reward"]),
            retrieval_k=int(pc["retrieval_k"]),
            browser_enabled=bool(b["enabled"]),
            browser_endpoint=b["endpoint"],
            browser_timeout_ms=int(b["timeout_ms"]),
            role_overrides=dict(pc["role_overrides"]),
            memory=MemoryConfig(
                alpha=float(m["alpha"]),
                beta_similarity=float(m["beta_similarity"]),
                top_k=int(pc["retrieval_k"]),
                write_back_threshold=float(m["write_back_threshold"]),
            ),
            prompt_dir=pc["prompt_dir"],
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, indent=2, ensure_ascii=False)
    sys.stdout.write("\n")


# --- commands ----------------------------------------------------------------


def cmd_generate(args, cfg) -> int:
    store = build_store(cfg)
    pipeline = Pipeline(build_gateway(cfg), store)
    lineage = getattr(args, "lineage", None)
    request = GenerationRequest(args.prompt, lineage, getattr(args, "node", None), pipeline_config(cfg))
    result = pipeline.generate(request)
    _emit(result.to_dict())
    return 0


def cmd_show(args, cfg) -> int:
    store = build_store(cfg)
    if args.what == "tree":
        _emit(store.load_tree(args.lineage).to_dict())
        return 0
    if not args.node:
        raise UsageError(f"show {args.what} needs --node")
    if args.what == "node":
        _emit(store.load_node_dict(args.lineage, args.node))
    elif args.what == "trace":
        _emit(store.load_trace(args.lineage, args.node))
    else:
        reward = store.load_node(args.lineage, args.node).reward
        if args.json:
            _emit(reward.to_dict())
        else:
            print(format_reward_table(reward))
    return 0


def format_reward_table(reward) -> str:
    lines = [f"{'signal':<28}{'value':>8}{'weighted':>10}"]
    for name, term in zip(SIGNAL_NAMES, reward.weighted_terms):
        lines.append(f"{name:<28}{getattr(reward.signals, name):>8.3f}{term:>+10.4f}")
    lines.append(f"{'pre-gate reward':<36}{reward.pre_gate_reward:>+10.4f}")
    lines.append(f"{'soft gate (x0.25)':<36}{'applied' if reward.soft_gate_applied else 'no':>10}")
    lines.append(f"{'hard gate (x0.5)':<36}{'applied' if reward.hard_gate_applied else 'no':>10}")
    lines.append(f"{'final reward':<36}{reward.final_reward:>+10.4f}")
    return "\n".join(lines)


def cmd_validate(args, cfg) -> int:
    try:
        html = Path(args.file).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read {args.file}: {exc.strerror}") from exc
    if not html.strip():
        raise UsageError(f"{args.file} is empty")
    report = analyze(html)
    if args.browser or cfg["browser"]["enabled"]:
        endpoint = args.endpoint or cfg["browser"]["endpoint"]
        try:
            runtime = browser.run_browser_check(GameArtifact(html), endpoint, int(cfg["browser"]["timeout_ms"]))
        except browser.DriverUnavailable as exc:
            log.warning("browser check unavailable (%s); static analysis only", exc)
            runtime = browser.RuntimeResult.degraded_result()
        report = report.with_runtime(runtime)
    _emit(report.to_dict())
    failed = report.error_count > 0
    if report.runtime is not None and not report.runtime.degraded and not report.runtime.playable:
        failed = True
    return 1 if failed else 0


def cmd_archive(args, cfg) -> int:
    store = build_store(cfg)
    archive = store.load_archive()
    if args.what == "query":
        if not args.prompt:
            raise UsageError("archive query needs --prompt")
        mc = pipeline_config(cfg).memory
        if args.k:
            mc = MemoryConfig(mc.alpha, mc.beta_similarity, args.k, mc.write_back_threshold)
        _emit(archive_query(archive, tokenize(args.prompt), mc).to_dict())
        return 0
    counts = sorted(e.usage_count for e in archive.entries)
    _emit(
        {
            "entries": len(archive),
            "forbidden": sum(e.forbidden for e in archive.entries),
            "usage_p25": nearest_rank(counts, 0.25) if counts else None,
            "usage_p90": nearest_rank(counts, 0.90) if counts else None,
            "total_usage": sum(counts),
            "stored": store.archive_path.is_file(),
        }
    )
    return 0


def cmd_report(args, cfg) -> int:
    store = build_store(cfg)
    tree = store.load_tree(args.lineage)
    nodes = {nid: store.load_node(args.lineage, nid) for nid in tree.nodes}
    html = render_report(tree, nodes)
    Path(args.output).write_text(html, encoding="utf-8")
    _emit({"lineage_id": args.lineage, "output": str(args.output), "nodes": len(nodes)})
    return 0


def cmd_stats(args, cfg) -> int:
    _emit(build_store(cfg).stats().to_dict())
    return 0


class UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (or MECHFORGE_CONFIG)")
    common.add_argument("--store", help="store root directory")
    common.add_argument("--mock", metavar="SCRIPT", help="use the scripted mock provider with this script")
    common.add_argument("--seed", type=int, help="seed for deterministic ids")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")

    parser = argparse.ArgumentParser(prog="mechforge", description="Mechanic-aware canvas game generation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("new", parents=[common], help="create a lineage and generate its first version")
    p.add_argument("--prompt", required=True)
    p.add_argument("--max-iterations", type=int, choices=(1, 2, 3))
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evolve", parents=[common], help="generate a child of an existing node")
    p.add_argument("--lineage", required=True)
    p.add_argument("--node", required=True, help="parent node id")
    p.add_argument("--prompt", required=True)
    p.add_argument("--max-iterations", type=int, choices=(1, 2, 3))
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("show", parents=[common], help="print a tree, node, reward or trace")
    p.add_argument("what", choices=("tree", "node", "reward", "trace"))
    p.add_argument("--lineage", required=True)
    p.add_argument("--node")
    p.add_argument("--json", action="store_true", help="reward as JSON instead of a table")
    p.set_defaults(func=cmd_show)

    p = sub.add_parser("validate", parents=[common], help="statically check a game file")
    p.add_argument("file")
    p.add_argument("--browser", action="store_true", help="also run the browser check")
    p.add_argument("--endpoint", help="browser driver endpoint")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("archive", parents=[common], help="query the mechanic archive")
    p.add_argument("what", choices=("query", "stats"))
    p.add_argument("--prompt")
    p.add_argument("-k", type=int)
    p.set_defaults(func=cmd_archive)

    p = sub.add_parser("report", parents=[common], help="write a static HTML lineage report")
    p.add_argument("--lineage", required=True)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("stats", parents=[common], help="store-wide counts")
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    flags = {"store_root": args.store, "seed": args.seed}
    if args.mock:
        flags["provider.kind"] = "mock"
        flags["provider.script"] = args.mock
    if getattr(args, "max_iterations", None):
        flags["pipeline.max_iterations"] = args.max_iterations
    try:
        cfg = load_config(args.config, flags=flags)
        return args.func(args, cfg)
    except (ConfigError, UsageError) as exc:
        print(f"mechforge {args.command}: {exc}", file=sys.stderr)
        print(sub.choices[args.command].format_usage(), file=sys.stderr, end="")
        return 2
    except (StoreError, PipelineFailed, EmptyLineage, ValueError) as exc:
        print(f"mechforge {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
