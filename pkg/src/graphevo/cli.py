"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 engine error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import ConfigError, EngineError
from .runner import BackendConfig, RunConfig, load_state, run_optimization

EXIT_OK, EXIT_CONFIG, EXIT_ENGINE = 0, 2, 3


def default_config() -> dict:
    cfg = RunConfig(backend=BackendConfig(script_path="script.json"))
    return cfg.to_dict()


def cmd_init(args) -> int:
    path = Path(args.output)
    if path.exists() and not args.force:
        print(f"{path} exists; pass --force to overwrite", file=sys.stderr)
        return EXIT_CONFIG
    path.write_text(json.dumps(default_config(), indent=2, sort_keys=True) + "\n")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = RunConfig.load(args.config)
    if args.iterations is not None:
        if args.iterations < 0:
            raise ConfigError("--iterations must be >= 0")
        cfg.iterations = args.iterations
    if args.seed is not None:
        cfg.seed = args.seed
    graph, metrics = run_optimization(cfg)
    print(json.dumps({"nodes": len(graph.nodes), "edges": len(graph.edges), **metrics.to_dict()}, sort_keys=True))
    return EXIT_OK


def summarize(graph) -> str:
    lines = [f"iteration {graph.iteration}: {len(graph.nodes)} nodes, {len(graph.edges)} edges"]
    for node_id in sorted(graph.nodes):
        n = graph.nodes[node_id]
        prompt = n.system_prompt.replace("\n", " ")
        prompt = prompt if len(prompt) <= 60 else prompt[:57] + "..."
        tool = f" tool={n.tool_ref}" if n.tool_ref else ""
        lines.append(f"  {node_id:<12} alpha={n.alpha:.4f} beta={n.beta:.4f}{tool}  {prompt}")
    for key in sorted(graph.edges):
        e = graph.edges[key]
        rate = "n/a" if e.success_rate is None else f"{e.success_rate:.2f}"
        lines.append(f"  {key[0]} -> {key[1]}  synergy={e.synergy:.4f} usage={e.usage} success={rate}")
    return "\n".join(lines)


def cmd_inspect(args) -> int:
    print(summarize(load_state(args.state)))
    return EXIT_OK


def cmd_export_trace(args) -> int:
    run = Path(args.run)
    traces_dir = run / "traces"
    if not traces_dir.is_dir():
        raise ConfigError(f"{run} has no traces directory")
    traces = [json.loads(p.read_text()) for p in sorted(traces_dir.glob("*.json"))]
    text = json.dumps({"traces": traces}, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="graphevo", description="Evolve a multi-agent workflow graph.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("init", help="write a default config")
    s.add_argument("--output", default="config.json")
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=cmd_init)

    s = sub.add_parser("run", help="run the optimization loop")
    s.add_argument("--config", required=True)
    s.add_argument("--iterations", type=int)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("inspect", help="summarize a saved graph")
    s.add_argument("--state", required=True)
    s.set_defaults(func=cmd_inspect)

    s = sub.add_parser("export-trace", help="bundle a run's traces into one JSON document")
    s.add_argument("--run", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_export_trace)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EngineError as exc:
        print(f"engine error: {exc}", file=sys.stderr)
        return EXIT_ENGINE
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
