"""Single command-line entry point.

Subcommands: ``run`` (scenario simulation), ``admit`` (fail-fast admission of
a manifest file), ``modelcheck`` (abstract-state exploration), ``verify-ledger``
(audit chain verification), ``serve`` (live gateway).  Exit codes: 0 success,
1 property or verification failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import audit, guardrails, manifest as manifest_mod, simulator, verifier

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def _emit(data: dict, as_json: bool, human: str) -> None:
    print(json.dumps(data, indent=2, sort_keys=True) if as_json else human)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedguard",
        description="Finite-state safety loop for federated jobs: simulate, admit, model-check, audit, serve.",
    )
    parser.add_argument("--json", action="store_true", help="machine-readable output")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario to termination and write its trace")
    run.add_argument("--scenario", default="none", choices=["A", "B", "C", "none"])
    run.add_argument("--nodes", type=int, default=3)
    run.add_argument("--seed", type=int, default=42)
    run.add_argument("--guardrails", type=Path, default=None, help="guardrails YAML file")
    run.add_argument("--ep", default=None, help="execution provider id (scenario none)")
    run.add_argument("--out", type=Path, default=None, help="trace output path")
    run.add_argument("--ledger", type=Path, default=None, help="audit ledger output path")

    admit = sub.add_parser("admit", help="fail-fast admission check of a manifest file")
    admit.add_argument("manifest", type=Path)
    admit.add_argument("--ep-registry", type=Path, required=True)
    admit.add_argument("--guardrails", type=Path, required=True)

    check = sub.add_parser("modelcheck", help="explore the abstract state space")
    check.add_argument("--nodes", type=int, default=2)
    check.add_argument("--depth", type=int, default=60)
    check.add_argument("--fire-budget", type=int, default=2)
    check.add_argument("--quorum", type=int, default=2)
    check.add_argument("--mutate", default=None, choices=list(verifier.MUTATIONS))
    check.add_argument("--trace", type=Path, default=None, help="replay a trace file instead")

    verify = sub.add_parser("verify-ledger", help="recompute and verify a ledger file")
    verify.add_argument("ledger", type=Path)

    serve = sub.add_parser("serve", help="serve a live session over HTTP/WebSocket")
    serve.add_argument("--port", type=int, default=8000)
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--scenario", default="none", choices=["A", "B", "C", "none"])
    serve.add_argument("--nodes", type=int, default=3)
    serve.add_argument("--seed", type=int, default=42)
    serve.add_argument("--tick-ms", type=int, default=1000)
    serve.add_argument("--operators", type=Path, required=True, help="operator key registry JSON")
    serve.add_argument("--static-dir", type=Path, default=None, help="optional console bundle to serve at /")
    return parser


def _cmd_run(args, as_json: bool) -> int:
    config = simulator.scenario_config(args.scenario, n_nodes=args.nodes, seed=args.seed,
                                       ep_id=args.ep)
    if args.guardrails is not None:
        text = args.guardrails.read_text()
        guardrails.parse_guardrails(text)  # fail fast on bad config
        config = simulator.SimConfig(
            n_nodes=config.n_nodes, seed=config.seed, ep_id=config.ep_id,
            plugin=config.plugin, guardrails_text=text, scenario=config.scenario,
            max_ticks=config.max_ticks, injections=config.injections, quorum=config.quorum,
        )
    session = simulator.Session(config)
    trace = session.run()
    if args.out is not None:
        trace.save(args.out)
    if args.ledger is not None:
        session.ledger.save(args.ledger)
    summary = {
        "verdict": trace.verdict,
        "ticks": len(trace.ticks),
        "final_progress_rank": trace.final_progress_rank,
        "trace_hash": trace.trace_hash,
        "admission": trace.admission,
    }
    _emit(
        summary,
        as_json,
        f"verdict={trace.verdict} ticks={len(trace.ticks)} "
        f"final_rank={trace.final_progress_rank} trace_hash={trace.trace_hash[:16]}...",
    )
    if trace.verdict == "REJECTED":
        if not as_json:
            for reason in trace.admission["reasons"]:
                print(f"  reason: {reason}")
        return EXIT_FAILURE
    return EXIT_OK if trace.verdict in ("FINALIZE", "ABORTED") else EXIT_FAILURE


def _cmd_admit(args, as_json: bool) -> int:
    try:
        manifest = manifest_mod.load_manifest(args.manifest)
        registry = manifest_mod.load_ep_registry(args.ep_registry)
        text = args.guardrails.read_text()
        config = guardrails.parse_guardrails(text)
    except (OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    result = manifest_mod.admission_check(manifest, registry, config, text)
    human_lines = [f"verdict: {result.verdict}"]
    human_lines += [f"  reason: {reason}" for reason in result.reasons]
    _emit(result.to_json_dict(), as_json, "\n".join(human_lines))
    return EXIT_OK if result.admitted else EXIT_FAILURE


def _cmd_modelcheck(args, as_json: bool) -> int:
    if args.trace is not None:
        trace = simulator.Trace.load(args.trace)
        report = verifier.check_trace(trace.to_json_dict())
    else:
        try:
            report = verifier.explore(
                n_nodes=args.nodes,
                depth=args.depth,
                fire_budget=args.fire_budget,
                quorum=args.quorum,
                mutate=args.mutate,
            )
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE
    _emit(report.to_json_dict(), as_json, report.summary())
    return EXIT_OK if report.ok else EXIT_FAILURE


def _cmd_verify_ledger(args, as_json: bool) -> int:
    try:
        data = args.ledger.read_bytes()
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        report = audit.verify_chain(data)
    except audit.LedgerParseError as exc:
        _emit({"ok": False, "error": f"parse error: {exc}"}, as_json, f"parse error: {exc}")
        return EXIT_FAILURE
    detail = "" if report.ok else f" block={report.first_bad_block} detail={report.detail}"
    _emit(
        {"ok": report.ok, "first_bad_block": report.first_bad_block, "detail": report.detail},
        as_json,
        ("ok" if report.ok else "verification failed") + detail,
    )
    return EXIT_OK if report.ok else EXIT_FAILURE


def _cmd_serve(args, as_json: bool) -> int:
    from . import gateway

    try:
        operators = gateway.load_operators(args.operators)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    config = simulator.scenario_config(args.scenario, n_nodes=args.nodes, seed=args.seed)
    gateway.serve(
        config,
        operators,
        host=args.host,
        port=args.port,
        tick_ms=args.tick_ms,
        static_dir=args.static_dir,
    )
    return EXIT_OK


def dispatch(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    handlers = {
        "run": _cmd_run,
        "admit": _cmd_admit,
        "modelcheck": _cmd_modelcheck,
        "verify-ledger": _cmd_verify_ledger,
        "serve": _cmd_serve,
    }
    try:
        return handlers[args.command](args, args.json)
    except simulator.SimConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
