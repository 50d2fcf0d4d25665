"""Command-line entry point.

Exit codes: 0 success or golden match, 1 golden divergence, 2 invalid input.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional

from .bench import ExactJudge, RemoteJudge, score_benchmark
from .errors import JudgeContractError, OmnitaskError, StartupError, ValidationError
from .harness import compare_golden, metrics_for
from .repl import USAGE, Repl, dump_lines
from .scenario import Scenario, bundled_scenarios, load_bundled

EXIT_OK, EXIT_DIVERGED, EXIT_INVALID = 0, 1, 2


def _load(ref: str) -> Scenario:
    path = Path(ref)
    if path.exists():
        return Scenario.load(path)
    if ref in bundled_scenarios() or ref + ".json" in bundled_scenarios():
        return load_bundled(ref)
    raise ValidationError(f"no scenario file or bundled scenario named {ref!r}")


def _emit_dumps(rt, kinds, out) -> None:
    for what in kinds or ():
        for line in dump_lines(rt, what):
            out.write(line + "\n")


def cmd_run(args, out) -> int:
    sc = _load(args.scenario)
    rt = sc.build_runtime(args.seed)
    rt.run(sc.horizon, sc.doc.get("stop_at_quiescence", False))
    trace = rt.halt()
    if args.trace:
        trace.write(args.trace)
    report = metrics_for(rt, trace)
    code = EXIT_OK
    if args.golden:
        if not sc.golden:
            raise ValidationError(f"scenario {sc.name!r} has no golden milestones")
        verdict = compare_golden(trace, sc.golden)
        report.golden, report.golden_matched = verdict.report(), verdict.matched
        code = EXIT_OK if verdict.matched else EXIT_DIVERGED
    _emit_dumps(rt, args.dump, out)
    out.write(json.dumps(report.to_doc(), sort_keys=True) + "\n")
    return code


def cmd_repl(args, out) -> int:
    sc = _load(args.scenario)
    rt = sc.build_runtime(args.seed)
    repl = Repl(rt, out)
    if args.script:
        with open(args.script, encoding="utf-8") as fh:
            repl.run(fh)
    else:
        out.write(f"{sc.name}: t={rt.clock}\n{USAGE}\n")
        repl.run(iter(sys.stdin.readline, ""), prompt="> " if sys.stdin.isatty() else "")
    trace = rt.halt()
    if args.trace:
        trace.write(args.trace)
    if args.record:
        Path(args.record).write_text("".join(line + "\n" for line in repl.transcript), encoding="utf-8")
    return EXIT_OK


def cmd_score(args, out) -> int:
    preds = json.loads(Path(args.pred).read_text(encoding="utf-8"))
    gold = json.loads(Path(args.gold).read_text(encoding="utf-8"))
    if args.judge == "remote":
        if not args.judge_url:
            raise ValidationError("--judge remote needs --judge-url")
        judge = RemoteJudge(args.judge_url)
    else:
        judge = ExactJudge()
    res = score_benchmark(preds, gold, judge)
    out.write(json.dumps(res.to_doc(), sort_keys=True) + "\n")
    out.write(res.table_row() + "\n")
    return EXIT_OK


def cmd_list(args, out) -> int:
    for name in bundled_scenarios():
        out.write(name[:-5] + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="omnitask", description="Household agent runtime and simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario to its horizon")
    r.add_argument("scenario", help="scenario file or bundled scenario name")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--trace", help="write the JSONL trace here")
    r.add_argument("--golden", action="store_true", help="compare against the scenario's milestones")
    r.add_argument("--dump", action="append", choices=["tasks", "graph", "history"])
    r.set_defaults(func=cmd_run)

    rp = sub.add_parser("repl", help="interactive console over a scenario")
    rp.add_argument("scenario")
    rp.add_argument("--seed", type=int, default=None)
    rp.add_argument("--script", help="read commands from this transcript instead of stdin")
    rp.add_argument("--record", help="write the accepted commands to this transcript")
    rp.add_argument("--trace", help="write the JSONL trace here on exit")
    rp.set_defaults(func=cmd_repl)

    s = sub.add_parser("score", help="score benchmark predictions")
    s.add_argument("--pred", required=True)
    s.add_argument("--gold", required=True)
    s.add_argument("--judge", choices=["exact", "remote"], default="exact")
    s.add_argument("--judge-url")
    s.set_defaults(func=cmd_score)

    ls = sub.add_parser("list", help="list bundled scenarios")
    ls.set_defaults(func=cmd_list)
    return p


def main(argv: Optional[list] = None, out=None) -> int:
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    try:
        return args.func(args, out)
    except (ValidationError, StartupError, JudgeContractError, OSError, ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INVALID
    except OmnitaskError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
