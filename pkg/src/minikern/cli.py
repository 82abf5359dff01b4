"""Command line harness.

    sim run --builtin fobj-hijack [--protect on|off] [--trace PATH]
            [--report PATH] [--pages N] [--page-size N]
            [--fobj-protect-size 0xNN] [--figures DIR]
    sim run --scenario path/to/file.scn ...

Exactly one of --builtin and --scenario picks the scenario. Flags given on
the command line override the matching scenario statements. Without --trace
the trace goes to stdout; without --report the report goes to stderr. With
--figures DIR the report is also rendered as PNG figures into DIR.

Exit codes: 0 for a completed run (a blocked attack is a result, not an
error), 1 for input or output problems (unreadable scenario, bad syntax,
unwritable output path), 2 when a driver faulted mid-run.
"""

from __future__ import annotations

import argparse
import sys

from .drivers import DriverRuntime, StepKind, StepResult
from .errors import ParseError, SimError, UnknownScenario
from .report import build_report, render_figures, serialize_report
from .scenario import Scenario, builtin_scenario, parse_scenario

EXIT_OK = 0
EXIT_IO = 1
EXIT_FAULT = 2


def execute_scenario(
    scenario: Scenario,
    protect: bool | None = None,
    pages: int | None = None,
    page_size: int | None = None,
    fobj_protect_size: int | None = None,
) -> tuple[DriverRuntime, StepResult | None]:
    """Build a runtime for the scenario, run it, and hand both back."""
    runtime = DriverRuntime(
        page_count=pages if pages is not None else scenario.pages,
        page_size=page_size if page_size is not None else scenario.page_size,
        protect=protect if protect is not None else scenario.protect,
        fobj_protect_size=fobj_protect_size,
    )
    for program in scenario.drivers:
        runtime.load_driver(program)
    fault = runtime.run(scenario.schedule)
    return runtime, fault


def run(
    scenario: Scenario,
    trace_path: str | None = None,
    report_path: str | None = None,
    protect: bool | None = None,
    pages: int | None = None,
    page_size: int | None = None,
    fobj_protect_size: int | None = None,
    figures_dir: str | None = None,
) -> int:
    """Execute a scenario and write its trace and report. Returns exit code."""
    runtime, fault = execute_scenario(
        scenario, protect, pages, page_size, fobj_protect_size
    )
    fault_text = None
    if fault is not None and fault.kind is StepKind.FAULTED:
        fault_text = fault.fault_reason
    report = build_report(
        runtime.trace.events,
        [(name, runtime.enclave_of(name)) for name in runtime.load_order],
        runtime.ept.active,
        fault_text,
    )
    trace_text = "\n".join(runtime.trace.lines()) + "\n"
    report_text = serialize_report(report)
    try:
        _write(trace_path, trace_text, sys.stdout)
        _write(report_path, report_text, sys.stderr)
        if figures_dir is not None:
            render_figures(runtime.trace.events, report, figures_dir)
    except OSError as exc:
        print(f"sim: output error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_FAULT if fault_text is not None else EXIT_OK


def _write(path: str | None, text: str, default_stream) -> None:
    if path is None:
        default_stream.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on usage errors; 2 is taken by faults here.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_IO, f"sim: error: {message}\n")


def _parse_protect_size(text: str) -> int:
    value = int(text, 16) if text.lower().startswith("0x") else int(text)
    if value <= 0:
        raise ValueError("protect size must be positive")
    return value


def build_arg_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sim", description="miniature kernel sandbox")
    sub = parser.add_subparsers(dest="command", required=True)
    runp = sub.add_parser("run", help="run a scenario", description="run a scenario")
    src = runp.add_mutually_exclusive_group(required=True)
    src.add_argument("--builtin", metavar="NAME", help="built-in scenario name")
    src.add_argument("--scenario", metavar="PATH", help="scenario file path")
    runp.add_argument("--protect", choices=("on", "off"), default=None,
                      help="override the scenario's protection setting")
    runp.add_argument("--trace", metavar="PATH", default=None,
                      help="trace output file (default: stdout)")
    runp.add_argument("--report", metavar="PATH", default=None,
                      help="report output file (default: stderr)")
    runp.add_argument("--pages", type=int, default=None,
                      help="override simulated page count")
    runp.add_argument("--page-size", type=int, default=None,
                      help="override simulated page size")
    runp.add_argument("--fobj-protect-size", type=_parse_protect_size, default=None,
                      metavar="0xNN", help="bytes to protect per FILE_OBJECT (default 0x40)")
    runp.add_argument("--figures", metavar="DIR", default=None,
                      help="also render report figures (PNG) into DIR")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_arg_parser()
    args = parser.parse_args(argv)
    try:
        if args.builtin:
            scenario = builtin_scenario(args.builtin)
        else:
            with open(args.scenario) as fh:
                scenario = parse_scenario(fh.read())
    except OSError as exc:
        print(f"sim: cannot read scenario: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ParseError, UnknownScenario) as exc:
        print(f"sim: {exc}", file=sys.stderr)
        return EXIT_IO
    protect = None if args.protect is None else args.protect == "on"
    try:
        return run(
            scenario,
            trace_path=args.trace,
            report_path=args.report,
            protect=protect,
            pages=args.pages,
            page_size=args.page_size,
            fobj_protect_size=args.fobj_protect_size,
            figures_dir=args.figures,
        )
    except SimError as exc:
        print(f"sim: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
