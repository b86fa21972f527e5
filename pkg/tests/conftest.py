"""Shared helpers: scenario runs built exactly as the CLI builds them, cached per session."""

import functools

from dirac_aa.cli import Run, build_parser
from dirac_aa.scenario import load_scenario


@functools.lru_cache(maxsize=None)
def scenario_run(name: str, grid: int | None = None) -> Run:
    argv = ["all", name] + ([] if grid is None else ["--grid", str(grid)])
    args = build_parser().parse_args(argv)
    return Run(load_scenario(name), args)


# acceptance criteria report: one line per criterion, printed after the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
