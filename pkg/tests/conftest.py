"""Collects the one-line verdicts of the acceptance suite and prints them at
the end of the run, grouped per criterion."""

import collections

_VERDICTS = collections.OrderedDict()


def record_verdict(criterion, part, passed, detail):
    _VERDICTS.setdefault(criterion, []).append((part, bool(passed), detail))
    print(f"acceptance {criterion}{part}: {'PASS' if passed else 'FAIL'} - {detail}")


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(_VERDICTS, key=int):
        parts = _VERDICTS[criterion]
        ok = all(p for _, p, _ in parts)
        detail = "; ".join(f"{name + ': ' if name else ''}{'pass' if p else 'FAIL'} ({d})" for name, p, d in parts)
        terminalreporter.write_line(f"criterion {criterion:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
