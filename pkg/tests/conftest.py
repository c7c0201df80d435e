"""Collects acceptance verdicts and prints one line per criterion."""

VERDICTS: dict[int, list[tuple[str, bool, str]]] = {}


def record(criterion: int, part: str, ok: bool, detail: str = ""):
    VERDICTS.setdefault(criterion, []).append((part, bool(ok), detail))


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for c in sorted(VERDICTS):
        parts = VERDICTS[c]
        status = "PASS" if all(ok for _, ok, _ in parts) else "FAIL"
        detail = "; ".join(f"{p}{'' if ok else ' FAILED'}: {d}" for p, ok, d in parts)
        terminalreporter.write_line(f"criterion {c:2d}: {status}  {detail}")
