"""Collected one-line acceptance verdicts, printed at the end of the session."""

LINES: list[str] = []


def record(criterion: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
    LINES.append(line)
    print(line)
