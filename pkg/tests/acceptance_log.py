"""Collects one pass/fail line per acceptance criterion."""

LINES = []


def record(number, title, ok, detail):
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    LINES.append(line)
    print(line)
    return ok
