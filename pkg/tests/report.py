"""Pass/fail lines of the acceptance suite, printed at the end of the session."""

LINES = {}


def record(n, ok, detail):
    LINES[n] = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    return ok
