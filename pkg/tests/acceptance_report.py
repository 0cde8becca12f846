"""Collects acceptance-criterion outcomes for the terminal summary."""

from contextlib import contextmanager

lines: list[str] = []


@contextmanager
def criterion(name):
    """Record one PASS/FAIL line for an acceptance criterion."""
    try:
        yield
    except BaseException:
        lines.append(f"FAIL  {name}")
        raise
    lines.append(f"PASS  {name}")
