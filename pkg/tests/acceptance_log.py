"""Collects one verdict per acceptance criterion for the terminal summary."""

from contextlib import contextmanager

RESULTS = {}


@contextmanager
def criterion(number, title):
    notes = []
    try:
        yield notes
    except BaseException as e:
        msg = str(e).splitlines()[0] if str(e) else ""
        RESULTS[number] = ("FAIL", title, "; ".join(notes + [f"{type(e).__name__}: {msg}"]))
        raise
    RESULTS[number] = ("PASS", title, "; ".join(notes))
