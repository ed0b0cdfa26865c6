import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from acceptance_log import RESULTS  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        verdict, title, detail = RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d} {verdict}: {title}" +
                                    (f" ({detail})" if detail else ""))
