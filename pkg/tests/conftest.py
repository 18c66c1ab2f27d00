import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

from acceptance_log import RESULTS  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(RESULTS):
        title, ok, detail = RESULTS[cid]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} [{cid:>2}] {title} | {detail}")
