from functools import lru_cache

import pytest

from caccdrive.control import ORIGINAL_GAINS, REDESIGNED_GAINS
from caccdrive.convoy import Scenario, simulate
from caccdrive.profiles import ProfileSpec

GAINS = {"original": ORIGINAL_GAINS, "redesigned": REDESIGNED_GAINS}
US06 = ProfileSpec(kind="trace", trace_path="builtin:us06")


def profile(kind):
    return US06 if kind == "us06" else ProfileSpec(kind=kind)


def scenario(kind="ramp", gains="original", headway=0.6, t_end=None, **kw):
    if t_end is None:
        t_end = 60.0 if kind == "us06" else 90.0
    return Scenario(profile=profile(kind), gains=GAINS[gains], headway=headway,
                    t_end=t_end, **kw)


@lru_cache(maxsize=None)
def run(kind="ramp", gains="original", headway=0.6, t_end=None, lead_mode="reference"):
    return simulate(scenario(kind, gains, headway, t_end, lead_mode=lead_mode))


@pytest.fixture
def cached_run():
    return run


# acceptance criterion -> one-line verdict, printed after the run
ACCEPTANCE_LINES = {}


class Criterion:
    def __init__(self, number, title):
        self.number, self.title, self.clauses = number, title, []

    def check(self, name, ok, detail=""):
        self.clauses.append((name, bool(ok), detail))
        return ok

    def finish(self):
        ok = all(c[1] for c in self.clauses)
        parts = "; ".join(f"{n}={'ok' if c else 'FAIL'}{f' ({d})' if d else ''}"
                          for n, c, d in self.clauses)
        line = f"criterion {self.number} {'PASS' if ok else 'FAIL'}: {self.title} | {parts}"
        ACCEPTANCE_LINES[self.number] = line
        print(line)
        failed = [n for n, c, _ in self.clauses if not c]
        assert not failed, f"criterion {self.number} failed clauses: {failed}"


@pytest.fixture
def criterion():
    return Criterion


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
