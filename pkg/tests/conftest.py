"""Collects acceptance results and prints one PASS/FAIL line per criterion."""
import pytest

CRITERIA = {
    1: "gradient correctness vs finite differences, all kinds",
    2: "closed-form point checks for the FKL and RKL gradients",
    3: "complementary FKL/RKL signals on a 10^4-point ratio grid",
    4: "ToDi(beta=1) equals FKL+RKL in value, differs in gradient",
    5: "weight-function conditions and closed forms",
    6: "toy region dominance via the CLI, 3 families x 5 seeds",
    7: "ToDi loss+gradient is linear in V and within 3x of FKL",
    8: "desk-scale ordering of beta and fixed-ratio students",
    9: "byte-identical train and sweep CSVs on rerun",
}

_results = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_results] = {}


@pytest.fixture
def criterion(request):
    """``criterion(n, passed, detail)`` records the outcome of acceptance criterion n."""

    def record(number, passed, detail):
        request.config.stash[_results][number] = (bool(passed), detail)
        print(f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {CRITERIA[number]} | {detail}")

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_results, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in CRITERIA.items():
        if n in results:
            ok, detail = results[n]
            terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n}. {title} | {detail}")
        else:
            terminalreporter.write_line(f"[----] {n}. {title} | not run")
