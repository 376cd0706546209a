import numpy as np
import pytest

from epgen.corpus import ExamineeSequence, InteractionLog, QuestionBank


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running comparative experiment")
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")


@pytest.fixture
def toy_bank():
    # q0: {a,b}, q1: {b}, q2: {c}, q3: {a}, q4: {a,c}, q5: {b}
    return QuestionBank.from_skill_lists([
        ("q0", ["a", "b"], 1.0),
        ("q1", ["b"], 1.0),
        ("q2", ["c"], 1.0),
        ("q3", ["a"], 1.0),
        ("q4", ["a", "c"], 1.0),
        ("q5", ["b"], 1.0),
    ])


@pytest.fixture
def toy_log():
    return InteractionLog([
        ExamineeSequence("e0", [0, 1, 2, 3], [1, 0, 1, 1]),
        ExamineeSequence("e1", [4, 0, 5], [0, 1, 1]),
        ExamineeSequence("e2", [2, 2], [1, 0]),
    ])


def random_bank(rng, n_questions, n_skills, max_skills=3):
    rows = []
    for j in range(n_questions):
        m = int(rng.integers(1, max_skills + 1))
        skills = rng.choice(n_skills, size=min(m, n_skills), replace=False)
        rows.append((f"q{j}", [f"s{i}" for i in sorted(skills)], 1.0))
    # make sure every skill appears, in index order
    rows = [(f"c{i}", [f"s{i}"], 1.0) for i in range(n_skills)] + rows
    return QuestionBank.from_skill_lists(rows)


# ---------------------------------------------------------- acceptance report

_CRITERIA: dict[int, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when not in ("setup", "call"):
        return
    number, title = mark.args
    entry = _CRITERIA.setdefault(number, {"title": title, "passed": True, "detail": "", "seconds": 0.0})
    entry["seconds"] += report.duration
    if report.failed:
        entry["passed"] = False
    for key, value in item.user_properties:
        if key == "detail":
            entry["detail"] = value


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        e = _CRITERIA[number]
        status = "PASS" if e["passed"] else "FAIL"
        terminalreporter.write_line(f"[{status}] {number}. {e['title']} ({e['seconds']:.1f}s) {e['detail']}")
