import pytest

from hyperdp.dataset import Dataset, kfold_assign, temporal_holdout
from hyperdp.synthetic import small_corpus

_acceptance = []


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance.py" in report.nodeid:
        _acceptance.append((report.nodeid.split("::")[-1], report.outcome))
    elif report.when == "setup" and report.failed and "test_acceptance.py" in report.nodeid:
        _acceptance.append((report.nodeid.split("::")[-1], "error"))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _acceptance:
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{status}  {name}")


@pytest.fixture(scope="session")
def corpus():
    return small_corpus(seed=3)


@pytest.fixture(scope="session")
def corpus_split(corpus):
    split = temporal_holdout(corpus, 0.8)
    return split.train, kfold_assign(split.train, 3, seed=11)


def make(records):
    return Dataset.from_records(records)
