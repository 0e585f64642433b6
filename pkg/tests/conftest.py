import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from scoretrack.fingerprint import build_index  # noqa: E402
from scoretrack.score import ScoreDatabase  # noqa: E402
from scoretrack.sim import generate_random_score  # noqa: E402

# acceptance criterion -> (passed, detail); filled in by test_acceptance.py
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE, key=lambda k: int(k.split(".")[0])):
        ok, detail = ACCEPTANCE[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")


@pytest.fixture(scope="session")
def small_db():
    return ScoreDatabase.from_scores([generate_random_score(400, seed=s) for s in range(4)])


@pytest.fixture(scope="session")
def small_index(small_db):
    return build_index(small_db)


@pytest.fixture(scope="session")
def corpus_db():
    """The desk-scale corpus: 50 generated scores of 2000 notes each."""
    return ScoreDatabase.from_scores([generate_random_score(2000, seed=s) for s in range(50)])


@pytest.fixture(scope="session")
def corpus_index(corpus_db):
    return build_index(corpus_db)


@pytest.fixture(scope="session")
def corpus_index_path(corpus_index, tmp_path_factory):
    path = tmp_path_factory.mktemp("corpus") / "corpus.idx"
    corpus_index.save(path)
    return path
