import sys
from pathlib import Path

import pytest

from hayrag.corpus import Corpus, ImageRecord, save_corpus, synthetic_corpus

HELPERS = Path(__file__).parent / "helpers"
STDIO_ADAPTER = [sys.executable, str(HELPERS / "stdio_adapter.py")]

ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def record_criterion(name: str, passed: bool, detail: str = "") -> None:
    ACCEPTANCE_RESULTS.append((name, passed, detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE_RESULTS:
        status = "PASS" if passed else "FAIL"
        line = f"[{status}] {name}"
        if detail:
            line += f": {detail}"
        terminalreporter.write_line(line)


@pytest.fixture
def tiny_corpus():
    """Three images: A{dog}, B{truck,dog}, C{cat}."""
    return Corpus(
        [
            ImageRecord("A", frozenset({"dog"}), "images/A.jpg"),
            ImageRecord("B", frozenset({"truck", "dog"}), "images/B.jpg"),
            ImageRecord("C", frozenset({"cat"}), "images/C.jpg"),
        ]
    )


@pytest.fixture(scope="session")
def small_corpus():
    return synthetic_corpus(600, n_labels=20, labels_per_image=(1, 3), seed=3)


@pytest.fixture(scope="session")
def small_corpus_file(small_corpus, tmp_path_factory):
    path = tmp_path_factory.mktemp("corpus") / "corpus.json"
    save_corpus(small_corpus, path)
    return path
