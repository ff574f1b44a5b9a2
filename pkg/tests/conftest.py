import numpy as np
import pytest

from dsnt.edu_scorer import score_lexicon
from dsnt.fixtures import synthetic_corpus, synthetic_lexicon
from dsnt.treegen import SpanScore, build_tree_cky, gold_polarity


def random_scores(rng, n):
    return [SpanScore(float(rng.uniform(-1, 1)), float(rng.uniform(0, 1))) for _ in range(n)]


def silver_trees(docs, beam=10):
    lex = synthetic_lexicon()
    scores = {d.id: score_lexicon(d, lex) for d in docs}
    trees = {d.id: build_tree_cky(scores[d.id], gold_polarity(d.label), beam) for d in docs}
    return scores, trees


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy32():
    docs = synthetic_corpus(32, seed=1)
    scores, trees = silver_trees(docs)
    return docs, scores, trees


# --- acceptance reporting ------------------------------------------------------------
# Tests marked ``criterion(n, text)`` get one PASS/FAIL line in the terminal summary.

_CRITERIA: dict[int, tuple[str, bool, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, text): acceptance criterion n")
    config.addinivalue_line("markers", "slow: long-running training test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    n, text = mark.args
    if rep.when == "call" or rep.failed:
        detail = ""
        if rep.failed:
            detail = str(rep.longrepr.reprcrash.message if hasattr(rep.longrepr, "reprcrash") else rep.longrepr)
            detail = detail.splitlines()[0][:160]
        _CRITERIA[n] = (text, rep.passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        text, ok, detail = _CRITERIA[n]
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {text}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
