import numpy as np
import pytest

from otex.data import build_vocab
from otex.layers import CHAR_WORD, WORD_ONLY, Model
from otex.synthetic import planted_corpus


def central_diff(f, x, eps=1e-6):
    """Numerical gradient of scalar ``f`` at float64 array ``x`` (independent of the autodiff path)."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return grad


def rel_err(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(a)))) if a.size else 0.0


@pytest.fixture(scope="session")
def small_corpus():
    return planted_corpus(20, seed=4)


@pytest.fixture(scope="session")
def vocabs(small_corpus):
    return build_vocab(small_corpus, "word", 100), build_vocab(small_corpus, "char", 100)


@pytest.fixture
def char_model(vocabs):
    wv, cv = vocabs
    return Model.create(CHAR_WORD, wv, cv, hidden=8, char_dim=5, word_dim=6, seed=2)


@pytest.fixture
def word_model(vocabs):
    wv, cv = vocabs
    return Model.create(WORD_ONLY, wv, cv, hidden=8, word_dim=6, seed=2)


# acceptance outcomes, one (status, criterion, detail) per criterion
ACCEPTANCE = []


def record(criterion, ok, detail):
    status = "PASS" if ok else "FAIL"
    line = f"{status}  {criterion}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return ok


def record_skip(criterion, reason):
    line = f"SKIP  {criterion}: {reason}"
    ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
