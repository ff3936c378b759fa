import numpy as np
import pytest

from edr_nmt import data as D
from edr_nmt import model as M


def random_pairs(rng, n, vocab=20, max_len=6):
    words = [f"w{i}" for i in range(vocab - 4)]

    def sent():
        return [words[k] for k in rng.integers(0, len(words), size=rng.integers(1, max_len + 1))]

    return [(sent(), sent()) for _ in range(n)]


@pytest.fixture
def tiny_setup():
    """hidden 8, embed 8, vocabs of 20, sentences of length <= 6."""
    rng = np.random.default_rng(7)
    pairs = random_pairs(rng, 5)
    sv = D.build_vocab((s for s, _ in pairs), 20)
    tv = D.build_vocab((t for _, t in pairs), 20)
    batch = D.collate(D.encode_pairs(pairs, sv, tv))
    theta, gamma = M.init_params(M.ModelConfig(20, 20, 8, 8, seed=3))
    return batch, theta, gamma


_CRITERIA = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Record one acceptance outcome: ``criterion(n, passed, detail)``.

    Outcomes are printed, one line per criterion, in the terminal summary.
    A criterion checked by several tests passes only if all of them pass.
    """
    results = request.config.stash.setdefault(_CRITERIA, {})

    def record(number, passed, detail):
        prev = results.get(number)
        ok = bool(passed) and (prev is None or prev[0])
        details = (prev[1] + "; " if prev else "") + detail
        results[number] = (ok, details)
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_CRITERIA, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        ok, detail = results[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
