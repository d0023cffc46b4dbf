from pathlib import Path

import numpy as np
import pytest

from eegcn.corpus import build_vocab, load_dataset, load_glove
from eegcn.train import Experiment

FIXTURES = Path(__file__).parent / "fixtures"

# criterion number -> (description, passed, detail); filled by test_acceptance
ACCEPTANCE: dict = {}


@pytest.fixture(scope="session")
def fixture_dir():
    return FIXTURES


@pytest.fixture(scope="session")
def fixture_corpus():
    train = load_dataset(FIXTURES / "train.jsonl", FIXTURES / "train.conllu")
    test = load_dataset(FIXTURES / "test.jsonl", FIXTURES / "test.conllu")
    return train, test


@pytest.fixture(scope="session")
def fixture_experiment(fixture_corpus):
    train, test = fixture_corpus
    vocab = build_vocab(train + test)
    emb = load_glove(FIXTURES / "glove.txt", vocab, dim=8, rng=np.random.default_rng(0))
    return Experiment.build(train, test, emb)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        desc, status, detail = ACCEPTANCE[number]
        line = f"[{status}] criterion {number}: {desc}"
        if detail:
            line += f" -- {detail}"
        terminalreporter.write_line(line)
