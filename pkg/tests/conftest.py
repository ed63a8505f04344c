import os
from pathlib import Path

import pytest

from artifacts import Store

ABLATION_SEEDS = (0, 1, 2)
ABLATION_STEPS = 1000
ABLATIONS = {
    "Base": dict(use_saq=False, use_sce=False, use_pce=False),
    "Base+PCE": dict(use_saq=False, use_sce=False, use_pce=True),
    "Base+SAQ": dict(use_saq=True, use_sce=False, use_pce=False),
}

_criteria: list[str] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: needs trained artifacts (cached between runs)")


def pytest_terminal_summary(terminalreporter):
    if _criteria:
        terminalreporter.section("acceptance criteria")
        for line in _criteria:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def criterion():
    """``criterion(name, ok, detail)`` records one pass/fail line and asserts."""

    def record(name, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        print(line)
        _criteria.append(line)
        assert ok, line

    return record


@pytest.fixture(scope="session")
def store(request):
    root = os.environ.get("SAQDIFF_ARTIFACTS")
    if root is None:
        cache = getattr(request.config, "cache", None)
        root = cache.mkdir("saqdiff-artifacts") if cache is not None else Path(".artifacts")
    return Store(Path(root))


@pytest.fixture(scope="session")
def data4(store):
    return store.dataset(writers=4, words=64, seed=1, lexicon_seed=2, unseen=0)


@pytest.fixture(scope="session")
def ae4(store, data4):
    return store.autoencoder(data4)


@pytest.fixture(scope="session")
def smoke_run(store, data4, ae4):
    # 4 writers cannot fill 8 pairs with distinct writers
    return store.generator(data4, ae4, steps=2000, allow_writer_reuse=True)


@pytest.fixture(scope="session")
def data8(store):
    return store.dataset(writers=8, words=64, seed=1, lexicon_seed=2, unseen=0)


@pytest.fixture(scope="session")
def ae8(store, data8):
    return store.autoencoder(data8)


@pytest.fixture(scope="session")
def style_run(store, data8, ae8):
    return store.generator(data8, ae8, steps=10000)


@pytest.fixture(scope="session")
def ablation_runs(store, data8, ae8):
    return {(name, seed): store.generator(data8, ae8, steps=ABLATION_STEPS, seed=seed, **flags)
            for seed in ABLATION_SEEDS for name, flags in ABLATIONS.items()}
