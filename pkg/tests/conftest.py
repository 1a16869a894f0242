import functools

import numpy as np
import pytest

from frgd.modelfile import load_model


@functools.lru_cache(maxsize=None)
def bundle(name):
    return load_model(name)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_similitude(rng, max_ratio=2.0):
    from frgd.geometry import from_params
    return from_params(rng.uniform(0.1, max_ratio), rng.uniform(0, 360),
                       bool(rng.integers(2)), rng.normal(size=2))


def random_network(rng, n, p=0.5):
    """Connected random network on n integer-labelled vertices."""
    from frgd.network import build_network
    edges = {(i, i + 1): rng.uniform(0.1, 10) for i in range(n - 1)}  # spanning path
    for i in range(n):
        for j in range(i + 2, n):
            if rng.random() < p:
                edges[(i, j)] = rng.uniform(0.1, 10)
    perm = rng.permutation(n)
    return build_network(list(range(n)), [(int(perm[i]), int(perm[j]), c)
                                          for (i, j), c in edges.items()])


ACCEPTANCE: dict = {}


def record(n: int, ok: bool, detail: str) -> bool:
    """Store one acceptance line for the terminal summary; returns ok."""
    ACCEPTANCE[n] = (bool(ok), detail)
    print(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
