import numpy as np
import pytest
from hypothesis import settings, strategies as st
from hypothesis.extra.numpy import arrays

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def random_simplex(rng, n, C, sharp=1.0):
    z = rng.normal(scale=sharp, size=(n, C))
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


@st.composite
def prob_batches(draw, max_n=8, max_c=5, same_c=True):
    n = draw(st.integers(1, max_n))
    c = draw(st.integers(2, max_c))
    logits = draw(arrays(np.float64, (2, n, c), elements=st.floats(-6, 6)))
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    p = e / e.sum(axis=-1, keepdims=True)
    return p[0], p[1]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE: list[str] = []


def verdict(number: int, name: str, ok: bool, detail: str) -> bool:
    line = f"[criterion {number}] {'PASS' if ok else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split("]")[0].split()[-1])):
            terminalreporter.write_line(line)
