import numpy as np
import pytest
import torch

from acceptance_log import ACCEPTANCE_LINES

from drawdet.geometry import Box, Klass, ScoredBox


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_box(rng, size=100.0, min_side=1.0):
    w, h = rng.uniform(min_side, size / 2, size=2)
    cx, cy = rng.uniform(w / 2, size - w / 2), rng.uniform(h / 2, size - h / 2)
    return Box(float(cx), float(cy), float(w), float(h))


def random_scored(rng, n, klass=Klass.FACE, size=100.0, tie_prob=0.0):
    out = []
    for _ in range(n):
        if out and rng.random() < tie_prob:
            score = out[int(rng.integers(len(out)))].score
        else:
            score = float(rng.uniform())
        out.append(ScoredBox(random_box(rng, size), score, klass))
    return out


@pytest.fixture(autouse=True)
def _torch_threads():
    torch.set_num_threads(1)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
