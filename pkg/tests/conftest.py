import numpy as np
import pytest

from curriclab.data import generate_copy_task
from curriclab.model import ModelConfig, init_params


def tiny_config(vocab=12, **kw):
    base = dict(embed_dim=8, ff_dim=16, layers=2, heads=2, dropout=0.1, label_smoothing=0.1)
    base.update(kw)
    return ModelConfig(vocab, vocab, **base)


@pytest.fixture
def tiny_params():
    return init_params(tiny_config(), np.random.default_rng(0))


@pytest.fixture
def tiny_corpus():
    return generate_copy_task(3, (2, 5), 12, seed=1)


@pytest.fixture(scope="session")
def overfit_copy():
    """A small model trained to convergence on a 50-pair copy task."""
    from curriclab.model import backward
    from curriclab.optim import LrSchedule, adam_step

    corpus = generate_copy_task(50, (3, 6), 12, seed=11)
    cfg = ModelConfig(12, 12, embed_dim=32, ff_dim=64, layers=2, heads=2, dropout=0.0, label_smoothing=0.0)
    params = init_params(cfg, np.random.default_rng(0))
    schedule = LrSchedule(3e-3, 50)
    samples = list(corpus)
    for _ in range(400):
        grads, _ = backward(params, samples)
        adam_step(params, grads, schedule)
    return params, corpus


# one line per acceptance criterion, printed after the run
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def record_criterion(number, ok, detail):
    ACCEPTANCE_RESULTS[number] = (bool(ok), detail)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
