import numpy as np
import pytest

from autr.params import Dims, init_params


def make_params(decoder="autr", seed=0, dtype=np.float64, scale=1.0, **dims):
    """Random model; ``scale`` inflates weights so distributions are peaked
    enough to make tests discriminating."""
    d = dict(V=12, L=6, E=5, T=3, H=7, Dz=4, R=5)
    d.update(dims)
    p = init_params(Dims(decoder=decoder, **d), seed, dtype=dtype)
    rng = np.random.default_rng(seed + 1000)
    for name, t in p.items():
        if t.data.ndim == 1:  # give biases some nonzero values too
            t.data = t.data + 0.1 * rng.standard_normal(t.shape).astype(dtype)
        t.data = (t.data * scale).astype(dtype)
    return p


@pytest.fixture
def autr_params():
    return make_params("autr")


@pytest.fixture
def baseline_params():
    return make_params("baseline")


# ------------------------------------------------- acceptance summary lines

ACCEPTANCE: list[tuple[str, bool, str]] = []


def record(criterion: str, ok: bool, detail: str) -> None:
    """Note one acceptance outcome; printed now and again in the summary."""
    ACCEPTANCE.append((criterion, bool(ok), detail))
    print(f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
