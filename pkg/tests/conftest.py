import numpy as np
import pytest

from ipll.model import Model

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def record():
    """Log one pass/fail line for the acceptance summary."""

    def _record(criterion: str, ok: bool, detail: str) -> bool:
        ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}")
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def tiny_model(d=4, h=5, c=3, activation="tanh", seed=0, scale=1.0) -> Model:
    rng = np.random.default_rng(seed)
    m = Model(d, h, c, activation, rng)
    for k in ("W1", "W2"):
        m.params[k] *= scale
    m.params["b1"] = rng.normal(0, 0.3, size=h)
    m.params["b2"] = rng.normal(0, 0.3, size=c)
    return m


def finite_difference(model: Model, loss_fn, step=1e-5) -> dict:
    """Central differences of ``loss_fn(model)`` w.r.t. every parameter entry."""
    grads = {}
    for name, arr in model.params.items():
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + step
            up = loss_fn(model)
            arr[idx] = orig - step
            down = loss_fn(model)
            arr[idx] = orig
            g[idx] = (up - down) / (2 * step)
        grads[name] = g
    return grads


def max_rel_error(analytic: dict, numeric: dict, floor=1e-6) -> float:
    """Largest |a - n| / max(|a|, |n|, floor); the floor keeps exact zeros from scoring round-off."""
    worst = 0.0
    for name in analytic:
        a, n = analytic[name], numeric[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def random_pseudo(rng, n, c):
    p = rng.random((n, c)) + 0.05
    return p / p.sum(axis=1, keepdims=True)
