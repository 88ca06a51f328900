import numpy as np
import pytest
from hypothesis import settings

from delta_adapt import autodiff as ad

# fixed example stream so a green run stays green
settings.register_profile("repro", derandomize=True)
settings.load_profile("repro")

# criterion id -> (name, passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE: dict[str, tuple[str, bool, str]] = {}


@pytest.fixture(autouse=True)
def _fresh_tape():
    ad.reset_tape()
    yield
    ad.reset_tape()


def fd_check(params: dict, loss_fn, h: float = 1e-5, floor: float = 1e-6) -> float:
    """Largest per-coordinate relative error between reverse-mode and central differences.

    ``rel = |a - f| / max(|a|, |f|, floor)``; the floor keeps coordinates whose
    true gradient is ~0 from dividing round-off by round-off.
    """
    for p in params.values():
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = {k: (np.zeros_like(p.data) if p.grad is None else p.grad.copy()) for k, p in params.items()}
    worst = 0.0
    with ad.no_grad():
        for k, p in params.items():
            flat = p.data.reshape(-1)
            for i in range(flat.size):
                keep = flat[i]
                flat[i] = keep + h
                up = float(loss_fn().data)
                flat[i] = keep - h
                down = float(loss_fn().data)
                flat[i] = keep
                f = (up - down) / (2 * h)
                a = analytic[k].reshape(-1)[i]
                worst = max(worst, abs(a - f) / max(abs(a), abs(f), floor))
    return worst


def randomize(params: dict, rng: np.random.Generator, scale: float = 0.5) -> None:
    """Overwrite every parameter (zero-initialised heads included) with N(0, scale^2)."""
    for p in params.values():
        p.data[...] = scale * rng.standard_normal(p.data.shape)


def record(cid: str, name: str, passed: bool, detail: str) -> None:
    ACCEPTANCE[cid] = (name, passed, detail)
    print(f"[{'PASS' if passed else 'FAIL'}] {cid} {name}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE, key=lambda c: int(c[1:])):
        name, passed, detail = ACCEPTANCE[cid]
        terminalreporter.write_line(f"{cid:>4} {'PASS' if passed else 'FAIL'}  {name}: {detail}")


def golden_delta(r: np.ndarray, g: np.ndarray) -> float:
    """Minimiser of ``1/2 mean ||r - delta g||^2`` by golden-section search alone.

    A first pass on the risk itself stalls near 1e-8 because the quadratic is
    flat at its minimum; the second pass searches the risk *difference* to the
    first estimate, written as a product so nothing cancels.
    """
    from scipy.optimize import minimize_scalar

    r2, g2 = r.reshape(len(r), -1), g.reshape(len(g), -1)

    def risk(d):
        e = r2 - d * g2
        return 0.5 * np.mean(np.sum(e * e, axis=1))

    d0 = minimize_scalar(risk, bracket=(0.0, 1.0), method="golden", tol=1e-15).x

    def rel(d):
        return 0.5 * np.mean(np.sum((d0 - d) * g2 * (2 * r2 - (d + d0) * g2), axis=1))

    return float(minimize_scalar(rel, bracket=(d0 - 1e-6, d0 + 1e-6), method="golden", tol=1e-15).x)
