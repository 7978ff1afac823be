import numpy as np
import pytest

from losslab.nn import (
    Conv2d,
    Dense,
    MaxPool,
    NetworkSpec,
    ReLU,
    SoftmaxOutput,
    loss_and_grad,
)


def central_differences(f, w, h=1e-5):
    g = np.zeros_like(w)
    for i in range(w.size):
        e = np.zeros_like(w)
        e[i] = h
        g[i] = (f(w + e) - f(w - e)) / (2 * h)
    return g


def max_rel_error(a, b, floor=1e-6):
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def fd_check(net, w, x, y, loss_kind="cross-entropy-hard"):
    _, g = loss_and_grad(net, w, x, y, loss_kind)
    num = central_differences(lambda v: loss_and_grad(net, v, x, y, loss_kind)[0], w)
    return max_rel_error(g, num)


def random_net(rng, max_params=1000):
    """Random small net mixing conv / pool / dense / relu, at most ``max_params`` parameters."""
    while True:
        c, size = int(rng.integers(1, 3)), int(rng.integers(5, 8))
        shape = (c, size, size)
        layers = []
        h = w = size
        if rng.random() < 0.8:
            conv = Conv2d(c, int(rng.integers(1, 4)), int(rng.integers(2, 4)), int(rng.integers(1, 3)), int(rng.integers(0, 2)))
            layers.append(conv)
            h = w = (size + 2 * conv.pad - conv.kernel) // conv.stride + 1
            c = conv.out_ch
            if rng.random() < 0.5 and h >= 2:
                pool = MaxPool(2, int(rng.integers(1, 3)))
                layers.append(pool)
                h = w = (h - 2) // pool.step + 1
            layers.append(ReLU())
        hidden, classes = int(rng.integers(2, 8)), int(rng.integers(2, 5))
        layers += [Dense(c * h * w, hidden), ReLU(), Dense(hidden, classes), SoftmaxOutput()]
        net = NetworkSpec(shape, tuple(layers))
        if net.n_params <= max_params:
            return net


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(criterion: int, ok: bool, detail: str) -> bool:
    ACCEPTANCE[criterion] = (bool(ok), detail)
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
