import numpy as np
import pytest

from disentangle import autodiff as ad


def numeric_grad(f, x, h=1e-5):
    """Central differences of the scalar function ``f`` at array ``x`` (modified in place, restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b):
    """Max relative error; entries below 1e-3 in magnitude are compared against 1e-3."""
    a, b = np.asarray(a), np.asarray(b)
    scale = np.maximum(1e-3, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / scale))


def check_graph(build, arrays, h=1e-5):
    """Compare backward() against central differences for every array in ``arrays``.

    ``build(nodes)`` maps parameter nodes to a scalar loss node. Returns the
    largest relative error across all inputs.
    """
    nodes = [ad.parameter(a) for a in arrays]
    loss = build(nodes)
    ad.backward(loss)
    worst = 0.0
    for node, arr in zip(nodes, arrays):
        num = numeric_grad(lambda: build([ad.constant(a) for a in arrays]).value[0, 0], arr, h)
        worst = max(worst, rel_error(node.grad, num))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
