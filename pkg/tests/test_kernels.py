import numpy as np
import pytest

from epqlab import kernels
from epqlab.mdp import TabularPolicy, random_mdp

needs_compiled = pytest.mark.skipif("cython" not in kernels.available_backends(),
                                    reason="compiled kernels not built")


def _sim(backend, seed=3):
    mdp = random_mdp(6, 3, seed)
    pi = TabularPolicy(np.random.default_rng(seed).dirichlet(np.ones(3), 6))
    return kernels.Simulator(mdp.transition, mdp.reward, pi.probs, backend=backend), mdp


def test_sparse_cdf_rows_end_at_one():
    table = kernels.sparse_cdf([[0.2, 0.0, 0.8], [0.0, 1.0, 0.0]])
    np.testing.assert_array_equal(table.cum[:, -1], 1.0)
    assert table.idx[1, 0] == 1
    with pytest.raises(ValueError):
        kernels.sparse_cdf([[0.0, 0.0]])


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


def test_trace_follows_support():
    sim, mdp = _sim("python")
    s, a, r, n = sim.trace(np.zeros(50, np.int64), np.zeros(50, np.int64), 130,
                           np.random.default_rng(0))
    assert np.all(mdp.transition[s, a, n] > 0)
    np.testing.assert_array_equal(r, mdp.reward[s, a])
    np.testing.assert_array_equal(s[:, 1:], n[:, :-1])


@needs_compiled
def test_trace_bit_identical():
    out = []
    for backend in ("python", "cython"):
        sim, _ = _sim(backend)
        out.append(sim.trace(np.arange(40) % 6, np.arange(40) % 3, 150, np.random.default_rng(1)))
    for x, y in zip(*out):
        assert x.tobytes() == y.tobytes()


@needs_compiled
def test_returns_bit_identical():
    out = []
    for backend in ("python", "cython"):
        sim, _ = _sim(backend)
        out.append(sim.returns(np.arange(100) % 6, np.zeros(100, np.int64), 200, 0.95,
                               np.random.default_rng(2)))
    assert out[0].tobytes() == out[1].tobytes()


@needs_compiled
def test_batch_loss_grad_agrees():
    rng = np.random.default_rng(4)
    S, A, n = 7, 4, 300
    q = rng.normal(size=(S, A))
    args = (q, rng.integers(S, size=n), rng.integers(A, size=n), rng.normal(size=n),
            rng.uniform(0.2, 2, size=n), rng.uniform(0, 3, size=n), rng.normal(size=S),
            rng.dirichlet(np.ones(A), S))
    l1, g1 = kernels.batch_loss_grad(*args, backend="python")
    l2, g2 = kernels.batch_loss_grad(*args, backend="cython")
    assert l1 == pytest.approx(l2, rel=1e-13)
    np.testing.assert_allclose(g1, g2, rtol=1e-12, atol=1e-15)
