"""Time the compiled and numpy kernel backends on the same workloads.

    python3 benchmarks/bench_kernels.py [--repeat N]

Both backends consume identical random streams, so the script also checks
that their outputs agree before reporting timings.
"""

import argparse
import time

import numpy as np

from epqlab import kernels
from epqlab.mdp import TabularPolicy, pendulum_mdp


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - start)
    return min(times), out


def workloads():
    mdp = pendulum_mdp(21, 21, 17)
    pi = TabularPolicy.uniform(mdp.n_states, mdp.n_actions)
    n = 2000
    starts = np.arange(n) % mdp.n_states
    acts = np.arange(n) % mdp.n_actions

    def rollouts(backend):
        sim = kernels.Simulator(mdp.transition, mdp.reward, pi.probs, backend=backend)
        return lambda: sim.returns(starts, acts, 300, mdp.discount, np.random.default_rng(0))

    def trace(backend):
        sim = kernels.Simulator(mdp.transition, mdp.reward, pi.probs, backend=backend)
        return lambda: sim.trace(starts[:500], acts[:500], 300, np.random.default_rng(0))[2]

    rng = np.random.default_rng(1)
    S, A, m = mdp.n_states, mdp.n_actions, 20000
    args = (rng.normal(size=(S, A)), rng.integers(S, size=m), rng.integers(A, size=m),
            rng.normal(size=m), rng.uniform(0.2, 2, m), rng.uniform(0, 3, m),
            rng.normal(size=S), rng.dirichlet(np.ones(A), S))

    def loss(backend):
        return lambda: kernels.batch_loss_grad(*args, backend=backend)[1]

    return {"monte-carlo returns (2000 x 300)": rollouts,
            "trace (500 x 300)": trace,
            "batch loss + grad (20000)": loss}


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()
    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled kernels are not built; only the numpy backend is available")
    print(f"{'workload':36s}" + "".join(f"{b:>12s}" for b in backends) + "     speedup")
    for name, make in workloads().items():
        results = {b: _best(make(b), args.repeat) for b in backends}
        line = f"{name:36s}" + "".join(f"{results[b][0]:11.4f}s" for b in backends)
        if len(backends) == 2:
            a, b = results["python"][1], results["cython"][1]
            assert np.allclose(a, b, rtol=1e-12, atol=1e-15), f"{name}: backends disagree"
            line += f"  {results['python'][0] / results['cython'][0]:9.1f}x"
        print(line)


if __name__ == "__main__":
    main()
