"""Learning while selling: explore-then-exploit policies on a small market.

All policies see the same arrival sequence of customer types. The low-rank
policy pools every observation through the factored estimator; the
structure-ignorant baseline learns each type separately, and the
context-ignorant baseline fits one model to everyone.

    python demos/dynamic_regret.py [T]
"""
import sys
import time

import numpy as np

from assortmax import PolicyConfig, draw_arrivals, exploit_match_rate, generate_instance, simulate

T = int(sys.argv[1]) if len(sys.argv) > 1 else 8000
inst = generate_instance(m=20, n=20, r=2, K=4, rng=np.random.default_rng(11))
arrivals = draw_arrivals(inst, T, np.random.default_rng(12))

base = dict(C=0.3, r=2, max_outer_iters=100, tol=1e-6)
print(f"m = n = 20, r = 2, K = 4, T = {T}")
print(f"{'policy':<20}{'regret':>9}{'explore':>9}{'refits':>8}{'match':>7}{'secs':>7}")
curves = {}
for k, kind in enumerate(["oracle", "nuc-norm", "nuc-norm-plan", "context-ignorant", "structure-ignorant"]):
    t0 = time.perf_counter()
    tr = simulate(inst, PolicyConfig(kind=kind, **base), arrivals, np.random.default_rng([13, k]))
    c = tr.counters
    curves[kind] = tr.regret_cum
    print(f"{kind:<20}{tr.regret_cum[-1]:9.1f}{c['explore']:9d}{c['refit']:8d}"
          f"{exploit_match_rate(tr):7.2f}{time.perf_counter() - t0:7.1f}")

# logarithmic regret shows up as evenly spaced increments per decade of t
print("\ncumulative regret at t = 10^k")
marks = [10 ** k for k in range(2, int(np.log10(T)) + 1)]
print(f"{'policy':<20}" + "".join(f"{t:>9d}" for t in marks))
for kind, cum in curves.items():
    print(f"{kind:<20}" + "".join(f"{cum[t - 1]:9.1f}" for t in marks))
