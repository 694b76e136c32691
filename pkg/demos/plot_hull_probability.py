"""
How many vertices cover the centre of a simplex
===============================================

M occupancy vertices drawn uniformly on the simplex contain its centre with a probability
that rises quickly in M. For S = 2 the exact value is 1 - 2^(1-M).
"""

import numpy as np
import matplotlib.pyplot as plt

from exdm.tabular import coverage_bound, wendel_exact_1d, wendel_mc

rng = np.random.default_rng(0)
Ms = np.arange(2, 13)
est = [wendel_mc(2, int(M), 20_000, rng) for M in Ms]
plt.errorbar(Ms, [p for p, _ in est], yerr=[3 * se for _, se in est], fmt="o", label="Monte Carlo, S=2")
plt.plot(Ms, [wendel_exact_1d(int(M)) for M in Ms], "-", label="1 - 2^(1-M)")
plt.plot(Ms, [coverage_bound(2, int(M))[2] for M in Ms], "--", label="lower bound")

est3 = [wendel_mc(3, int(M), 5_000, rng)[0] for M in Ms]
plt.plot(Ms, est3, "s:", label="Monte Carlo, S=3")
plt.ylim(-0.05, 1.05)
plt.xlabel("M")
plt.ylabel("P(centre in hull)")
plt.legend()
plt.show()
