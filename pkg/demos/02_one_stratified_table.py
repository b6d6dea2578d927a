"""
One stratified 2x2 table
========================

The building block of the scan: a CMH test and a Mantel-Haenszel odds
ratio for a binary x and binary y, stratified by a continuous z.
"""

# %%
import numpy as np

from multicmh import cmh_statistic, effect_estimate, medtree
from multicmh.tabulate import rank_columns

rng = np.random.default_rng(3)
n = 400
z = rng.normal(size=(n, 1))
x = (z[:, 0] + rng.normal(size=n) > 0).astype(int)
# y follows z, plus a direct effect of x
y = (z[:, 0] + 0.8 * x + rng.normal(size=n) > 0.2).astype(int)

# %%
# Twenty strata of about 20 samples along z.
strat = medtree(rank_columns(z), eta=20)
labels = np.empty(n, dtype=int)
labels[strat.indices] = strat.labels
cells = np.bincount(labels * 4 + 2 * x + y, minlength=4 * strat.T)
cells = cells.reshape(strat.T, 4)
print("strata:", strat.T)
print("first strata (a, b, c, d):\n", cells[:4])

# %%
res = cmh_statistic(cells)
print("M = %.3f   M^2 = %.3f   p = %.3g" % (res.statistic_m, res.statistic_m2,
                                          res.p_value))

# %%
eff = effect_estimate(cells)
print("pooled log OR %.3f  (se %.3f, 95%% CI %.3f to %.3f)"
      % (eff.theta_hat, eff.sigma_hat, eff.ci_low, eff.ci_high))
print("per-stratum log OR (0.5 added to each cell):")
print(np.round(eff.stratum_thetas, 2))

# %%
# Ignoring z: the crude table overstates the association.
crude = cells.sum(axis=0, keepdims=True)
print("crude log OR %.3f" % effect_estimate(crude).theta_hat)
