"""
Grid posteriors, belief propagation and particles
=================================================

With three anchors and one agent the factor graph is a tree, so belief
propagation reproduces the exact grid posterior. The particle version
gets close to the same mean with a couple of thousand samples.
"""

import numpy as np

from radioloc.bayes import (GridPrior, RangeLikelihood, estimate_map, estimate_mmse, grid_posterior,
                            run_bp, run_nbp)
from radioloc.scenario import NetworkScenario, synthesize_ranges

sc = NetworkScenario.from_positions([[0, 0], [1, 0], [0, 1]], [[0.62, 0.35]])
ranges = synthesize_ranges(sc, 0.05, seed=3)
prior = GridPrior.square(0, 1, 100)
lik = RangeLikelihood("multiplicative", 0.05)

post = grid_posterior(sc, ranges, prior, lik)
print("grid MMSE", np.round(estimate_mmse(post)[3], 4), " MAP", np.round(estimate_map(post)[3], 4))

bp = run_bp(sc, ranges, prior, lik)
print("max |BP - grid| per cell:", np.max(np.abs(bp.marginals[3] - post.marginals[3])))

nbp = run_nbp(sc, ranges, prior, lik, n_particles=2000, seed=0)
print("NBP MMSE", np.round(nbp["mmse"][3], 4), " effective sample size", round(nbp["ess"][3]))

# Two agents that also range to each other: the grid is now a joint over pairs
sc2 = NetworkScenario.from_positions([[0, 0], [1, 0], [0, 1]], [[0.3, 0.3], [0.7, 0.6]])
r2 = synthesize_ranges(sc2, 0.05, seed=4)
small = GridPrior.square(0, 1, 30)
bp2 = run_bp(sc2, r2, small, lik)
print("two-agent BP means:", {k: np.round(v, 3) for k, v in bp2.info["mmse"].items()})
