"""
Locating one target from ranges and range differences
======================================================

Four anchors around a room, one target. We solve it three ways: plain
multilateration, Foy's iteration on time-difference data, and a fusion of
two independent anchor groups.
"""

import numpy as np

from radioloc.geomsolve import TdoaSet, foy_tdoa, group_fuse, trilaterate, wgdop

rng = np.random.default_rng(0)
anchors = np.array([[0.0, 0.0], [8.0, 0.0], [8.0, 6.0], [0.0, 6.0]])
target = np.array([2.5, 4.0])
true_r = np.linalg.norm(anchors - target, axis=1)

# Noiseless ranges pin the target down exactly
rep = trilaterate(anchors, true_r)
print("noiseless multilateration:", rep.estimate, "iterations", rep.iterations)

# With 5 cm range noise the covariance estimate comes along for free
noisy = true_r + rng.normal(0, 0.05, 4)
rep = trilaterate(anchors, noisy)
print("noisy estimate:", np.round(rep.estimate, 3), "std:", np.round(np.sqrt(np.diag(rep.covariance)), 3))

# Geometry matters: dilution of precision in the middle of the room vs. a corner
w = np.full(4, 1 / 0.05 ** 2)
print(f"WGDOP centre {wgdop(anchors, w, [4, 3]):.4f}  corner {wgdop(anchors, w, [0.5, 0.5]):.4f}")

# TDoA: only differences to anchor 0 are known; Foy iterates from a rough guess
tdoa = TdoaSet.exact(anchors, target, reference=0)
rep = foy_tdoa(tdoa, init=[4.0, 3.0])
print("Foy from (4, 3):", rep.estimate, "converged", rep.converged)

# Two anchor groups measured by different radios, fused in information form
g1 = (anchors[:3], noisy[:3], np.full(3, 1 / 0.05 ** 2))
g2 = (anchors[1:], true_r[1:] + rng.normal(0, 0.2, 3), np.full(3, 1 / 0.2 ** 2))
fused = group_fuse([g1, g2])
print("fused estimate:", np.round(fused.estimate, 3))
