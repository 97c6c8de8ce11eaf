"""
Fingerprinting that ignores the device's dBm scale
==================================================

A radio map is surveyed with one phone and queried with another whose
RSSI readings are a distorted (but order-preserving) version of the
truth. Euclidean matching drifts, rank-based matching does not.
"""

import numpy as np

from radioloc.fingerprint import classical_locate, rbf_distances, rbf_locate, synthetic_radio_map

aps = np.array([[-1.0, -1.0], [21.0, -1.0], [21.0, 7.0], [-1.0, 7.0], [10.0, 3.0]])
xs, ys = np.meshgrid(np.arange(11) * 2.0, np.arange(4) * 2.0, indexing="ij")
locs = np.column_stack([xs.ravel(), ys.ravel()])
rmap = synthetic_radio_map(locs, aps)
print(len(rmap), "fingerprints,", len(rmap.ap_universe), "access points")

truth = np.array([12.0, 4.0])
query = synthetic_radio_map([truth], aps).entries[0].readings

# A second handset: compressed and offset scale
other = {ap: 0.7 * v - 5.0 for ap, v in query.items()}

for name, q in (("same phone", query), ("other phone", other)):
    c = classical_locate(rmap, q, k=1)
    r = rbf_locate(rmap, q, "spearman", k=1)
    print(f"{name:>12s}: classical {c}  rank-based {r}")

# Ranks are coarser than dBm: cells sharing an AP ordering tie, and ties
# resolve to the first surveyed entry
q2 = synthetic_radio_map([[4.0, 2.0]], aps).entries[0].readings
print("at (4, 2): rank-based", rbf_locate(rmap, q2), " tied entries",
      int(np.sum(rbf_distances(rmap, q2) == 0)))
