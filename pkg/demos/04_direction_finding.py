"""
Direction finding with an eight-element array
=============================================

Two equal sources 3 degrees apart sit inside the beamwidth of an
8-element half-wavelength array. The beamformer sees one blob, the
adaptive and subspace methods split it.
"""

import numpy as np

from radioloc.aoa import (ArrayGeometry, bartlett_spectrum, capon_spectrum, esprit, music_spectrum,
                          sample_covariance, synthesize_snapshots, triangulate_aoa)

geom = ArrayGeometry.ula(8)
_, R = synthesize_snapshots(geom, [(10.0, 1000.0), (13.0, 1000.0)], 1.0, 1, seed=0)

for name, spec in (("Bartlett", bartlett_spectrum(R, geom)),
                   ("Capon", capon_spectrum(R, geom)),
                   ("MUSIC", music_spectrum(R, geom, None, 2))):
    print(f"{name:>8s} peaks:", spec.peaks())
print("   ESPRIT:", np.round(esprit(R, geom, 2), 4))

# From 200 noisy snapshots instead of the exact covariance
X, _ = synthesize_snapshots(geom, [(-20.0, 10.0), (35.0, 10.0)], 1.0, 200, seed=1)
print("ESPRIT from 200 snapshots:", np.round(esprit(sample_covariance(X), geom, 2), 2))

# Bearings from three stations crossed into a position fix
target = np.array([3.0, 4.0])
stations = np.array([[0.0, 0.0], [8.0, 0.0], [4.0, 10.0]])
bearings = np.degrees(np.arctan2(target[1] - stations[:, 1], target[0] - stations[:, 0]))
obs = [(p, b + 0.5, np.radians(1.0) ** 2) for p, b in zip(stations, bearings)]
print("triangulated:", np.round(triangulate_aoa(obs).estimate, 3))
