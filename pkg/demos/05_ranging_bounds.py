"""
How well can a multicarrier signal range?
=========================================

The Cramer-Rao bound falls forever with SNR; the Ziv-Zakai bound knows the
delay can only be so wrong and saturates at the prior at low SNR, then
joins the CRLB once the main correlation lobe wins.
"""

import numpy as np

from radioloc.bounds import (DiscreteSpectrum, crlb_range_variance, equivalent_bandwidth_sq,
                             tdoa_error_floor, zzlb_range_variance)

df = 15e3
flat = DiscreteSpectrum.flat(1201, df)
edge = DiscreteSpectrum.edge(1201, df)
t_obs = 0.5 / df
print(f"RMS bandwidth flat {np.sqrt(equivalent_bandwidth_sq(flat)) / 1e6:.2f} MHz, "
      f"edge {np.sqrt(equivalent_bandwidth_sq(edge)) / 1e6:.2f} MHz")

print(f"{'SNR dB':>7s} {'CRLB m':>10s} {'ZZLB m':>10s}")
for snr_db in (-20, -10, 0, 10, 20, 30, 40):
    snr = 10 ** (snr_db / 10)
    c = crlb_range_variance(flat, snr).std
    z = zzlb_range_variance(flat, snr, t_obs).std
    print(f"{snr_db:7d} {c:10.3f} {z:10.3f}")

# Putting all power on the band edges maximizes the CRLB's bandwidth term
print(f"edge spectrum CRLB at 20 dB: {crlb_range_variance(edge, 100.0).std:.3f} m")

# Rule of thumb for a 4 MHz signal in the plane
print(f"TDoA floor, 4 MHz, 2-D: {tdoa_error_floor(4e6, dims=2):.1f} m")
