"""Time-of-arrival ranging bounds for multicarrier signals.

A spectrum is a set of complex subcarrier amplitudes on the symmetric index
set ``l = -(N-1)/2 .. (N-1)/2`` with spacing ``df``. The Ziv-Zakai bound is
integrated with a vectorized adaptive Simpson rule whose initial nodes are
packed geometrically towards zero, where the correlation main lobe lives.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import ZeroEnergy, ZeroEquivalentBandwidth

C0 = 299_792_458.0
_CHUNK = 2048


@dataclass(frozen=True)
class DiscreteSpectrum:
    amplitudes: np.ndarray
    subcarrier_spacing: float

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.amplitudes, complex))
        if a.ndim != 1 or len(a) < 1 or len(a) % 2 == 0:
            raise ValueError("need an odd, non-zero number of subcarriers")
        if not self.subcarrier_spacing > 0:
            raise ValueError("subcarrier spacing must be positive")
        object.__setattr__(self, "amplitudes", a)

    @classmethod
    def flat(cls, n, spacing):
        return cls(np.ones(int(n)), spacing)

    @classmethod
    def edge(cls, n, spacing):
        """All energy on the two outermost carriers."""
        a = np.zeros(int(n))
        a[0] = a[-1] = 1.0
        return cls(a, spacing)

    @classmethod
    def from_power_csv(cls, path, spacing):
        """One ``|S_l|^2`` value per row (column ``power``), lowest index first."""
        with open(path, newline="") as fh:
            p = [float(r["power"]) for r in csv.DictReader(fh)]
        return cls(np.sqrt(np.maximum(p, 0.0)), spacing)

    @property
    def n(self):
        return len(self.amplitudes)

    @property
    def indices(self):
        h = (self.n - 1) // 2
        return np.arange(-h, h + 1)

    @property
    def bandwidth(self):
        return self.n * self.subcarrier_spacing

    @property
    def power(self):
        return np.abs(self.amplitudes) ** 2


@dataclass(frozen=True)
class BoundResult:
    variance: float
    kind: str

    def __post_init__(self):
        if self.variance < 0:
            raise ValueError("variance must be non-negative")

    @property
    def std(self):
        return float(np.sqrt(self.variance))


def _energy(spec):
    e = float(np.sum(spec.power))
    if not e > 0:
        raise ZeroEnergy("spectrum carries no energy")
    return e


def equivalent_bandwidth_sq(spec: DiscreteSpectrum) -> float:
    """``df^2 sum l^2 |S_l|^2 / sum |S_l|^2`` in Hz^2."""
    e = _energy(spec)
    l = spec.indices.astype(float)
    return spec.subcarrier_spacing ** 2 * float(np.sum(l * l * spec.power)) / e


def crlb_range_variance(spec: DiscreteSpectrum, es_over_n0: float) -> BoundResult:
    """``c0^2 / (8 pi^2 beta^2 Es/N0)`` in m^2."""
    if not es_over_n0 > 0:
        raise ValueError("Es/N0 must be positive")
    b2 = equivalent_bandwidth_sq(spec)
    if b2 == 0:
        raise ZeroEquivalentBandwidth("zero equivalent bandwidth: no delay information")
    return BoundResult(C0 ** 2 / (8 * np.pi ** 2 * b2 * es_over_n0), "CRLB")


def autocorrelation(spec: DiscreteSpectrum, tau):
    """Normalized autocorrelation ``sum |S_l|^2 exp(j 2 pi l df tau) / sum |S_l|^2``."""
    e = _energy(spec)
    t = np.asarray(tau, float)
    flat = t.ravel()
    out = np.empty(flat.shape, complex)
    w = 2 * np.pi * spec.subcarrier_spacing * spec.indices
    for s in range(0, len(flat), _CHUNK):
        out[s:s + _CHUNK] = np.exp(1j * np.multiply.outer(flat[s:s + _CHUNK], w)) @ spec.power
    return (out / e).reshape(t.shape)


def q_function(x):
    """Gaussian tail probability ``P(N(0,1) > x)``."""
    return ndtr(-np.asarray(x, float))


ZZLB_MODES = ("sqrt", "literal")


def _one_minus_re_phi(spec, tau):
    # 1 - cos(x) = 2 sin^2(x/2) avoids cancellation near tau = 0
    e = _energy(spec)
    w = np.pi * spec.subcarrier_spacing * spec.indices
    out = np.empty(len(tau))
    for s in range(0, len(tau), _CHUNK):
        out[s:s + _CHUNK] = 2 * np.sin(np.multiply.outer(tau[s:s + _CHUNK], w)) ** 2 @ spec.power
    return out / e


def _zzlb_integrand(spec, snr, t_obs, mode):
    def f(tau):
        rho = _one_minus_re_phi(spec, tau)
        if mode == "sqrt":
            arg = np.sqrt(snr * rho)
        else:
            arg = np.sqrt(snr) * rho
        return tau * (1.0 - tau / t_obs) * q_function(arg)
    return f


def adaptive_simpson(f, nodes, rtol=1e-9, max_rounds=40, max_panels=200_000):
    """Composite adaptive Simpson over the panels between sorted ``nodes``.

    Every round evaluates all unfinished panels at once; a panel is accepted
    when its two-half estimate agrees with the whole-panel estimate to
    within ``rtol`` times the first-pass total divided by the initial panel
    count. Panels still open
    after ``max_rounds``, or when splitting would exceed ``max_panels``, are
    accepted as they stand.
    """
    x = np.asarray(nodes, float)
    a, b = x[:-1], x[1:]
    fa, fb, fm = f(a), f(b), f(0.5 * (a + b))
    total = 0.0
    scale = np.sum((b - a) * (fa + 4 * fm + fb) / 6)
    tol = rtol * max(abs(scale), 1e-300) / len(a)
    for _ in range(max_rounds):
        if len(a) == 0 or 2 * len(a) > max_panels:
            break
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        h = b - a
        whole = h * (fa + 4 * fm + fb) / 6
        halves = h * (fa + 4 * flm + 2 * fm + 4 * frm + fb) / 12
        err = np.abs(halves - whole)
        ok = err <= 15 * tol
        total += np.sum(halves[ok] + (halves[ok] - whole[ok]) / 15)
        keep = ~ok
        a = np.concatenate([a[keep], m[keep]])
        b = np.concatenate([m[keep], b[keep]])
        fa2 = np.concatenate([fa[keep], fm[keep]])
        fb = np.concatenate([fm[keep], fb[keep]])
        fm = np.concatenate([flm[keep], frm[keep]])
        fa = fa2
    if len(a):
        total += np.sum((b - a) * (fa + 4 * fm + fb) / 6)
    return float(total)


def zzlb_range_variance(spec: DiscreteSpectrum, es_over_n0: float, t_obs: float,
                        quadrature_points: int = 256, mode: str = "sqrt") -> BoundResult:
    """Ziv-Zakai bound for a delay uniformly distributed over ``t_obs``.

    ``c0^2 int_0^To tau (1 - tau/To) Q(arg) dtau`` with the real part of the
    normalized autocorrelation. ``mode="sqrt"`` uses
    ``arg = sqrt(Es/N0 (1 - Re phi))``, which tends to the CRLB at high SNR;
    ``mode="literal"`` uses ``sqrt(Es/N0) (1 - Re phi)``.

    ``quadrature_points`` is the number of geometrically spaced initial
    Simpson panels; a uniform set that resolves the fastest carrier is added.
    """
    if not t_obs > 0:
        raise ValueError("observation interval must be positive")
    if quadrature_points < 64:
        raise ValueError("quadrature_points must be at least 64")
    if mode not in ZZLB_MODES:
        raise ValueError(f"mode must be one of {ZZLB_MODES}")
    if es_over_n0 < 0:
        raise ValueError("Es/N0 must be non-negative")
    _energy(spec)
    tau_c = min(1.0 / spec.bandwidth, t_obs) / 64.0
    # a uniform floor of 8 nodes per period of the fastest carrier keeps wide
    # panels from aliasing the correlation sidelobes
    n_uni = int(np.ceil(8 * t_obs * spec.subcarrier_spacing * max(spec.indices[-1], 1))) + 1
    nodes = np.unique(np.concatenate([[0.0], np.geomspace(tau_c, t_obs, int(quadrature_points)),
                                      np.linspace(0.0, t_obs, n_uni)]))
    val = adaptive_simpson(_zzlb_integrand(spec, es_over_n0, t_obs, mode), nodes)
    upper = t_obs ** 2 / 12
    return BoundResult(C0 ** 2 * min(max(val, 0.0), upper), "ZZLB")


def tdoa_error_floor(bandwidth: float, dims: int = 1) -> float:
    """Bandwidth-limited ranging floor ``c0/B``, times sqrt(2) in two dimensions."""
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    if dims not in (1, 2):
        raise ValueError("dims must be 1 or 2")
    return C0 / bandwidth * (np.sqrt(2.0) if dims == 2 else 1.0)
