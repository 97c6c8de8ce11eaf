"""Narrowband angle-of-arrival estimation from array covariance matrices.

Element positions are in wavelength units and steering vectors have
unit-magnitude entries, so ``a^H a = M``. Angles are broadside-referenced
degrees.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.signal import find_peaks

from .errors import (ParallelBearings, PhaseOutOfRange, SingularCovariance,
                     TooManySources)
from .geomsolve import SolverReport
from .scenario import make_rng


_MUSIC_FLOOR = 1e-14


def default_grid(step=0.1):
    n = int(round(180.0 / step))
    return np.linspace(-90.0, 90.0, n + 1)


@dataclass(frozen=True)
class ArrayGeometry:
    """Antenna element positions (wavelength units, shape ``(M, d)``)."""

    positions: np.ndarray
    wavelength: float = 1.0
    spacing: Optional[float] = None  # set for uniform linear arrays

    def __post_init__(self):
        p = np.atleast_2d(np.asarray(self.positions, float))
        if p.shape[0] < 2:
            raise ValueError("an array needs at least 2 elements")
        object.__setattr__(self, "positions", p)
        if self.spacing is not None and self.spacing > 0.5:
            warnings.warn(f"ULA spacing {self.spacing} exceeds half a wavelength: grating lobes",
                          stacklevel=3)

    @classmethod
    def ula(cls, n_elements, spacing=0.5, wavelength=1.0):
        pos = np.zeros((int(n_elements), 2))
        pos[:, 0] = spacing * np.arange(n_elements)
        return cls(pos, wavelength, float(spacing))

    @property
    def is_ula(self):
        return self.spacing is not None

    @property
    def n_elements(self):
        return self.positions.shape[0]


def steering_vector(geometry: ArrayGeometry, angle) -> np.ndarray:
    """Unit-modulus steering vector(s) for broadside angle(s) in degrees.

    Scalar ``angle`` gives shape ``(M,)``; an array of angles gives ``(M, K)``.
    The wave vector in wavelength units is ``(sin t, cos t)`` so a ULA
    along x has phase ``2 pi spacing m sin t``.
    """
    th = np.deg2rad(np.asarray(angle, float))
    if not np.all(np.isfinite(th)):
        raise ValueError("angle must be finite")
    p = geometry.positions
    k = np.stack([np.sin(th), np.cos(th)])  # (2, ...)
    phase = 2 * np.pi * np.tensordot(p[:, :2], k, axes=(1, 0))
    return np.exp(1j * phase)


def synthesize_snapshots(geometry, sources, noise_power, n_snapshots, seed=0):
    """Draw snapshots ``x(t) = sum a(t_k) s_k(t) + n(t)``.

    ``sources`` is a list of ``(angle_deg, power)``. Returns ``(X, R)`` with
    ``X`` of shape ``(M, n_snapshots)`` and the exact model covariance.
    """
    M = geometry.n_elements
    rng = make_rng(seed, 21)
    R = noise_power * np.eye(M, dtype=complex)
    X = np.zeros((M, n_snapshots), complex)
    for ang, pw in sources:
        if not pw > 0:
            raise ValueError("source powers must be positive")
        a = steering_vector(geometry, ang)
        R += pw * np.outer(a, a.conj())
        s = np.sqrt(pw / 2) * (rng.standard_normal(n_snapshots) + 1j * rng.standard_normal(n_snapshots))
        X += np.outer(a, s)
    if noise_power > 0:
        X += np.sqrt(noise_power / 2) * (rng.standard_normal((M, n_snapshots))
                                         + 1j * rng.standard_normal((M, n_snapshots)))
    return X, R


def sample_covariance(X):
    X = np.asarray(X)
    return X @ X.conj().T / X.shape[1]


@dataclass
class AngularSpectrum:
    angles: np.ndarray
    values: np.ndarray

    def peaks(self, rel_threshold=0.5):
        """Grid angles of local maxima at or above ``rel_threshold * max`` (0.5 is -3 dB)."""
        v = self.values
        padded = np.concatenate([[-np.inf], v, [-np.inf]])
        idx, _ = find_peaks(padded, height=rel_threshold * v.max())
        idx = idx - 1
        return self.angles[idx]

    def argmax(self):
        return float(self.angles[int(np.argmax(self.values))])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["angle_deg", "value"])
            for a, v in zip(self.angles, self.values):
                w.writerow([repr(float(a)), repr(float(v))])


def _grid(grid):
    g = default_grid() if grid is None else np.asarray(grid, float)
    if np.any(np.diff(g) <= 0):
        raise ValueError("angle grid must be strictly increasing")
    return g


def _check_cov(R):
    R = np.asarray(R, complex)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise ValueError("covariance must be square")
    if np.max(np.abs(R - R.conj().T)) > 1e-10 * max(1.0, np.abs(R).max()):
        raise ValueError("covariance is not Hermitian")
    return R


def bartlett_spectrum(cov, geometry, grid=None) -> AngularSpectrum:
    """Conventional beamformer ``a^H R a / a^H a``."""
    R = _check_cov(cov)
    g = _grid(grid)
    A = steering_vector(geometry, g)
    num = np.real(np.einsum("mk,mn,nk->k", A.conj(), R, A))
    return AngularSpectrum(g, np.maximum(num / geometry.n_elements, 0.0))


def capon_spectrum(cov, geometry, grid=None, diagonal_loading=None, n_snapshots=None) -> AngularSpectrum:
    """Minimum-variance distortionless response ``1 / a^H (R + dI)^-1 a``.

    With ``diagonal_loading=None`` the loading is ``1e-3 tr(R)/M`` when
    ``n_snapshots`` is given and smaller than M, otherwise zero.
    """
    R = _check_cov(cov)
    M = R.shape[0]
    if diagonal_loading is None:
        few = n_snapshots is not None and n_snapshots < M
        diagonal_loading = 1e-3 * np.real(np.trace(R)) / M if few else 0.0
    if diagonal_loading < 0:
        raise ValueError("diagonal loading must be non-negative")
    Rl = R + diagonal_loading * np.eye(M)
    if np.linalg.cond(Rl) > 1e12:
        raise SingularCovariance("covariance is singular; add diagonal loading")
    Ri = np.linalg.inv(Rl)
    g = _grid(grid)
    A = steering_vector(geometry, g)
    den = np.real(np.einsum("mk,mn,nk->k", A.conj(), Ri, A))
    return AngularSpectrum(g, 1.0 / np.maximum(den, np.finfo(float).tiny))


def _sorted_eig(R):
    w, V = np.linalg.eigh(R)
    order = np.lexsort((np.arange(len(w)), w))  # ascending, ties by index
    return w[order], V[:, order]


def noise_subspace(cov, n_sources):
    R = _check_cov(cov)
    M = R.shape[0]
    if not 1 <= n_sources <= M - 1:
        raise TooManySources(f"{n_sources} sources with {M} elements (at most {M - 1})")
    _, V = _sorted_eig(R)
    return V[:, : M - n_sources]


def music_spectrum(cov, geometry, grid=None, n_sources=1) -> AngularSpectrum:
    """MUSIC pseudo-spectrum ``1 / a^H En En^H a``."""
    En = noise_subspace(cov, n_sources)
    g = _grid(grid)
    A = steering_vector(geometry, g)
    proj = En.conj().T @ A
    den = np.sum(np.abs(proj) ** 2, axis=0)
    # projections below eigensolver precision carry no information; the
    # floor keeps exact-covariance peaks comparable in height
    floor = _MUSIC_FLOOR * geometry.n_elements
    return AngularSpectrum(g, 1.0 / np.maximum(den, floor))


def esprit(cov, geometry, n_sources=1):
    """LS-ESPRIT with the two maximally overlapping subarrays of a ULA.

    Returns sorted angles in degrees.
    """
    if not geometry.is_ula:
        raise ValueError("ESPRIT needs a uniform linear array")
    R = _check_cov(cov)
    M = R.shape[0]
    if not 1 <= n_sources <= M - 1:
        raise TooManySources(f"{n_sources} sources with {M} elements (at most {M - 1})")
    _, V = _sorted_eig(R)
    Es = V[:, M - n_sources:]
    Phi = np.linalg.lstsq(Es[:-1], Es[1:], rcond=None)[0]
    lam = np.linalg.eigvals(Phi)
    s = np.angle(lam) / (2 * np.pi * geometry.spacing)
    if np.any(np.abs(s) > 1 + 1e-12):
        raise PhaseOutOfRange(f"rotation phases give sin(theta) = {s}")
    return np.sort(np.rad2deg(np.arcsin(np.clip(s, -1, 1))))


def triangulate_aoa(observers, iterations=3) -> SolverReport:
    """Weighted least-squares intersection of bearing lines.

    ``observers`` is a list of ``(position, bearing_deg, variance)`` with
    bearings counter-clockwise from the x axis and variances in rad^2.
    The perpendicular miss of line ``k`` is about ``rho_k * dtheta_k``, so
    after a first pass with weights ``1/var`` the weights become
    ``1/(var rho^2)`` with ``rho`` the range to the current estimate.
    """
    obs = list(observers)
    if len(obs) < 2:
        raise ParallelBearings("need at least two bearings")
    P = np.array([np.asarray(o[0], float)[:2] for o in obs])
    th = np.deg2rad([float(o[1]) for o in obs])
    var = np.array([float(o[2]) for o in obs])
    if np.any(var <= 0):
        raise ValueError("bearing variances must be positive")
    N = np.column_stack([-np.sin(th), np.cos(th)])
    b = np.sum(N * P, axis=1)
    if np.linalg.matrix_rank(N, tol=1e-9) < 2:
        raise ParallelBearings("all bearing lines are parallel")
    w = 1.0 / var
    x = None
    for _ in range(max(1, iterations)):
        H = N.T @ (w[:, None] * N)
        x = np.linalg.solve(H, N.T @ (w * b))
        rho = np.maximum(np.linalg.norm(P - x, axis=1), 1e-9)
        w = 1.0 / (var * rho ** 2)
    res = N @ x - b
    cov = np.linalg.inv(N.T @ (w[:, None] * N))
    return SolverReport(x, iterations, True, float(np.linalg.norm(res)), cov)
