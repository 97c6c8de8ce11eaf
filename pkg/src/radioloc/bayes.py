"""Bayesian cooperative localization on a pairwise Markov random field.

Grid methods discretize every agent onto the same regular grid. Anchors
are delta priors at their exact (off-grid) positions, so their messages
are simply the range likelihood evaluated at the agent's cell centres.
All products of potentials are accumulated in the log domain.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import logsumexp
from scipy.sparse.csgraph import connected_components
from scipy import sparse

from .errors import GridTooLarge, NumericalUnderflow, ParticleCollapse
from .scenario import NetworkScenario, RangeSet, make_rng

MAX_JOINT_CELLS = 10_000_000
_LOG_UNDERFLOW = np.log(1e-300)


@dataclass(frozen=True)
class RangeLikelihood:
    """Range measurement density ``p(r | d)``.

    ``"multiplicative"``: ``r = d (1 + N(0, sigma))``; ``"additive"``:
    ``r = d + N(0, sigma)``.
    """

    model: str = "multiplicative"
    sigma: float = 0.05

    def __post_init__(self):
        if self.model not in ("multiplicative", "additive"):
            raise ValueError(f"unknown likelihood model {self.model!r}")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    def std(self, d):
        if self.model == "additive":
            return np.full_like(np.asarray(d, float), self.sigma)
        return self.sigma * np.maximum(np.asarray(d, float), 1e-9)

    def logpdf(self, r, d):
        s = self.std(d)
        z = (r - np.asarray(d, float)) / s
        return -0.5 * z * z - np.log(s) - 0.5 * np.log(2 * np.pi)

    def pdf(self, r, d):
        return np.maximum(np.exp(self.logpdf(r, d)), np.finfo(float).tiny)


@dataclass(frozen=True)
class GridPrior:
    """Regular grid over a bounding box plus per-agent priors.

    ``agent_priors`` maps agent id to ``"uniform"`` or a position (a delta
    on the cell containing it). Unlisted agents are uniform; anchors are
    always deltas at their true positions.
    """

    lower: tuple
    upper: tuple
    resolution: tuple
    agent_priors: dict = field(default_factory=dict)

    @classmethod
    def square(cls, lower, upper, cells, dim=2, agent_priors=None):
        return cls(tuple([float(lower)] * dim), tuple([float(upper)] * dim),
                   tuple([int(cells)] * dim), dict(agent_priors or {}))

    @property
    def dim(self):
        return len(self.lower)

    @property
    def n_cells(self):
        return int(np.prod(self.resolution))

    @property
    def cell_widths(self):
        return (np.asarray(self.upper) - np.asarray(self.lower)) / np.asarray(self.resolution)

    def axes(self):
        lo, w = np.asarray(self.lower), self.cell_widths
        return [lo[k] + (np.arange(n) + 0.5) * w[k] for k, n in enumerate(self.resolution)]

    def centers(self):
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.column_stack([m.ravel() for m in mesh])

    def cell_index(self, point):
        p = np.asarray(point, float)
        idx = np.floor((p - np.asarray(self.lower)) / self.cell_widths).astype(int)
        idx = np.clip(idx, 0, np.asarray(self.resolution) - 1)
        return int(np.ravel_multi_index(tuple(idx), self.resolution))

    def log_prior(self, agent_id):
        spec = self.agent_priors.get(agent_id, "uniform")
        G = self.n_cells
        if isinstance(spec, str):
            if spec != "uniform":
                raise ValueError(f"unknown prior {spec!r}")
            return np.full(G, -np.log(G))
        out = np.full(G, -np.inf)
        out[self.cell_index(spec)] = 0.0
        return out


@dataclass
class DiscretePosterior:
    """Per-agent probability vectors over shared grid cell centres."""

    centers: np.ndarray
    marginals: dict
    info: dict = field(default_factory=dict)

    def to_csv(self, path, agent_id):
        p = self.marginals[agent_id]
        d = self.centers.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "z"][:d] + ["probability"])
            for c, v in zip(self.centers, p):
                w.writerow([repr(float(x)) for x in c] + [repr(float(v))])


def _split_edges(scenario, ranges):
    na = scenario.n_anchors
    anchor_terms = {int(k): [] for k in scenario.agent_ids}
    pairs = []
    for (i, j), r in zip(ranges.edges, ranges.values):
        i, j = int(i), int(j)
        if i < na and j < na:
            continue
        if i < na:
            anchor_terms[j].append((i, r))
        elif j < na:
            anchor_terms[i].append((j, r))
        else:
            pairs.append((i, j, r))
    return anchor_terms, pairs


def _local_evidence(scenario, prior, likelihood, centers, anchor_terms):
    out = {}
    for k, terms in anchor_terms.items():
        lp = prior.log_prior(k).copy()
        for a, r in terms:
            d = np.linalg.norm(centers - scenario.positions[a], axis=1)
            lp += likelihood.logpdf(r, d)
        out[k] = lp
    return out


def _normalize_log(lp):
    z = logsumexp(lp)
    if not np.isfinite(z) or z < _LOG_UNDERFLOW:
        raise NumericalUnderflow("belief normalizer underflowed; grid too coarse for the likelihood?")
    p = np.exp(lp - z)
    return p / p.sum()


def _pair_logpsi(likelihood, r, centers, centers_b=None):
    cb = centers if centers_b is None else centers_b
    diff = centers[:, None, :] - cb[None, :, :]
    D = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return likelihood.logpdf(r, D)


def grid_posterior(scenario: NetworkScenario, ranges: RangeSet, prior: GridPrior,
                   likelihood: RangeLikelihood) -> DiscretePosterior:
    """Exhaustive posterior marginals on the grid (at most two agents).

    Raises:
        GridTooLarge: more than two agents or more than ``MAX_JOINT_CELLS``
            joint cells.
    """
    agents = [int(k) for k in scenario.agent_ids]
    G = prior.n_cells
    if len(agents) > 2 or G ** max(len(agents), 1) > MAX_JOINT_CELLS:
        raise GridTooLarge(f"{len(agents)} agents on {G} cells exceeds the exhaustive budget")
    centers = prior.centers()
    anchor_terms, pairs = _split_edges(scenario, ranges)
    ev = _local_evidence(scenario, prior, likelihood, centers, anchor_terms)
    if len(agents) == 0:
        return DiscretePosterior(centers, {})
    if len(agents) == 1:
        return DiscretePosterior(centers, {agents[0]: _normalize_log(ev[agents[0]])})
    a, b = agents
    joint = ev[a][:, None] + ev[b][None, :]
    for i, j, r in pairs:
        joint = joint + _pair_logpsi(likelihood, r, centers)
    z = logsumexp(joint)
    if z < _LOG_UNDERFLOW:
        raise NumericalUnderflow("joint posterior normalizer underflowed")
    pa = np.exp(logsumexp(joint, axis=1) - z)
    pb = np.exp(logsumexp(joint, axis=0) - z)
    return DiscretePosterior(centers, {a: pa / pa.sum(), b: pb / pb.sum()})


def estimate_mmse(posterior: DiscretePosterior) -> dict:
    """Posterior mean of each agent's cell centre."""
    return {k: p @ posterior.centers for k, p in posterior.marginals.items()}


def estimate_map(posterior: DiscretePosterior) -> dict:
    """Centre of the most probable cell; ties go to the lowest cell index."""
    return {k: posterior.centers[int(np.argmax(p))].copy()
            for k, p in posterior.marginals.items()}


def linear_gaussian_mmse(A, r, sigma):
    """``(A^T A + sigma^2 I)^-1 A^T r`` for ``r = A x + noise`` with a unit-variance prior."""
    A = np.asarray(A, float)
    n = A.shape[1]
    return np.linalg.solve(A.T @ A + sigma ** 2 * np.eye(n), A.T @ np.asarray(r, float))


def _agent_graph_has_cycle(agents, pairs):
    if not pairs:
        return False
    idx = {k: n for n, k in enumerate(agents)}
    rows = [idx[i] for i, _, _ in pairs]
    cols = [idx[j] for _, j, _ in pairs]
    uniq = {(min(a, b), max(a, b)) for a, b in zip(rows, cols)}
    g = sparse.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(agents),) * 2)
    ncomp, _ = connected_components(g, directed=False)
    return len(uniq) > len(agents) - ncomp


@dataclass
class BPConfig:
    max_iterations: int = 20
    tolerance: float = 1e-10
    damping: Optional[float] = None  # None: 0.5 on loopy agent graphs, else 0


def run_bp(scenario: NetworkScenario, ranges: RangeSet, prior: GridPrior,
           likelihood: RangeLikelihood, config: Optional[BPConfig] = None) -> DiscretePosterior:
    """Synchronous sum-product belief propagation on the grid.

    Messages start at one and beliefs at the priors. At step ``t`` each
    agent-to-agent message integrates the pairwise potential against the
    sender's previous belief divided by the reverse message; beliefs are
    the local evidence (prior times anchor likelihoods) times all incoming
    messages. ``info`` holds ``mmse``, ``map``, ``iterations`` and
    ``converged``.
    """
    cfg = config or BPConfig()
    if cfg.max_iterations < 1:
        raise ValueError("need at least one BP iteration")
    agents = [int(k) for k in scenario.agent_ids]
    centers = prior.centers()
    G = len(centers)
    anchor_terms, pairs = _split_edges(scenario, ranges)
    ev = _local_evidence(scenario, prior, likelihood, centers, anchor_terms)
    loopy = _agent_graph_has_cycle(agents, pairs)
    damping = (0.5 if loopy else 0.0) if cfg.damping is None else cfg.damping

    dist = None
    if pairs:
        if G * G > MAX_JOINT_CELLS * 4:
            raise GridTooLarge("pairwise kernel too large for this grid")
        diff = centers[:, None, :] - centers[None, :, :]
        dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    # directed messages (src, dst) -> log message over dst cells
    log_msg = {}
    r_of = {}
    for i, j, r in pairs:
        for s, t in ((i, j), (j, i)):
            log_msg[(s, t)] = np.full(G, -np.log(G))
            r_of[(s, t)] = r
    log_bel = {k: prior.log_prior(k) - logsumexp(prior.log_prior(k)) for k in agents}
    converged = False
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        new_msg = {}
        for (s, t), r in r_of.items():
            ratio = log_bel[s] - log_msg[(t, s)]
            ratio = np.where(np.isfinite(ratio), ratio, -np.inf)
            shift = np.max(ratio)
            v = np.exp(ratio - shift)
            logK = likelihood.logpdf(r, dist)
            kshift = logK.max()
            m = np.exp(logK - kshift) @ v
            m = np.maximum(m, 1e-300 * m.max())
            lm = np.log(m)
            new_msg[(s, t)] = lm - logsumexp(lm)
        new_bel = {}
        delta = 0.0
        for k in agents:
            lb = ev[k].copy()
            for (s, t), lm in new_msg.items():
                if t == k:
                    lb += lm
            p = _normalize_log(lb)
            old = np.exp(log_bel[k])
            if damping:
                p = (1.0 - damping) * p + damping * old
                p /= p.sum()
            delta = max(delta, float(np.max(np.abs(p - old))))
            with np.errstate(divide="ignore"):
                new_bel[k] = np.log(p)
        log_msg.update(new_msg)
        log_bel = new_bel
        if delta < cfg.tolerance and it > 1:
            converged = True
            break
    post = DiscretePosterior(centers, {k: np.exp(v) for k, v in log_bel.items()})
    post.info.update(mmse=estimate_mmse(post), map=estimate_map(post),
                     iterations=it, converged=converged, damping=damping)
    return post


@dataclass
class ParticleBelief:
    particles: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.particles = np.asarray(self.particles, float)
        self.weights = np.asarray(self.weights, float)
        if len(self.particles) < 1 or len(self.weights) != len(self.particles):
            raise ValueError("need one weight per particle and at least one particle")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be non-negative and sum to one")

    def mean(self):
        return self.weights @ self.particles


def silverman_bandwidth(points, weights=None):
    """Per-dimension Silverman bandwidth of a (weighted) sample."""
    x = np.asarray(points, float)
    n, d = x.shape
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, float)
    mu = w @ x
    sd = np.sqrt(np.maximum(w @ (x - mu) ** 2, 0.0))
    n_eff = 1.0 / np.sum(w ** 2)
    h = sd * (4.0 / ((d + 2) * n_eff)) ** (1.0 / (d + 4))
    return np.maximum(h, 1e-9)


def _kde_logpdf(x, samples, h, weights=None):
    z = (x[:, None, :] - samples[None, :, :]) / h
    logk = -0.5 * np.sum(z * z, axis=2) - np.sum(np.log(h)) - 0.5 * x.shape[1] * np.log(2 * np.pi)
    if weights is None:
        return logsumexp(logk, axis=1) - np.log(len(samples))
    return logsumexp(logk, axis=1, b=weights[None, :])


def _shell_log_area(rho, d):
    if d == 2:
        return np.log(2 * np.pi * rho)
    return np.log(4 * np.pi * rho ** 2)


def _radius_spread(likelihood, r):
    return likelihood.sigma * r if likelihood.model == "multiplicative" else likelihood.sigma


def _random_directions(rng, n, d):
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


_IS_STAGES = 4


def _systematic(rng, w, n):
    u = (rng.uniform() + np.arange(n)) / n
    return np.minimum(np.searchsorted(np.cumsum(w), u), n - 1)


def run_nbp(scenario: NetworkScenario, ranges: RangeSet, prior: GridPrior,
            likelihood: RangeLikelihood, n_particles: int = 1000,
            config: Optional[BPConfig] = None, seed: int = 0) -> dict:
    """Nonparametric (particle) belief propagation.

    Per iteration and agent, particles are drawn from an equal mixture of
    proposals: a ring around every anchor neighbour, a Silverman-bandwidth
    KDE of every agent neighbour's message samples (its particles pushed
    out by a sampled range in a random direction) and, after the first
    step, a KDE of the agent's own belief. Importance weights are the
    target (uniform prior on the grid box times anchor likelihoods times
    KDE message densities) over the mixture density. When the effective
    sample size falls below n/10 the draw is repeated (up to three times)
    from an even mix of those proposals and a KDE of the current weighted
    sample, with bandwidth at least the narrowest anchor range spread, so
    sharp ring intersections are found without a huge particle count. The
    weighted mean is
    the MMSE estimate; the set is then systematically resampled to equal
    weights.

    Returns a dict with ``beliefs`` (id -> ParticleBelief), ``mmse``
    (id -> position) and ``ess`` (id -> last effective sample size).

    Raises:
        ParticleCollapse: effective sample size below 2.
    """
    if n_particles < 50:
        raise ValueError("n_particles must be at least 50")
    cfg = config or BPConfig(max_iterations=5)
    rng = make_rng(seed, 11)
    d = scenario.dim
    n = int(n_particles)
    lo, hi = np.asarray(prior.lower, float), np.asarray(prior.upper, float)
    log_box = -np.sum(np.log(hi - lo))
    anchor_terms, pairs = _split_edges(scenario, ranges)
    agent_nbrs = {int(k): [] for k in scenario.agent_ids}
    for i, j, r in pairs:
        agent_nbrs[i].append((j, r))
        agent_nbrs[j].append((i, r))

    parts = {k: rng.uniform(lo, hi, size=(n, d)) for k in agent_nbrs}
    beliefs, mmse, ess_out = {}, {}, {}
    for it in range(cfg.max_iterations):
        new_parts = {}
        for k in sorted(agent_nbrs):
            comps = []  # (sampler, logdensity)
            for a, r in anchor_terms[k]:
                centre = scenario.positions[a]
                s = _radius_spread(likelihood, r)

                def sample(m, centre=centre, r=r, s=s):
                    rho = np.abs(r + s * rng.standard_normal(m))
                    return centre + rho[:, None] * _random_directions(rng, m, d)

                def logq(x, centre=centre, r=r, s=s):
                    rho = np.maximum(np.linalg.norm(x - centre, axis=1), 1e-12)
                    z = (rho - r) / s
                    lq = -0.5 * z * z - np.log(s * np.sqrt(2 * np.pi))
                    zm = (rho + r) / s  # folded normal from |.|
                    lq = np.logaddexp(lq, -0.5 * zm * zm - np.log(s * np.sqrt(2 * np.pi)))
                    return lq - _shell_log_area(rho, d)

                comps.append((sample, logq))
            msg_logpdf = []
            for j, r in agent_nbrs[k]:
                src = parts[j]
                s = _radius_spread(likelihood, r)
                rho = np.abs(r + s * rng.standard_normal(len(src)))
                msamp = src + rho[:, None] * _random_directions(rng, len(src), d)
                h = silverman_bandwidth(msamp)

                def sample(m, msamp=msamp, h=h):
                    idx = rng.integers(0, len(msamp), m)
                    return msamp[idx] + h * rng.standard_normal((m, d))

                def logq(x, msamp=msamp, h=h):
                    return _kde_logpdf(x, msamp, h)

                comps.append((sample, logq))
                msg_logpdf.append(logq)
            if it > 0 or not comps:
                own = parts[k]
                h = silverman_bandwidth(own)

                def sample(m, own=own, h=h):
                    idx = rng.integers(0, len(own), m)
                    return own[idx] + h * rng.standard_normal((m, d))

                def logq(x, own=own, h=h):
                    return _kde_logpdf(x, own, h)

                comps.append((sample, logq))
            n_base = len(comps)

            def log_target(x):
                inside = np.all((x >= lo) & (x <= hi), axis=1)
                lt = np.where(inside, log_box, -np.inf)
                for a, r in anchor_terms[k]:
                    dd = np.linalg.norm(x - scenario.positions[a], axis=1)
                    lt = lt + likelihood.logpdf(r, dd)
                for lq in msg_logpdf:
                    lt = lt + lq(x)
                return lt

            spreads = [_radius_spread(likelihood, r) for _, r in anchor_terms[k]]
            h_floor = min(spreads) if spreads else 0.0
            mix_w = np.full(len(comps), 1.0 / len(comps))
            for stage in range(_IS_STAGES):
                counts = np.floor(mix_w * n).astype(int)
                counts[: n - counts.sum()] += 1
                x = np.vstack([c[0](m) for c, m in zip(comps, counts) if m > 0])
                log_mix = logsumexp(np.column_stack([c[1](x) for c in comps]), axis=1, b=mix_w)
                lw = log_target(x) - log_mix
                if not np.any(np.isfinite(lw)):
                    raise ParticleCollapse(f"agent {k}: no particle has positive weight")
                w = np.exp(lw - np.max(lw))
                w /= w.sum()
                ess = 1.0 / np.sum(w ** 2)
                if ess >= n / 10 or stage == _IS_STAGES - 1:
                    break
                # refine: add a KDE of the weighted sample to the proposal
                idx, cnt = np.unique(_systematic(rng, w, n), return_counts=True)
                pts, pw = x[idx], cnt / n
                h = np.maximum(silverman_bandwidth(x, w), h_floor)

                def sample(m, pts=pts, pw=pw, h=h):
                    j = rng.choice(len(pts), size=m, p=pw)
                    return pts[j] + h * rng.standard_normal((m, d))

                def logq(x, pts=pts, pw=pw, h=h):
                    return _kde_logpdf(x, pts, h, pw)

                base = comps[:n_base]
                comps = base + [(sample, logq)]
                mix_w = np.concatenate([np.full(len(base), 0.5 / len(base)), [0.5]])
            if ess < 2.0:
                raise ParticleCollapse(f"agent {k}: effective sample size {ess:.2f}")
            mmse[k] = w @ x
            ess_out[k] = float(ess)
            new_parts[k] = x[_systematic(rng, w, n)]
        parts = new_parts
    for k, p in parts.items():
        beliefs[k] = ParticleBelief(p, np.full(len(p), 1.0 / len(p)))
    return {"beliefs": beliefs, "mmse": mmse, "ess": ess_out}
