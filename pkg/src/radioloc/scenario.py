"""Network scenarios, range measurements and their JSON form.

Node ids are row indices into ``NetworkScenario.positions``: anchors occupy
ids ``0 .. n_anchors - 1`` and agents follow. Edges are stored once with
``i < j``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ScenarioError

RANGE_FLOOR = 1e-6

SCENARIO_SCHEMA = "radioloc.scenario/1"
RANGES_SCHEMA = "radioloc.ranges/1"

# sub-stream keys under one user seed
_STREAM_SCENARIO = 0
_STREAM_NOISE = 1


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """PCG64 generator for an independent sub-stream of ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream),))
    return np.random.Generator(np.random.PCG64(ss))


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


def _normalize_edges(edges, n_nodes):
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if e.size and (e.min() < 0 or e.max() >= n_nodes):
        raise ScenarioError("edge refers to an unknown node id")
    if np.any(e[:, 0] == e[:, 1]):
        raise ScenarioError("self-loops are not allowed")
    e = np.sort(e, axis=1)
    e = np.unique(e, axis=0)
    return e


def threshold_edges(positions, connectivity_range):
    """All pairs ``i < j`` whose true distance is within ``connectivity_range``."""
    pos = np.asarray(positions, dtype=float)
    n = len(pos)
    ii, jj = np.triu_indices(n, k=1)
    d = np.linalg.norm(pos[ii] - pos[jj], axis=1)
    keep = d <= connectivity_range
    return np.column_stack([ii[keep], jj[keep]]).astype(np.int64)


@dataclass(frozen=True)
class NetworkScenario:
    positions: np.ndarray
    n_anchors: int
    connectivity_range: float
    edges: np.ndarray
    seed: Optional[int] = None
    has_truth: bool = True

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] not in (2, 3):
            raise ScenarioError("positions must be an (n, 2) or (n, 3) array")
        if not np.all(np.isfinite(pos)):
            raise ScenarioError("positions must be finite")
        if not 0 <= self.n_anchors <= len(pos):
            raise ScenarioError("n_anchors out of range")
        if not self.connectivity_range > 0:
            raise ScenarioError("connectivity_range must be positive")
        object.__setattr__(self, "positions", _frozen(pos))
        edges = _normalize_edges(self.edges, len(pos))
        edges.setflags(write=False)
        object.__setattr__(self, "edges", edges)

    @classmethod
    def from_positions(cls, anchors, agents, connectivity_range=np.inf,
                       edges=None, seed=None):
        """Build a scenario from anchor and agent coordinates.

        Without explicit ``edges`` the graph is the range-threshold graph.
        """
        anchors = np.atleast_2d(np.asarray(anchors, dtype=float))
        agents = np.asarray(agents, dtype=float)
        if agents.size == 0:
            agents = agents.reshape(0, anchors.shape[1])
        agents = np.atleast_2d(agents)
        pos = np.vstack([anchors, agents])
        if edges is None:
            edges = threshold_edges(pos, connectivity_range)
        return cls(pos, len(anchors), float(connectivity_range), edges, seed)

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def n_nodes(self) -> int:
        return self.positions.shape[0]

    @property
    def n_agents(self) -> int:
        return self.n_nodes - self.n_anchors

    @property
    def anchor_ids(self) -> np.ndarray:
        return np.arange(self.n_anchors)

    @property
    def agent_ids(self) -> np.ndarray:
        return np.arange(self.n_anchors, self.n_nodes)

    @property
    def anchors(self) -> np.ndarray:
        return self.positions[: self.n_anchors]

    @property
    def agents(self) -> np.ndarray:
        return self.positions[self.n_anchors:]

    def is_anchor(self, node) -> np.ndarray:
        return np.asarray(node) < self.n_anchors

    def true_distances(self, edges=None) -> np.ndarray:
        e = self.edges if edges is None else np.asarray(edges).reshape(-1, 2)
        return np.linalg.norm(self.positions[e[:, 0]] - self.positions[e[:, 1]], axis=1)

    def degree(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.n_nodes)

    def neighbors(self, node: int) -> np.ndarray:
        e = self.edges
        nb = np.concatenate([e[e[:, 0] == node, 1], e[e[:, 1] == node, 0]])
        return np.sort(nb)

    def with_edges(self, edges) -> "NetworkScenario":
        return NetworkScenario(self.positions, self.n_anchors, self.connectivity_range,
                               edges, self.seed, self.has_truth)

    def fully_connected(self) -> "NetworkScenario":
        """Same nodes with every pair connected."""
        ii, jj = np.triu_indices(self.n_nodes, k=1)
        return NetworkScenario(self.positions, self.n_anchors, np.inf,
                               np.column_stack([ii, jj]), self.seed, self.has_truth)

    def to_dict(self) -> dict:
        nodes = []
        for i, p in enumerate(self.positions):
            role = "anchor" if i < self.n_anchors else "agent"
            nodes.append({"id": i, "role": role, "coords": [float(c) for c in p]})
        rng = self.connectivity_range
        return {
            "schema": SCENARIO_SCHEMA,
            "dim": self.dim,
            "connectivity_range": None if not np.isfinite(rng) else float(rng),
            "seed": self.seed,
            "nodes": nodes,
            "edges": [[int(i), int(j)] for i, j in self.edges],
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, data: dict) -> "NetworkScenario":
        if data.get("schema", SCENARIO_SCHEMA) != SCENARIO_SCHEMA:
            raise ScenarioError(f"unsupported schema {data.get('schema')!r}")
        nodes = sorted(data["nodes"], key=lambda n: n["id"])
        ids = [n["id"] for n in nodes]
        if ids != list(range(len(nodes))):
            raise ScenarioError("node ids must be 0..n-1 and unique")
        roles = [n["role"] for n in nodes]
        n_anchors = roles.count("anchor")
        if roles != ["anchor"] * n_anchors + ["agent"] * (len(roles) - n_anchors):
            raise ScenarioError("anchors must precede agents in id order")
        pos = np.array([n["coords"] for n in nodes], dtype=float)
        rng = data.get("connectivity_range")
        rng = np.inf if rng is None else float(rng)
        return cls(pos, n_anchors, rng, np.array(data["edges"], dtype=np.int64).reshape(-1, 2),
                   data.get("seed"))

    @classmethod
    def from_json(cls, text: str) -> "NetworkScenario":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class RangeSet:
    """Noisy range per undirected edge (``i < j``)."""

    edges: np.ndarray
    values: np.ndarray
    sigma: float = 0.0
    seed: Optional[int] = None
    n_clamped: int = 0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        v = np.asarray(self.values, dtype=float).ravel()
        if len(e) != len(v):
            raise ScenarioError("edges and values differ in length")
        if np.any(e[:, 0] >= e[:, 1]):
            raise ScenarioError("range edges must be stored with i < j")
        if np.any(~(v > 0)):
            raise ScenarioError("every range must be positive")
        object.__setattr__(self, "edges", _frozen(e, np.int64))
        object.__setattr__(self, "values", _frozen(v))

    def __len__(self):
        return len(self.values)

    def as_dict(self) -> dict:
        return {(int(i), int(j)): float(r) for (i, j), r in zip(self.edges, self.values)}

    def get(self, i: int, j: int) -> float:
        a, b = (i, j) if i < j else (j, i)
        hit = np.flatnonzero((self.edges[:, 0] == a) & (self.edges[:, 1] == b))
        if not len(hit):
            raise KeyError((i, j))
        return float(self.values[hit[0]])

    def select(self, mask) -> "RangeSet":
        mask = np.asarray(mask)
        return RangeSet(self.edges[mask], self.values[mask], self.sigma, self.seed,
                        self.n_clamped, dict(self.meta))

    def restrict_to(self, edges) -> "RangeSet":
        """Keep only measurements on the given edges."""
        want = {tuple(sorted(map(int, e))) for e in np.asarray(edges).reshape(-1, 2)}
        mask = [(int(i), int(j)) in want for i, j in self.edges]
        return self.select(np.array(mask, dtype=bool))

    def to_dict(self) -> dict:
        return {
            "schema": RANGES_SCHEMA,
            "sigma": float(self.sigma),
            "seed": self.seed,
            "n_clamped": int(self.n_clamped),
            "ranges": [[int(i), int(j), float(r)] for (i, j), r in zip(self.edges, self.values)],
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, data: dict) -> "RangeSet":
        if data.get("schema", RANGES_SCHEMA) != RANGES_SCHEMA:
            raise ScenarioError(f"unsupported schema {data.get('schema')!r}")
        rows = np.array(data["ranges"], dtype=float).reshape(-1, 3)
        return cls(rows[:, :2].astype(np.int64), rows[:, 2], data.get("sigma", 0.0),
                   data.get("seed"), data.get("n_clamped", 0))

    @classmethod
    def from_json(cls, text: str) -> "RangeSet":
        return cls.from_dict(json.loads(text))


def _perimeter_points(s, side):
    """Map arclength ``s`` in [0, 4*side) onto the square boundary."""
    s = np.mod(s, 4 * side)
    k = np.floor(s / side).astype(int)
    t = s - k * side
    out = np.empty((len(s), 2))
    out[k == 0] = np.column_stack([t[k == 0], np.zeros((k == 0).sum())])
    out[k == 1] = np.column_stack([np.full((k == 1).sum(), side), t[k == 1]])
    out[k == 2] = np.column_stack([side - t[k == 2], np.full((k == 2).sum(), side)])
    out[k == 3] = np.column_stack([np.zeros((k == 3).sum()), side - t[k == 3]])
    return out


def generate_benchmark_scenario(n_anchors=12, n_agents=50, side=1.0, comm_range=0.3,
                                seed=1, require_connected=False) -> NetworkScenario:
    """Random square network: agents inside, anchors on the boundary.

    Anchors are drawn uniformly by arclength along the perimeter and agents
    uniformly in ``[0, side]^2``. Edges join every pair of nodes whose true
    distance is at most ``comm_range``.

    Raises:
        ScenarioError: invalid sizes, or ``require_connected`` is set and
            some agent ends up without any edge.
    """
    if n_anchors < 3:
        raise ScenarioError("need at least 3 anchors for 2D alignment")
    if n_agents < 0:
        raise ScenarioError("n_agents must be non-negative")
    if not side > 0 or not comm_range > 0:
        raise ScenarioError("side and comm_range must be positive")
    rng = make_rng(seed, _STREAM_SCENARIO)
    anchors = _perimeter_points(rng.uniform(0.0, 4 * side, n_anchors), side)
    agents = rng.uniform(0.0, side, size=(n_agents, 2))
    sc = NetworkScenario.from_positions(anchors, agents, comm_range, seed=int(seed))
    if require_connected and n_agents:
        deg = sc.degree()[sc.n_anchors:]
        if np.any(deg == 0):
            lonely = (np.flatnonzero(deg == 0) + sc.n_anchors).tolist()
            raise ScenarioError(f"agents without edges: {lonely}")
    return sc


def true_distance_map(scenario: NetworkScenario) -> dict:
    d = scenario.true_distances()
    return {(int(i), int(j)): float(v) for (i, j), v in zip(scenario.edges, d)}


def synthesize_ranges(scenario: NetworkScenario, sigma: float, seed: int,
                      edges=None) -> RangeSet:
    """Multiplicative-noise ranges ``r = d * (1 + N(0, sigma))`` per edge.

    One normal draw is consumed per edge, in sorted edge order, from the
    noise sub-stream of ``seed``. Ranges are clamped to ``RANGE_FLOOR``.
    """
    if sigma < 0:
        raise ScenarioError("sigma must be non-negative")
    e = scenario.edges if edges is None else _normalize_edges(edges, scenario.n_nodes)
    if len(e) == 0:
        raise ScenarioError("scenario has no edges to measure")
    d = scenario.true_distances(e)
    noise = make_rng(seed, _STREAM_NOISE).standard_normal(len(e))
    r = d * (1.0 + sigma * noise)
    low = r < RANGE_FLOOR
    r = np.where(low, RANGE_FLOOR, r)
    return RangeSet(e, r, float(sigma), int(seed), int(low.sum()))
