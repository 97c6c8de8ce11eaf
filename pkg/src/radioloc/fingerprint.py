"""RSSI fingerprinting: radio map storage, Euclidean k-NN matching and
rank-based fingerprinting (RBF).

RBF compares the order of access points by signal strength instead of the
raw dBm values, so any strictly increasing distortion of a device's RSSI
scale leaves its estimate unchanged.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import EmptyMap, NoSharedAps
from .scenario import make_rng

DEFAULT_MISSING_DBM = -100.0
METRICS = ("spearman", "canberra", "hamming")


@dataclass(frozen=True)
class Fingerprint:
    location: np.ndarray
    readings: dict  # ap id -> rssi dBm

    def __post_init__(self):
        if len(self.readings) < 1:
            raise ValueError("a fingerprint needs at least one reading")
        object.__setattr__(self, "location", np.asarray(self.location, float))
        object.__setattr__(self, "readings", {str(k): float(v) for k, v in self.readings.items()})


@dataclass(frozen=True)
class RadioMap:
    entries: tuple = ()
    ap_universe: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        ents = tuple(self.entries)
        object.__setattr__(self, "entries", ents)
        universe = frozenset(self.ap_universe) | frozenset(
            ap for e in ents for ap in e.readings)
        object.__setattr__(self, "ap_universe", universe)

    def __len__(self):
        return len(self.entries)

    @classmethod
    def from_rows(cls, rows):
        """Build from ``(location tuple, ap_id, rssi)`` rows; rows sharing a
        location (in order of first appearance) form one fingerprint."""
        groups = {}
        for loc, ap, rssi in rows:
            key = tuple(float(v) for v in loc)
            g = groups.setdefault(key, {})
            if str(ap) in g:
                raise ValueError(f"duplicate reading for AP {ap} at {key}")
            g[str(ap)] = float(rssi)
        return cls(tuple(Fingerprint(np.array(k), v) for k, v in groups.items()))

    @classmethod
    def from_csv(cls, path):
        """Load ``x, y[, z], ap_id, rssi_dbm`` rows (one reading per row)."""
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            cols = [c for c in ("x", "y", "z") if c in reader.fieldnames]
            if cols[:2] != ["x", "y"]:
                raise ValueError("radio map CSV needs x and y columns")
            rows = [([r[c] for c in cols], r["ap_id"], r["rssi_dbm"]) for r in reader]
        return cls.from_rows(rows)

    def to_csv(self, path):
        d = max((len(e.location) for e in self.entries), default=2)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "z"][:d] + ["ap_id", "rssi_dbm"])
            for e in self.entries:
                for ap, v in e.readings.items():
                    w.writerow([repr(float(c)) for c in e.location] + [ap, repr(v)])

    def to_dict(self):
        return {"schema": "radioloc.radiomap/1",
                "entries": [{"location": [float(c) for c in e.location], "readings": e.readings}
                            for e in self.entries]}

    @classmethod
    def from_dict(cls, data):
        return cls(tuple(Fingerprint(np.array(e["location"], float), e["readings"])
                         for e in data["entries"]))

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _knn_mean(map_, dist, k, rng=None):
    dist = np.asarray(dist, float)
    if rng is None:
        order = np.argsort(dist, kind="stable")  # ties: insertion order
    else:
        order = np.lexsort((rng.permutation(len(dist)), dist))
    sel = order[: min(k, len(dist))]
    return np.mean([map_.entries[i].location for i in sel], axis=0), sel


def classical_locate(map_: RadioMap, query: Mapping, k=1, missing_value=DEFAULT_MISSING_DBM):
    """Mean location of the ``k`` fingerprints nearest in Euclidean RSSI distance.

    The distance runs over the union of query and entry APs; an AP missing
    on either side reads ``missing_value``. Ties keep insertion order.
    """
    if len(map_) == 0:
        raise EmptyMap("radio map has no fingerprints")
    if k < 1:
        raise ValueError("k must be at least 1")
    if not query:
        raise ValueError("query has no readings")
    q = {str(a): float(v) for a, v in query.items()}
    dist = []
    for e in map_.entries:
        aps = sorted(set(q) | set(e.readings))
        a = np.array([q.get(ap, missing_value) for ap in aps])
        b = np.array([e.readings.get(ap, missing_value) for ap in aps])
        dist.append(np.sqrt(np.sum((a - b) ** 2)))
    loc, _ = _knn_mean(map_, dist, k)
    return loc


def rank_transform(readings: Mapping) -> dict:
    """Rank APs by descending RSSI (1 = strongest); equal RSSI ranks by AP id."""
    if not readings:
        raise ValueError("no readings to rank")
    items = sorted(((str(a), float(v)) for a, v in readings.items()), key=lambda t: (-t[1], t[0]))
    return {ap: n + 1 for n, (ap, _) in enumerate(items)}


def rank_distance(a, b, metric="spearman"):
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if metric == "spearman":
        return float(np.sum((a - b) ** 2))
    if metric == "canberra":
        den = np.abs(a) + np.abs(b)
        return float(np.sum(np.abs(a - b) / np.where(den > 0, den, 1.0)))
    if metric == "hamming":
        return float(np.count_nonzero(a != b))
    raise ValueError(f"unknown metric {metric!r}; choose from {METRICS}")


def matched_ranks(query_ranks: dict, entry: Fingerprint):
    """Query and entry rank vectors indexed by the query's APs (in query rank order).

    APs shared with the entry are ranked 1..n_shared by the entry's RSSI;
    query APs the entry lacks get ``n_shared + 1``. Entry APs unseen by the
    query play no part. Returns ``(q, m, n_shared)``.
    """
    aps = sorted(query_ranks, key=query_ranks.get)
    shared = {ap: entry.readings[ap] for ap in aps if ap in entry.readings}
    n_shared = len(shared)
    er = rank_transform(shared) if shared else {}
    q = np.array([query_ranks[ap] for ap in aps], float)
    m = np.array([er.get(ap, n_shared + 1) for ap in aps], float)
    return q, m, n_shared


def rbf_distances(map_: RadioMap, query: Mapping, metric="spearman"):
    """Rank distance from the query to every entry (``inf`` with no shared AP)."""
    if len(map_) == 0:
        raise EmptyMap("radio map has no fingerprints")
    qr = rank_transform(query)
    out = np.full(len(map_), np.inf)
    for i, e in enumerate(map_.entries):
        q, m, n_shared = matched_ranks(qr, e)
        if n_shared:
            out[i] = rank_distance(q, m, metric)
    if not np.any(np.isfinite(out)):
        raise NoSharedAps("query shares no access point with the radio map")
    return out


def rbf_locate(map_: RadioMap, query: Mapping, metric="spearman", k=1, tie_seed=None):
    """Rank-based fingerprint estimate: mean location of the ``k`` closest entries.

    Ties keep insertion order unless ``tie_seed`` is given, in which case
    they are broken by a seeded random permutation.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    dist = rbf_distances(map_, query, metric)
    finite = np.isfinite(dist)
    rng = None if tie_seed is None else make_rng(tie_seed, 31)
    idx = np.flatnonzero(finite)
    loc, _ = _knn_mean(RadioMap(tuple(map_.entries[i] for i in idx)), dist[idx], k, rng)
    return loc


def synthetic_radio_map(locations, ap_positions, p0=-30.0, path_loss_exp=2.5, d0=1.0):
    """Noise-free log-distance radio map, handy for tests and demos."""
    ents = []
    for loc in np.asarray(locations, float):
        rd = {}
        for n, ap in enumerate(np.asarray(ap_positions, float)):
            d = max(np.linalg.norm(loc - ap), 1e-3)
            rd[f"ap{n:02d}"] = p0 - 10 * path_loss_exp * np.log10(d / d0)
        ents.append(Fingerprint(loc, rd))
    return RadioMap(tuple(ents))
