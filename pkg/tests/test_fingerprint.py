import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from radioloc.errors import EmptyMap, NoSharedAps
from radioloc.fingerprint import (METRICS, Fingerprint, RadioMap, classical_locate, matched_ranks,
                                  rank_distance, rank_transform, rbf_distances, rbf_locate,
                                  synthetic_radio_map)

APS = np.array([[0.0, 0.0], [10.0, 0.0], [10.0, 3.0], [0.0, 3.0], [5.0, 1.5]])


def grid_map():
    xs, ys = np.meshgrid(np.arange(11.0), np.arange(4.0), indexing="ij")
    locs = np.column_stack([xs.ravel(), ys.ravel()])
    return synthetic_radio_map(locs, APS), locs


def small_map():
    return RadioMap((
        Fingerprint((0.0, 0.0), {"a": -40, "b": -60, "c": -70}),
        Fingerprint((4.0, 0.0), {"a": -70, "b": -45, "c": -60}),
        Fingerprint((0.0, 4.0), {"a": -60, "b": -75, "c": -42}),
        Fingerprint((4.0, 4.0), {"a": -55, "b": -50, "c": -65}),
    ))


def test_classical_exact_and_midpoint():
    m = small_map()
    for e in m.entries:
        assert np.array_equal(classical_locate(m, e.readings), e.location)
    m2 = RadioMap((Fingerprint((0.0, 0.0), {"a": -40}), Fingerprint((2.0, 0.0), {"a": -60}),
                   Fingerprint((9.0, 9.0), {"a": -90})))
    assert np.allclose(classical_locate(m2, {"a": -50}, k=2), [1.0, 0.0])


def test_classical_missing_value_and_errors():
    m = RadioMap((Fingerprint((0.0, 0.0), {"a": -50}), Fingerprint((1.0, 0.0), {"a": -50, "b": -95})))
    # the first entry lacks b, which then reads -100
    assert np.allclose(classical_locate(m, {"a": -50, "b": -100}), [0.0, 0.0])
    assert np.allclose(classical_locate(m, {"a": -50, "b": -96}), [1.0, 0.0])
    assert np.allclose(classical_locate(m, {"a": -50, "b": -99}, missing_value=-90), [1.0, 0.0])
    with pytest.raises(EmptyMap):
        classical_locate(RadioMap(), {"a": -50})
    with pytest.raises(EmptyMap):
        rbf_locate(RadioMap(), {"a": -50})
    with pytest.raises(ValueError):
        classical_locate(m, {"a": -50}, k=0)


def test_rank_transform_examples():
    assert rank_transform({"a": -40, "b": -70, "c": -55}) == {"a": 1, "c": 2, "b": 3}
    assert rank_transform({"z": -50, "y": -50, "x": -60}) == {"y": 1, "z": 2, "x": 3}


def test_rank_distance_examples():
    assert rank_distance([1, 2, 3], [3, 2, 1], "spearman") == 8.0
    assert rank_distance([1, 2, 3], [1, 3, 2], "hamming") == 2.0
    assert rank_distance([1, 2], [2, 1], "canberra") == pytest.approx(2 / 3)
    with pytest.raises(ValueError):
        rank_distance([1], [1], "cosine")


@pytest.mark.parametrize("n", range(2, 7))
def test_spearman_reversal_is_maximal(n):
    import itertools
    ident = np.arange(1, n + 1)
    best = max(rank_distance(ident, p, "spearman") for p in itertools.permutations(ident))
    assert rank_distance(ident, ident[::-1], "spearman") == best == n * (n * n - 1) / 3


def test_matched_ranks_missing_ap():
    e = Fingerprint((0, 0), {"a": -60, "b": -40, "d": -30})
    q, m, n = matched_ranks(rank_transform({"a": -50, "b": -55, "c": -70}), e)
    assert n == 2
    assert q.tolist() == [1, 2, 3] and m.tolist() == [2, 1, 3]


def test_spearman_hand_table():
    m = small_map()
    d = rbf_distances(m, {"a": -45, "b": -65, "c": -68}, "spearman")
    # query ranks a1 b2 c3; entry ranks: (1,2,3), (3,1,2), (2,3,1), (2,1,3)
    assert d.tolist() == [0.0, 6.0, 6.0, 2.0]
    assert np.array_equal(rbf_locate(m, {"a": -45, "b": -65, "c": -68}), [0.0, 0.0])


def test_no_shared_aps():
    with pytest.raises(NoSharedAps):
        rbf_locate(small_map(), {"zz": -50})


def test_grid_map_exact_recovery():
    m, locs = grid_map()
    assert len(m) == 44
    for i, e in enumerate(m.entries):
        assert np.array_equal(classical_locate(m, e.readings), locs[i])
        d = rbf_distances(m, e.readings)
        assert d[i] == 0.0


@pytest.mark.parametrize("metric", METRICS)
def test_uniform_offset_invariance(metric):
    m, _ = grid_map()
    rng = np.random.default_rng(3)
    for _ in range(10):
        q = {f"ap{n:02d}": v for n, v in enumerate(rng.uniform(-90, -30, 5))}
        shifted = {a: v - 7.0 for a, v in q.items()}
        assert np.array_equal(rbf_locate(m, q, metric, k=3), rbf_locate(m, shifted, metric, k=3))


@settings(max_examples=50, deadline=None)
@given(vals=st.lists(st.floats(-95, -25), min_size=5, max_size=5, unique=True),
       gain=st.floats(0.1, 10.0), offset=st.floats(-40, 40), cube=st.booleans())
def test_monotone_transform_invariance(vals, gain, offset, cube):
    m, _ = grid_map()
    q = {f"ap{n:02d}": v for n, v in enumerate(vals)}

    def g(v):
        v = gain * v + offset
        return v ** 3 if cube else v
    t = {a: g(v) for a, v in q.items()}
    if len(set(t.values())) < len(t):
        return
    for metric in METRICS:
        assert np.array_equal(rbf_locate(m, q, metric), rbf_locate(m, t, metric))


def test_tie_seed():
    m = RadioMap((Fingerprint((0.0, 0.0), {"a": -40, "b": -60}),
                  Fingerprint((5.0, 0.0), {"a": -30, "b": -70})))
    q = {"a": -50, "b": -55}
    assert np.array_equal(rbf_locate(m, q), [0.0, 0.0])
    picks = {tuple(rbf_locate(m, q, tie_seed=s)) for s in range(20)}
    assert picks == {(0.0, 0.0), (5.0, 0.0)}
    assert np.array_equal(rbf_locate(m, q, tie_seed=4), rbf_locate(m, q, tie_seed=4))


def test_csv_and_json_roundtrip(tmp_path):
    m, _ = grid_map()
    p = tmp_path / "map.csv"
    m.to_csv(p)
    m2 = RadioMap.from_csv(p)
    m3 = RadioMap.from_json(m.to_json())
    for other in (m2, m3):
        assert len(other) == len(m) and other.ap_universe == m.ap_universe
        for a, b in zip(m.entries, other.entries):
            assert np.array_equal(a.location, b.location) and a.readings == b.readings


def test_duplicate_reading_rejected():
    with pytest.raises(ValueError):
        RadioMap.from_rows([((0, 0), "a", -50), ((0, 0), "a", -51)])
