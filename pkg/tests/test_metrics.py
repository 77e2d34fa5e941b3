"""Metric tests against hand arithmetic, a Floyd-Warshall oracle, and
the per-episode ordering / scale-invariance properties."""

import math

import numpy as np
import pytest

from xlnav import metrics as M
from xlnav import world as W


def floyd_warshall(world):
    n = world.n_viewpoints
    dist = np.full((n, n), np.inf)
    np.fill_diagonal(dist, 0.0)
    for a, b in world.edges():
        dist[a, b] = dist[b, a] = world.edge_length(a, b)
    for k in range(n):
        dist = np.minimum(dist, dist[:, k, None] + dist[None, k, :])
    return dist


def hand_world():
    """0 at the origin, 1 two meters east, 2 two meters north of 1.
    Geodesics: d(0,1)=2, d(1,2)=2, d(0,2)=4."""
    coords = {0: (0.0, 0.0), 1: (2.0, 0.0), 2: (2.0, 2.0)}
    world = W.World(seed=0, K=8, n_categories=4, n_attributes=3,
                    coords=coords, neighbors={0: {}, 1: {}, 2: {}},
                    landmarks={0: [], 1: [], 2: []})
    for a, b in [(0, 1), (1, 2)]:
        world.neighbors[a][world.sector_of(a, b)] = b
        world.neighbors[b][world.sector_of(b, a)] = a
    return world


def scaled_copy(world, factor):
    coords = {v: (x * factor, y * factor)
              for v, (x, y) in world.coords.items()}
    return W.World(seed=world.seed, K=world.K,
                   n_categories=world.n_categories,
                   n_attributes=world.n_attributes, coords=coords,
                   neighbors=world.neighbors, landmarks=world.landmarks)


def random_episode(world, rng):
    """A random walk prediction plus a shortest-path reference."""
    spec = W.sample_trajectory(world, rng)
    pose = W.Pose(spec.path[0], spec.start_heading)
    predicted = [pose.viewpoint]
    for _ in range(rng.integers(0, 9)):
        acts = [a for a in W.navigable_actions(world, pose)
                if not a.is_stop]
        pose = W.step(world, pose, acts[rng.integers(len(acts))])
        predicted.append(pose.viewpoint)
    return M.TrajectoryRecord(predicted=tuple(predicted),
                              reference=tuple(spec.path), goal=spec.goal)


# -------------------------------------------------------------- basics

def test_path_length_trivial_cases():
    world = hand_world()
    assert M.path_length(world, (1,)) == 0.0
    assert M.path_length(world, (0, 1)) == 2.0


def test_path_length_hand_sum_seed7():
    world = W.generate_world(7, 40)
    path, _ = W.shortest_path(world, 0, 5)
    path = path[:4]
    expected = 0.0
    for a, b in zip(path, path[1:]):
        (ax, ay), (bx, by) = world.coords[a], world.coords[b]
        expected += math.hypot(bx - ax, by - ay)
    assert M.path_length(world, path) == pytest.approx(expected,
                                                       abs=1e-12)


def test_path_length_rejects_non_adjacent():
    world = hand_world()
    with pytest.raises(ValueError):
        M.path_length(world, (0, 2))


def test_nav_error_against_floyd_warshall():
    world = W.generate_world(11, 30)
    oracle = floyd_warshall(world)
    rng = np.random.default_rng(0)
    for _ in range(50):
        a, b = rng.integers(0, 30, size=2)
        assert M.nav_error(world, int(a), int(b)) == pytest.approx(
            oracle[a, b], abs=1e-12)


def test_success_boundary_is_strict():
    assert M.success(0.0) == 1.0
    assert M.success(2.999999) == 1.0
    assert M.success(3.0) == 0.0


def test_oracle_success_through_goal():
    # The walk visits the goal (node 1) and leaves: OSR hits, SR misses
    # because the final node is 4 m away.
    world = hand_world()
    rec = M.TrajectoryRecord(predicted=(0, 1, 2), reference=(0, 1),
                             goal=1)
    m = M.evaluate_trajectory(world, rec)
    assert m.OSR == 1.0
    assert m.NE == pytest.approx(2.0)
    assert m.SR == 1.0  # 2 m < 3 m radius: still a success here
    far = M.TrajectoryRecord(predicted=(0, 1, 2), reference=(1, 0),
                             goal=0, radius=1.0)
    m2 = M.evaluate_trajectory(world, far)
    assert m2.OSR == 1.0 and m2.SR == 0.0


def test_spl_hand_values():
    assert M.spl(1.0, 6.0, 6.0) == 1.0
    assert M.spl(0.0, 2.0, 6.0) == 0.0
    assert M.spl(1.0, 8.0, 6.0) == pytest.approx(0.75)
    # shorter-than-geodesic predictions must not exceed 1
    assert M.spl(1.0, 2.0, 6.0) == 1.0
    with pytest.raises(ValueError):
        M.spl(1.0, 2.0, 0.0)


# ------------------------------------------------------------------ CLS

def test_cls_identity():
    world = W.generate_world(7, 40)
    rng = np.random.default_rng(1)
    for _ in range(10):
        spec = W.sample_trajectory(world, rng)
        assert abs(M.cls_score(world, spec.path, spec.path) - 1.0) < 1e-12


def test_cls_hand_computation():
    # reference (0,1,2), predicted (0,1): nodes 0 and 1 are covered at
    # distance 0, node 2 sits 2 m from the nearest predicted node.
    world = hand_world()
    pc = (1.0 + 1.0 + math.exp(-2.0 / 3.0)) / 3.0
    epl = pc * 4.0       # reference length = 2 + 2
    pl = 2.0             # predicted length
    ls = epl / (epl + abs(epl - pl))
    assert M.cls_score(world, (0, 1), (0, 1, 2)) == pytest.approx(
        pc * ls, abs=1e-12)


def test_cls_far_single_node_near_zero():
    # Predicted path = the single node 0; reference = the tail of the
    # path to the farthest node, so every reference node is remote.
    world = W.generate_world(7, 60)
    oracle = floyd_warshall(world)
    far = int(np.argmax(oracle[0]))
    path, _ = W.shortest_path(world, 0, far)
    reference = tuple(path[-3:])
    assert all(oracle[0, r] > 10.0 for r in reference)
    assert M.cls_score(world, (0,), reference) < 0.05


# ------------------------------------------------------------ properties

def test_ordering_and_ranges_on_random_episodes():
    rng = np.random.default_rng(2026)
    checked = 0
    for wseed in range(10):
        world = W.generate_world(wseed, 40)
        for _ in range(100):
            rec = random_episode(world, rng)
            m = M.evaluate_trajectory(world, rec)
            assert m.SPL <= m.SR <= m.OSR
            assert 0.0 <= m.SPL <= 1.0 and 0.0 <= m.CLS <= 1.0
            assert all(np.isfinite(v) for v in m.as_dict().values())
            checked += 1
    assert checked == 1000


def test_scale_invariance():
    rng = np.random.default_rng(5)
    world = W.generate_world(9, 40)
    factor = 3.7
    big = scaled_copy(world, factor)
    for _ in range(25):
        rec = random_episode(world, rng)
        scaled = M.TrajectoryRecord(predicted=rec.predicted,
                                    reference=rec.reference,
                                    goal=rec.goal,
                                    radius=rec.radius * factor)
        a = M.evaluate_trajectory(world, rec)
        b = M.evaluate_trajectory(big, scaled)
        assert b.PL == pytest.approx(a.PL * factor, rel=1e-12)
        assert b.NE == pytest.approx(a.NE * factor, rel=1e-12)
        assert (b.SR, b.OSR) == (a.SR, a.OSR)
        assert b.SPL == pytest.approx(a.SPL, abs=1e-12)
        assert b.CLS == pytest.approx(a.CLS, abs=1e-12)


# ------------------------------------------------------------- aggregate

def mk(**kw):
    base = dict(PL=1.0, NE=0.0, SR=1.0, OSR=1.0, SPL=1.0, CLS=1.0)
    base.update(kw)
    return M.TrajectoryMetrics(**base)


def test_aggregate_single_episode():
    rep = M.aggregate("val_seen", {0: [mk(SPL=0.5)]})
    assert rep.mean["SPL"] == 0.5
    assert rep.std["SPL"] == 0.0
    assert rep.episodes == 1


def test_aggregate_hand_arithmetic():
    # per-seed SPL means: .5, .7, .9 -> mean .7, population std
    # sqrt(((.2)^2 + 0 + (.2)^2)/3)
    per_seed = {
        1: [mk(SPL=0.4), mk(SPL=0.6)],
        2: [mk(SPL=0.7)],
        3: [mk(SPL=0.8), mk(SPL=1.0)],
    }
    rep = M.aggregate("val_unseen", per_seed)
    assert rep.mean["SPL"] == pytest.approx(0.7, abs=1e-12)
    assert rep.std["SPL"] == pytest.approx(
        math.sqrt(0.08 / 3.0), abs=1e-12)
    assert rep.episodes == 5


def test_aggregate_identical_seed_results_zero_std():
    rep = M.aggregate("s", {0: [mk(SPL=0.3)], 1: [mk(SPL=0.3)],
                            2: [mk(SPL=0.3)]})
    assert rep.std["SPL"] == 0.0


def test_aggregate_permutation_invariant():
    eps = [mk(SPL=v) for v in (0.1, 0.5, 0.9, 0.4)]
    a = M.aggregate("s", {0: eps})
    b = M.aggregate("s", {0: eps[::-1]})
    assert a.mean == b.mean and a.std == b.std


def test_aggregate_rejects_empty():
    with pytest.raises(ValueError):
        M.aggregate("s", {})
    with pytest.raises(ValueError):
        M.aggregate("s", {0: []})


def test_csv_format():
    rep = M.aggregate("val_seen", {7: [mk(SPL=0.5, PL=10.25)]})
    text = M.report_to_csv([rep])
    lines = text.strip().split("\n")
    assert lines[0] == "split,seed,episodes,PL,NE,SR,OSR,SPL,CLS"
    assert lines[1] == ("val_seen,7,1,10.2500,0.0000,1.0000,1.0000,"
                        "0.5000,1.0000")
    assert lines[2].startswith("val_seen,mean,1,")
    assert lines[3].startswith("val_seen,std,1,")
