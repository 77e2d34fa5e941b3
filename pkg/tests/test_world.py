import math

import numpy as np
import pytest

from xlnav import world as W


def floyd_warshall(world):
    """All-pairs oracle, independent of the Dijkstra implementation."""
    n = world.n_viewpoints
    dist = np.full((n, n), np.inf)
    np.fill_diagonal(dist, 0.0)
    for a, b in world.edges():
        dist[a, b] = dist[b, a] = world.edge_length(a, b)
    for k in range(n):
        dist = np.minimum(dist, dist[:, k, None] + dist[None, k, :])
    return dist


def hand_world():
    """Three collinear-ish viewpoints with known geometry.

    0 at origin, 1 east of it, 2 north of 1. Sector 0 faces +x,
    sectors increase counterclockwise (K=8 -> 45 degrees each).
    """
    coords = {0: (0.0, 0.0), 1: (2.0, 0.0), 2: (2.0, 2.0)}
    world = W.World(seed=0, K=8, n_categories=4, n_attributes=3,
                    coords=coords, neighbors={0: {}, 1: {}, 2: {}},
                    landmarks={0: [(0, 1, 2)], 1: [(2, 3, 0)], 2: []})
    for a, b in [(0, 1), (1, 2)]:
        world.neighbors[a][world.sector_of(a, b)] = b
        world.neighbors[b][world.sector_of(b, a)] = a
    return world


class TestGenerateWorld:
    def test_same_seed_identical(self):
        w1 = W.generate_world(3, 30)
        w2 = W.generate_world(3, 30)
        assert w1.coords == w2.coords
        assert w1.neighbors == w2.neighbors
        assert w1.landmarks == w2.landmarks

    def test_two_viewpoints(self):
        w = W.generate_world(0, 2)
        assert w.edges() == [(0, 1)]
        assert list(w.neighbors[0].values()) == [1]
        assert list(w.neighbors[1].values()) == [0]

    def test_seed7_graph_valid(self):
        w = W.generate_world(7, 40, target_degree=3)
        # exhaustive check: connectivity, degree bounds, sector uniqueness,
        # edge length == Euclidean distance
        seen = {0}
        frontier = [0]
        while frontier:
            u = frontier.pop()
            for v in w.neighbors[u].values():
                if v not in seen:
                    seen.add(v)
                    frontier.append(v)
        assert seen == set(range(40))
        for vp in range(40):
            nbrs = w.neighbors[vp]
            assert 1 <= len(nbrs) <= w.K
            assert len(set(nbrs)) == len(nbrs)
            for s, v in nbrs.items():
                assert w.sector_of(vp, v) == s
        for a, b in w.edges():
            dx = w.coords[b][0] - w.coords[a][0]
            dy = w.coords[b][1] - w.coords[a][1]
            assert math.isclose(w.edge_length(a, b), math.hypot(dx, dy))

    def test_landmarks_one_to_three_distinct_sectors(self):
        w = W.generate_world(5, 25)
        for vp, lms in w.landmarks.items():
            assert 1 <= len(lms) <= 3
            sectors = [s for s, _, _ in lms]
            assert len(set(sectors)) == len(sectors)

    def test_infeasible_degree(self):
        with pytest.raises(ValueError):
            W.generate_world(0, 10, target_degree=8, K=8)


class TestObserve:
    def test_empty_sector_zero(self):
        w = hand_world()
        obs = W.observe(w, W.Pose(2, 0))
        # viewpoint 2 has no landmarks; its single neighbor (1) is south
        assert obs[:, :7].sum() == 0.0  # no landmark one-hots anywhere
        assert obs[:, 7].sum() == 1.0   # exactly one navigable sector

    def test_heading_rotation_shifts_views(self):
        w = W.generate_world(7, 40)
        p0 = W.Pose(5, 2)
        p1 = W.Pose(5, 3)
        o0 = W.observe(w, p0)
        o1 = W.observe(w, p1)
        # rotating heading by +1 shifts views by -1 (landmark/nav columns)
        assert np.array_equal(o1[:, :-2], np.roll(o0[:, :-2], -1, axis=0))

    def test_hand_assembled_observation(self):
        w = hand_world()
        obs = W.observe(w, W.Pose(0, 0))
        # heading 0: view j == absolute sector j
        # landmark (sector 0, cat 1, attr 2) and neighbor 1 due east
        expect0 = np.zeros(10)
        expect0[1] = 1.0          # category 1
        expect0[4 + 2] = 1.0      # attribute 2
        expect0[7] = 1.0          # navigable
        expect0[8] = math.sin(0.0)
        expect0[9] = math.cos(0.0)
        assert np.allclose(obs[0], expect0)
        # all other sectors: no landmark, no neighbor
        assert obs[1:, :8].sum() == 0.0

    def test_pure_function_of_pose(self):
        w = W.generate_world(1, 20)
        p = W.Pose(3, 4)
        assert np.array_equal(W.observe(w, p), W.observe(w, p))


class TestActionsAndStep:
    def test_degree_one_actions(self):
        w = hand_world()
        acts = W.navigable_actions(w, W.Pose(0, 0))
        assert acts == [W.Action(1), W.STOP_ACTION]

    def test_stop_always_present(self):
        w = W.generate_world(7, 40)
        for vp in range(40):
            acts = W.navigable_actions(w, W.Pose(vp, 0))
            assert acts[-1].is_stop

    def test_actions_in_sector_order(self):
        w = W.generate_world(7, 40)
        vp = next(v for v in range(40) if len(w.neighbors[v]) == 3)
        acts = W.navigable_actions(w, W.Pose(vp, 0))
        assert len(acts) == 4
        sectors = [w.sector_of(vp, a.target) for a in acts[:-1]]
        assert sectors == sorted(sectors)

    def test_stop_identity(self):
        w = hand_world()
        p = W.Pose(1, 5)
        assert W.step(w, p, W.STOP_ACTION) == p

    def test_round_trip_viewpoint(self):
        w = W.generate_world(7, 40)
        p = W.Pose(0, 0)
        q = W.step(w, p, W.Action(list(w.neighbors[0].values())[0]))
        back = W.step(w, q, W.Action(0))
        assert back.viewpoint == 0

    def test_arrival_heading_hand_computed(self):
        w = hand_world()
        # moving 0 -> 1 heads due east: arrival sector 0
        q = W.step(w, W.Pose(0, 3), W.Action(1))
        assert q == W.Pose(1, 0)
        # moving 1 -> 2 heads due north: arrival sector 2 (90 degrees)
        r = W.step(w, q, W.Action(2))
        assert r == W.Pose(2, 2)

    def test_nonadjacent_move_rejected(self):
        w = hand_world()
        with pytest.raises(ValueError):
            W.step(w, W.Pose(0, 0), W.Action(2))


class TestShortestPath:
    def test_self_path(self):
        w = hand_world()
        assert W.shortest_path(w, 1, 1) == ([1], 0.0)

    def test_two_node(self):
        w = W.generate_world(0, 2)
        path, length = W.shortest_path(w, 0, 1)
        assert path == [0, 1]
        assert math.isclose(length, w.edge_length(0, 1))

    def test_matches_floyd_warshall(self):
        w = W.generate_world(7, 40)
        oracle = floyd_warshall(w)
        rng = np.random.default_rng(0)
        for _ in range(20):
            a, b = rng.integers(0, 40, size=2)
            path, length = W.shortest_path(w, int(a), int(b))
            assert math.isclose(length, oracle[a, b], rel_tol=1e-12)
            assert path[0] == a and path[-1] == b
            for u, v in zip(path, path[1:]):
                assert v in w.neighbors[u].values()

    def test_triangle_inequality(self):
        w = W.generate_world(2, 30)
        rng = np.random.default_rng(1)
        for _ in range(50):
            a, b, c = (int(x) for x in rng.integers(0, 30, size=3))
            assert (W.geodesic(w, a, c)
                    <= W.geodesic(w, a, b) + W.geodesic(w, b, c) + 1e-9)


class TestSampleTrajectory:
    def test_single_hop(self):
        w = W.generate_world(0, 2)
        rng = np.random.default_rng(0)
        ps = W.sample_trajectory(w, rng, min_hops=1, max_hops=1)
        assert len(ps.path) == 2

    def test_pathspec_invariants(self):
        w = W.generate_world(7, 40)
        rng = np.random.default_rng(3)
        for _ in range(50):
            ps = W.sample_trajectory(w, rng)
            assert ps.path[-1] == ps.goal
            for u, v in zip(ps.path, ps.path[1:]):
                assert v in w.neighbors[u].values()
            assert math.isclose(
                ps.geodesic_length,
                W.shortest_path(w, ps.path[0], ps.goal)[1])

    def test_hop_histogram_support(self):
        w = W.generate_world(7, 40)
        rng = np.random.default_rng(11)
        hops = {len(W.sample_trajectory(w, rng).path) - 1
                for _ in range(1000)}
        assert hops <= {3, 4, 5, 6}

    def test_bad_min_hops(self):
        w = W.generate_world(0, 2)
        with pytest.raises(ValueError):
            W.sample_trajectory(w, np.random.default_rng(0), min_hops=0)


class TestSerialization:
    def test_round_trip(self):
        w = W.generate_world(9, 35)
        text = W.world_to_json(w)
        w2 = W.world_from_json(text)
        assert w2.coords == w.coords
        assert w2.neighbors == w.neighbors
        assert {k: sorted(v) for k, v in w2.landmarks.items()} == w.landmarks
        assert W.world_to_json(w2) == text

    def test_deterministic_bytes(self):
        assert (W.world_to_json(W.generate_world(4, 20))
                == W.world_to_json(W.generate_world(4, 20)))
