"""Procedural navigation graphs with panoramic, sectorized observations.

A world is a connected geometric graph in the plane. Each viewpoint sees
K angular sectors; a neighbor occupies the sector its direction falls
into, and at most one neighbor may live in any sector. Landmarks
(category + attribute) are attached to (viewpoint, sector) slots and are
what instructions refer to.
"""

import heapq
import json
import math
from dataclasses import dataclass, field

import numpy as np

STOP = None  # sentinel target for the stop action


@dataclass(frozen=True)
class Action:
    """MoveTo(target) when target is a viewpoint id; Stop when None."""
    target: int | None

    @property
    def is_stop(self):
        return self.target is None


STOP_ACTION = Action(None)


@dataclass(frozen=True)
class Pose:
    viewpoint: int
    heading: int
    elevation: int = 0  # carried for fidelity, always 0


@dataclass
class PathSpec:
    path: list
    start_heading: int
    goal: int
    geodesic_length: float


@dataclass
class World:
    seed: int
    K: int
    n_categories: int
    n_attributes: int
    coords: dict            # vp id -> (x, y)
    neighbors: dict         # vp id -> {sector: neighbor id}
    landmarks: dict         # vp id -> [(sector, category, attribute)]
    _dist_cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_viewpoints(self):
        return len(self.coords)

    @property
    def view_dim(self):
        return self.n_categories + self.n_attributes + 3

    def edge_length(self, a, b):
        ax, ay = self.coords[a]
        bx, by = self.coords[b]
        return math.hypot(bx - ax, by - ay)

    def edges(self):
        seen = set()
        out = []
        for a in sorted(self.neighbors):
            for s in sorted(self.neighbors[a]):
                b = self.neighbors[a][s]
                key = (min(a, b), max(a, b))
                if key not in seen:
                    seen.add(key)
                    out.append(key)
        return out

    def sector_of(self, a, b):
        """Sector index at viewpoint a of the direction toward b."""
        ax, ay = self.coords[a]
        bx, by = self.coords[b]
        return sector_of_angle(math.atan2(by - ay, bx - ax), self.K)

    def invalidate_caches(self):
        self._dist_cache.clear()


def sector_of_angle(angle, k):
    width = 2.0 * math.pi / k
    return int(math.floor(angle / width + 0.5)) % k


def generate_world(seed, n_viewpoints, target_degree=3, n_categories=12,
                   n_attributes=6, K=8):
    """Random geometric graph with sector-unique edges, repaired to be
    connected; every viewpoint gets 1-3 landmarks in distinct sectors.
    Deterministic per seed.
    """
    if n_viewpoints < 2:
        raise ValueError("need at least 2 viewpoints")
    if target_degree >= K:
        raise ValueError(f"target_degree {target_degree} must be < K {K}")
    rng = np.random.default_rng(seed)

    # density tuned so accepted edges average ~2.2 m
    side = 2.8 * math.sqrt(n_viewpoints)
    pts = rng.uniform(0.0, side, size=(n_viewpoints, 2))
    coords = {i: (float(pts[i, 0]), float(pts[i, 1]))
              for i in range(n_viewpoints)}

    def length(a, b):
        return math.hypot(coords[b][0] - coords[a][0],
                          coords[b][1] - coords[a][1])

    def sector(a, b):
        return sector_of_angle(
            math.atan2(coords[b][1] - coords[a][1],
                       coords[b][0] - coords[a][0]), K)

    pairs = sorted(((length(a, b), a, b)
                    for a in range(n_viewpoints)
                    for b in range(a + 1, n_viewpoints)))
    neighbors = {i: {} for i in range(n_viewpoints)}

    def can_link(a, b):
        return (sector(a, b) not in neighbors[a]
                and sector(b, a) not in neighbors[b])

    def link(a, b):
        neighbors[a][sector(a, b)] = b
        neighbors[b][sector(b, a)] = a

    r_cap = 1.6 * side / math.sqrt(n_viewpoints)
    for d, a, b in pairs:
        if d > r_cap:
            break
        if (len(neighbors[a]) < target_degree
                and len(neighbors[b]) < target_degree and can_link(a, b)):
            link(a, b)

    # spanning repair: connect components via the shortest feasible pair
    parent = list(range(n_viewpoints))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a in range(n_viewpoints):
        for b in neighbors[a].values():
            parent[find(a)] = find(b)

    while True:
        roots = {find(i) for i in range(n_viewpoints)}
        if len(roots) == 1:
            break
        linked = False
        for d, a, b in pairs:
            if find(a) != find(b) and can_link(a, b):
                link(a, b)
                parent[find(a)] = find(b)
                linked = True
                break
        if not linked:
            raise RuntimeError("could not connect world graph: "
                               "no sector-feasible cross-component edge")

    landmarks = {}
    for vp in range(n_viewpoints):
        n_lm = int(rng.integers(1, 4))
        sectors = rng.choice(K, size=n_lm, replace=False)
        landmarks[vp] = sorted(
            (int(s), int(rng.integers(n_categories)),
             int(rng.integers(n_attributes)))
            for s in sectors)

    return World(seed=seed, K=K, n_categories=n_categories,
                 n_attributes=n_attributes, coords=coords,
                 neighbors=neighbors, landmarks=landmarks)


def observe(world, pose):
    """(K, d_v) view matrix; row j describes absolute sector
    (heading + j) mod K as [category one-hot | attribute one-hot |
    navigability bit | sin, cos of the relative view angle].
    """
    k = world.K
    nc, na = world.n_categories, world.n_attributes
    out = np.zeros((k, world.view_dim))
    lm_by_sector = {s: (c, a) for s, c, a in world.landmarks[pose.viewpoint]}
    nbrs = world.neighbors[pose.viewpoint]
    for j in range(k):
        abs_sector = (pose.heading + j) % k
        if abs_sector in lm_by_sector:
            cat, attr = lm_by_sector[abs_sector]
            out[j, cat] = 1.0
            out[j, nc + attr] = 1.0
        if abs_sector in nbrs:
            out[j, nc + na] = 1.0
        ang = 2.0 * math.pi * j / k
        out[j, nc + na + 1] = math.sin(ang)
        out[j, nc + na + 2] = math.cos(ang)
    return out


def navigable_actions(world, pose):
    """One MoveTo per neighbor in absolute-sector order, then Stop."""
    nbrs = world.neighbors[pose.viewpoint]
    acts = [Action(nbrs[s]) for s in sorted(nbrs)]
    acts.append(STOP_ACTION)
    return acts


def step(world, pose, action):
    """Apply an action. MoveTo sets heading to the motion-direction
    sector at the arrival viewpoint; Stop leaves the pose unchanged.
    """
    if action.is_stop:
        return pose
    nbrs = world.neighbors[pose.viewpoint]
    if action.target not in nbrs.values():
        raise ValueError(f"viewpoint {action.target} is not adjacent to "
                         f"{pose.viewpoint}")
    heading = world.sector_of(pose.viewpoint, action.target)
    return Pose(viewpoint=action.target, heading=heading)


def _dijkstra(world, src):
    dist = {src: 0.0}
    prev = {src: None}
    heap = [(0.0, src)]
    done = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        for v in world.neighbors[u].values():
            nd = d + world.edge_length(u, v)
            # strict improvement only: ties resolve to the first-settled
            # (smallest-id at equal distance) predecessor
            if v not in dist or nd < dist[v] - 1e-12:
                dist[v] = nd
                prev[v] = u
                heapq.heappush(heap, (nd, v))
    return dist, prev


def _tables(world, src):
    if src not in world._dist_cache:
        world._dist_cache[src] = _dijkstra(world, src)
    return world._dist_cache[src]


def geodesic(world, a, b):
    return _tables(world, a)[0][b]


def shortest_path(world, a, b):
    """(node path, length in meters) between a and b."""
    dist, prev = _tables(world, a)
    path = [b]
    while path[-1] != a:
        path.append(prev[path[-1]])
    path.reverse()
    return path, dist[b]


def sample_trajectory(world, rng, min_hops=3, max_hops=6, max_tries=5000):
    """Geodesic path whose hop count falls in [min_hops, max_hops]."""
    if min_hops < 1:
        raise ValueError("min_hops must be >= 1")
    n = world.n_viewpoints
    for _ in range(max_tries):
        a = int(rng.integers(n))
        b = int(rng.integers(n))
        if a == b:
            continue
        path, length = shortest_path(world, a, b)
        if min_hops <= len(path) - 1 <= max_hops:
            heading = int(rng.integers(world.K))
            return PathSpec(path=path, start_heading=heading, goal=b,
                            geodesic_length=length)
    raise RuntimeError(f"no path with hops in [{min_hops}, {max_hops}] "
                       f"after {max_tries} tries")


def world_to_json(world):
    obj = {
        "seed": world.seed,
        "K": world.K,
        "n_categories": world.n_categories,
        "n_attributes": world.n_attributes,
        "viewpoints": [{"id": i, "x": world.coords[i][0],
                        "y": world.coords[i][1]}
                       for i in sorted(world.coords)],
        "edges": [[a, b] for a, b in world.edges()],
        "landmarks": [{"vp": vp, "sector": s, "cat": c, "attr": a}
                      for vp in sorted(world.landmarks)
                      for s, c, a in world.landmarks[vp]],
    }
    return json.dumps(obj, indent=1, sort_keys=False)


def world_from_json(text):
    obj = json.loads(text)
    coords = {v["id"]: (v["x"], v["y"]) for v in obj["viewpoints"]}
    world = World(seed=obj["seed"], K=obj["K"],
                  n_categories=obj["n_categories"],
                  n_attributes=obj["n_attributes"],
                  coords=coords, neighbors={i: {} for i in coords},
                  landmarks={i: [] for i in coords})
    for a, b in obj["edges"]:
        world.neighbors[a][world.sector_of(a, b)] = b
        world.neighbors[b][world.sector_of(b, a)] = a
    for lm in obj["landmarks"]:
        world.landmarks[lm["vp"]].append((lm["sector"], lm["cat"],
                                          lm["attr"]))
    return world
