"""Trajectory evaluation: path length, navigation error, success rates,
path-length-weighted success (SPL), and coverage-weighted path fidelity
(CLS), plus aggregation across episodes and seeds."""

import io
import math
from dataclasses import dataclass

import numpy as np

from . import world as W

METRIC_NAMES = ("PL", "NE", "SR", "OSR", "SPL", "CLS")
DEFAULT_RADIUS = 3.0


@dataclass
class TrajectoryRecord:
    predicted: tuple
    reference: tuple
    goal: int
    radius: float = DEFAULT_RADIUS

    def __post_init__(self):
        if not self.predicted or not self.reference:
            raise ValueError("paths must be non-empty")
        if self.reference[-1] != self.goal:
            raise ValueError("reference path must end at the goal")


@dataclass
class TrajectoryMetrics:
    PL: float
    NE: float
    SR: float
    OSR: float
    SPL: float
    CLS: float

    def as_dict(self):
        return {name: getattr(self, name) for name in METRIC_NAMES}


def path_length(world, path):
    """Sum of edge lengths along a path; consecutive nodes must be
    adjacent."""
    total = 0.0
    for a, b in zip(path, path[1:]):
        if b not in world.neighbors[a].values():
            raise ValueError(f"nodes {a} and {b} are not adjacent")
        total += world.edge_length(a, b)
    return total


def nav_error(world, final_node, goal):
    return W.geodesic(world, final_node, goal)


def success(ne, radius=DEFAULT_RADIUS):
    """Strict inequality: stopping exactly at the radius is a miss."""
    return 1.0 if ne < radius else 0.0


def oracle_success(world, path, goal, radius=DEFAULT_RADIUS):
    best = min(W.geodesic(world, node, goal) for node in path)
    return 1.0 if best < radius else 0.0


def spl(s, pred_length, geodesic_length):
    if geodesic_length <= 0.0:
        raise ValueError("geodesic_length must be positive")
    return s * geodesic_length / max(pred_length, geodesic_length)


def cls_score(world, predicted, reference, radius=DEFAULT_RADIUS):
    """Coverage-weighted length score.

    PC is the mean over reference nodes of exp(-d/radius), where d is
    the geodesic distance from the node to the nearest predicted node;
    the expected path length EPL = PC * len(reference) then penalizes
    predicted paths whose length strays from it.
    """
    coverage = np.mean([
        np.exp(-min(W.geodesic(world, r, p) for p in predicted) / radius)
        for r in reference])
    epl = coverage * path_length(world, reference)
    pl = path_length(world, predicted)
    denom = epl + abs(epl - pl)
    ls = epl / denom if denom > 0.0 else 1.0
    return float(coverage * ls)


def evaluate_trajectory(world, record):
    ne = nav_error(world, record.predicted[-1], record.goal)
    sr = success(ne, record.radius)
    pl = path_length(world, record.predicted)
    geo = W.geodesic(world, record.reference[0], record.goal)
    return TrajectoryMetrics(
        PL=pl,
        NE=ne,
        SR=sr,
        OSR=oracle_success(world, record.predicted, record.goal,
                           record.radius),
        SPL=spl(sr, pl, geo),
        CLS=cls_score(world, record.predicted, record.reference,
                      record.radius),
    )


@dataclass
class AggregateReport:
    split: str
    seeds: tuple
    episodes: int
    mean: dict             # metric -> mean of per-seed means
    std: dict              # metric -> std across per-seed means
    per_seed: dict         # seed -> {metric: per-episode mean}


def aggregate(split, per_seed_metrics):
    """per_seed_metrics: {seed: [TrajectoryMetrics, ...]}. Episodes are
    averaged within each seed, then mean and (population) std are taken
    across seeds."""
    if not per_seed_metrics or any(not v for v in
                                   per_seed_metrics.values()):
        raise ValueError("need at least one episode per seed")
    seeds = tuple(sorted(per_seed_metrics))

    def fmean(values):
        # exact accumulation, so aggregation is permutation-invariant
        return math.fsum(values) / len(values)

    per_seed = {
        seed: {name: fmean([getattr(m, name) for m in episodes])
               for name in METRIC_NAMES}
        for seed, episodes in per_seed_metrics.items()}
    mean = {name: fmean([per_seed[s][name] for s in seeds])
            for name in METRIC_NAMES}
    std = {name: math.sqrt(fmean(
               [(per_seed[s][name] - mean[name]) ** 2 for s in seeds]))
           for name in METRIC_NAMES}
    episodes = sum(len(v) for v in per_seed_metrics.values())
    return AggregateReport(split=split, seeds=seeds, episodes=episodes,
                           mean=mean, std=std, per_seed=per_seed)


CSV_HEADER = "split,seed,episodes,PL,NE,SR,OSR,SPL,CLS"


def report_to_csv(reports):
    """One row per (split, seed) plus a `mean` and `std` row per split;
    all values fixed to 4 decimals."""
    buf = io.StringIO()
    buf.write(CSV_HEADER + "\n")

    def row(split, seed, episodes, values):
        cells = [split, str(seed), str(episodes)]
        cells += [f"{values[name]:.4f}" for name in METRIC_NAMES]
        buf.write(",".join(cells) + "\n")

    for rep in reports:
        n_per_seed = rep.episodes // len(rep.seeds)
        for seed in rep.seeds:
            row(rep.split, seed, n_per_seed, rep.per_seed[seed])
        row(rep.split, "mean", rep.episodes, rep.mean)
        row(rep.split, "std", rep.episodes, rep.std)
    return buf.getvalue()
