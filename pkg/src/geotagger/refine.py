"""Merge positive MRF sites into objects and apply the map-prior weighting."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .geodesy import EnuPoint
from .osmprior import PriorField

log = logging.getLogger(__name__)

DEFAULT_CLUSTER_THRESHOLD_M = 2.0
MIN_WEIGHT_SUM = 1e-9


@dataclass
class Cluster:
    sites: list[EnuPoint]
    position: EnuPoint
    weights: list[float] = field(default_factory=list)
    prior_fallback: bool = False
    node_ids: list[int] = field(default_factory=list)

    @property
    def weight_sum(self) -> float:
        return float(sum(self.weights)) if self.weights else float(len(self.sites))

    @property
    def diameter(self) -> float:
        P = np.array([[s.x, s.y] for s in self.sites])
        if len(P) < 2:
            return 0.0
        return float(np.max(np.linalg.norm(P[:, None] - P[None], axis=2)))


def _mean(sites: Sequence[EnuPoint]) -> EnuPoint:
    P = np.array([[s.x, s.y] for s in sites])
    m = P.mean(axis=0)
    return EnuPoint(float(m[0]), float(m[1]))


def cluster_positives(
    sites: Sequence[EnuPoint],
    threshold: float = DEFAULT_CLUSTER_THRESHOLD_M,
    node_ids: Sequence[int] | None = None,
) -> list[Cluster]:
    """Single-linkage clustering cut at ``threshold`` meters.

    Sites closer than the threshold (directly or through a chain of sites) end
    up in one cluster, positioned at the unweighted mean. Clusters are ordered
    by their first member in input order.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    sites = list(sites)
    if not sites:
        return []
    ids = list(node_ids) if node_ids is not None else list(range(len(sites)))
    P = np.array([[s.x, s.y] for s in sites])
    pairs = cKDTree(P).query_pairs(threshold, output_type="ndarray")
    n = len(P)
    adj = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(adj, directed=False)
    groups: dict[int, list[int]] = {}
    for i, lab in enumerate(labels):
        groups.setdefault(lab, []).append(i)
    out = []
    for members in sorted(groups.values(), key=lambda g: g[0]):
        cs = [sites[i] for i in members]
        out.append(Cluster(cs, _mean(cs), node_ids=[ids[i] for i in members]))
    return out


def refine_cluster_position(cluster: Cluster, prior: PriorField) -> EnuPoint:
    """Weighted mean of the sites with map-prior weights; updates ``cluster`` in place.

    Falls back to the plain mean (and sets ``prior_fallback``) when every site
    is fully penalized.
    """
    if not cluster.sites:
        raise ValueError("empty cluster")
    W = np.array([prior.weight_at(s) for s in cluster.sites])
    P = np.array([[s.x, s.y] for s in cluster.sites])
    cluster.weights = W.tolist()
    total = W.sum()
    if total < MIN_WEIGHT_SUM:
        log.warning("all %d sites of a cluster have zero prior weight; using the plain mean", len(P))
        cluster.prior_fallback = True
        pos = _mean(cluster.sites)
    elif np.all(W == W[0]):
        pos = _mean(cluster.sites)
    else:
        m = (W[:, None] * P).sum(axis=0) / total
        pos = EnuPoint(float(m[0]), float(m[1]))
    cluster.position = pos
    return pos
