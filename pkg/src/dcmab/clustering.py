"""Revenue-ranked clustering of merchants (equal presences) and consumers (equal requests)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np


@dataclass
class ClusterAssignment:
    merchant_to_cluster: Dict[int, int]
    consumer_to_cluster: Dict[int, int]
    n_merchant_clusters: int
    n_consumer_clusters: int

    def merchant_array(self, merchant_ids) -> np.ndarray:
        return np.array([self.merchant_to_cluster[int(m)] for m in merchant_ids], dtype=np.int64)

    def consumer_array(self, consumer_ids) -> np.ndarray:
        return np.array([self.consumer_to_cluster[int(c)] for c in consumer_ids], dtype=np.int64)


def prefix_partition(weights, n_clusters: int) -> np.ndarray:
    """Cut a ranked sequence into ``n_clusters`` contiguous groups of near-equal weight.

    Walk the ranking accumulating weight; cluster ``c`` closes as soon as the
    running total reaches ``total * (c + 1) / n_clusters``. Every cluster gets
    at least one item. Returns the cluster index per ranked position.
    """
    weights = np.asarray(weights, dtype=float)
    n = len(weights)
    if n_clusters < 1:
        raise ValueError("need at least one cluster")
    if n_clusters > n:
        raise ValueError(f"too many clusters: {n_clusters} > {n} entities")
    total = weights.sum()
    labels = np.empty(n, dtype=np.int64)
    cluster, running = 0, 0.0
    for pos in range(n):
        labels[pos] = cluster
        running += weights[pos]
        remaining_items = n - pos - 1
        remaining_clusters = n_clusters - cluster - 1
        if remaining_clusters == 0:
            continue
        if running >= total * (cluster + 1) / n_clusters - 1e-12 or remaining_items == remaining_clusters:
            cluster += 1
    return labels


def _rank_desc(ids, revenue):
    # revenue descending, ties by ascending id
    return np.lexsort((ids, -np.asarray(revenue, dtype=float)))


def cluster_by_revenue(ids, revenue, weights, n_clusters: int) -> Dict[int, int]:
    ids = np.asarray(ids)
    order = _rank_desc(ids, revenue)
    labels = prefix_partition(np.asarray(weights)[order], n_clusters)
    return {int(ids[o]): int(c) for o, c in zip(order, labels)}


def merchant_presence(log) -> np.ndarray:
    """Candidate-list appearances per merchant, aligned with ``log.merchant_ids``."""
    return np.bincount(log.cand_midx, minlength=log.n_merchants).astype(float)


def consumer_requests(log) -> np.ndarray:
    return np.bincount(log.req_cidx, minlength=log.n_consumers).astype(float)


def cluster_merchants_by_presence(log, n_clusters: int, merchant_revenue) -> Dict[int, int]:
    return cluster_by_revenue(log.merchant_ids, merchant_revenue, merchant_presence(log), n_clusters)


def cluster_consumers_by_requests(log, n_clusters: int, consumer_revenue) -> Dict[int, int]:
    return cluster_by_revenue(log.consumer_ids, consumer_revenue, consumer_requests(log), n_clusters)


def build_assignment(log, n_merchant_clusters: int, n_consumer_clusters: int,
                     merchant_revenue, consumer_revenue) -> ClusterAssignment:
    """Both partitions from one log and the revenues of a manual replay of it."""
    return ClusterAssignment(
        cluster_merchants_by_presence(log, n_merchant_clusters, merchant_revenue),
        cluster_consumers_by_requests(log, n_consumer_clusters, consumer_revenue),
        n_merchant_clusters, n_consumer_clusters)


def extend_assignment(assignment: ClusterAssignment, log, merchant_default: Optional[int] = None,
                      consumer_default: Optional[int] = None) -> ClusterAssignment:
    """Map entities that never showed up in the clustering log (e.g. in a test log).

    Unseen merchants and consumers go to the last (lowest-revenue) cluster.
    """
    m_default = assignment.n_merchant_clusters - 1 if merchant_default is None else merchant_default
    c_default = assignment.n_consumer_clusters - 1 if consumer_default is None else consumer_default
    m2c = dict(assignment.merchant_to_cluster)
    c2c = dict(assignment.consumer_to_cluster)
    for m in log.merchant_ids:
        m2c.setdefault(int(m), m_default)
    for c in log.consumer_ids:
        c2c.setdefault(int(c), c_default)
    return ClusterAssignment(m2c, c2c, assignment.n_merchant_clusters, assignment.n_consumer_clusters)


def write_assignment(path, mapping: Dict[int, int]) -> None:
    with open(path, "w") as fh:
        for key in sorted(mapping):
            fh.write(f"{key}\t{mapping[key]}\n")


def read_assignment(path) -> Dict[int, int]:
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'id cluster'")
            out[int(parts[0])] = int(parts[1])
    return out
