"""Revenue / ROI / CPA reports per agent cluster and Pareto comparison."""
from __future__ import annotations

import csv
from dataclasses import dataclass, asdict
from enum import Enum
from typing import List, Optional, Sequence

import numpy as np

METRICS_COLUMNS = ["experiment", "cluster", "revenue", "cost", "roi", "cpa", "click", "spend_fraction"]


@dataclass
class ClusterMetrics:
    cluster: str
    revenue: float
    cost: float
    click: float
    budget: float

    @property
    def roi(self) -> Optional[float]:
        return self.revenue / self.cost if self.cost > 0 else None

    @property
    def cpa(self) -> Optional[float]:
        return self.cost / self.click if self.click > 0 else None

    @property
    def spend_fraction(self) -> Optional[float]:
        if not np.isfinite(self.budget) or self.budget <= 0:
            return None
        return self.cost / self.budget


@dataclass
class MetricsReport:
    clusters: List[ClusterMetrics]
    total: ClusterMetrics

    @property
    def revenues(self) -> np.ndarray:
        return np.array([c.revenue for c in self.clusters])

    def rows(self, experiment: str):
        for c in self.clusters + [self.total]:
            yield [experiment, c.cluster, c.revenue, c.cost, c.roi, c.cpa, c.click, c.spend_fraction]


def compute_metrics(result) -> MetricsReport:
    """Aggregate an episode result (per-agent revenue/cost/click/budget) into a report.

    ``result`` needs ``agent_revenue``, ``agent_cost``, ``agent_click`` and
    ``agent_budget`` arrays indexed by agent cluster.
    """
    clusters = [ClusterMetrics(str(i), float(r), float(c), float(k), float(b))
                for i, (r, c, k, b) in enumerate(zip(result.agent_revenue, result.agent_cost,
                                                     result.agent_click, result.agent_budget))]
    total = ClusterMetrics("total", sum(c.revenue for c in clusters), sum(c.cost for c in clusters),
                           sum(c.click for c in clusters), sum(c.budget for c in clusters))
    return MetricsReport(clusters, total)


class Pareto(str, Enum):
    A_DOMINATES = "A_dominates"
    B_DOMINATES = "B_dominates"
    INCOMPARABLE = "incomparable"


def pareto_compare(a, b) -> Pareto:
    """Compare per-cluster revenues; reports or plain sequences are accepted."""
    ra = a.revenues if isinstance(a, MetricsReport) else np.asarray(a, dtype=float)
    rb = b.revenues if isinstance(b, MetricsReport) else np.asarray(b, dtype=float)
    if ra.shape != rb.shape:
        raise ValueError("reports cover different clusters")
    if np.all(ra >= rb) and np.any(ra > rb):
        return Pareto.A_DOMINATES
    if np.all(rb >= ra) and np.any(rb > ra):
        return Pareto.B_DOMINATES
    return Pareto.INCOMPARABLE


def _cell(v):
    return "" if v is None else repr(float(v))


def write_metrics_csv(path, reports: Sequence[tuple]) -> None:
    """``reports`` is a sequence of ``(experiment_name, MetricsReport)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRICS_COLUMNS)
        for name, report in reports:
            for row in report.rows(name):
                w.writerow(row[:2] + [_cell(v) for v in row[2:]])
