"""Weighted accuracy metrics, temporal splits, and stratified reporting.

Both metrics weight by product price, so errors on expensive products count
more. The MAE variant normalizes by the price-weighted forecast volume (its
printed form); normalize_by_actuals switches the denominator to actuals for
sanity analysis, but the forecast-normalized form is the reported default.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Catalog, SalesPanel

LIFE_BUCKETS = (8, 9, 10, 11, 12)
SEGMENT_QUANTILES = (0.1, 0.4)


def weighted_rmse(y: np.ndarray, y_hat: np.ndarray, prices: np.ndarray) -> float:
    """sqrt(mean(p_i^2 (y_i - y_hat_i)^2))."""
    y, y_hat, prices = (np.asarray(a, dtype=float) for a in (y, y_hat, prices))
    if not (y.shape == y_hat.shape == prices.shape):
        raise ValueError("weighted_rmse: length mismatch")
    if y.size == 0:
        raise ValueError("weighted_rmse: empty input")
    return float(np.sqrt(np.mean(prices**2 * (y - y_hat) ** 2)))


def weighted_mae(
    y: np.ndarray,
    y_hat: np.ndarray,
    prices: np.ndarray,
    normalize_by_actuals: bool = False,
) -> float:
    """sum(p_i |y_i - y_hat_i|) / sum(p_i y_hat_i); denominator is forecasts."""
    y, y_hat, prices = (np.asarray(a, dtype=float) for a in (y, y_hat, prices))
    if not (y.shape == y_hat.shape == prices.shape):
        raise ValueError("weighted_mae: length mismatch")
    if y.size == 0:
        raise ValueError("weighted_mae: empty input")
    denom = float(np.sum(prices * (y if normalize_by_actuals else y_hat)))
    if denom <= 0:
        raise ValueError("weighted_mae: non-positive weighted volume in denominator")
    return float(np.sum(prices * np.abs(y - y_hat))) / denom


@dataclass(frozen=True)
class SplitSpec:
    train_end: int
    valid_len: int
    test_len: int
    horizon: int

    def __post_init__(self) -> None:
        if min(self.train_end, self.valid_len, self.test_len) < 1:
            raise ValueError("all split lengths must be >= 1")

    @property
    def valid_start(self) -> int:
        return self.train_end

    @property
    def test_start(self) -> int:
        return self.train_end + self.valid_len

    @property
    def test_end(self) -> int:
        return self.test_start + self.test_len


def temporal_split(panel: SalesPanel, spec: SplitSpec) -> tuple[range, range, range]:
    """Contiguous disjoint (train, valid, test) week ranges."""
    if spec.test_end > panel.n_weeks:
        raise ValueError(
            f"split needs {spec.test_end} weeks but panel has {panel.n_weeks}"
        )
    return (
        range(0, spec.train_end),
        range(spec.valid_start, spec.test_start),
        range(spec.test_start, spec.test_end),
    )


def segment_products(
    panel: SalesPanel,
    catalog: Catalog,
    quantiles: tuple[float, float] = SEGMENT_QUANTILES,
    train_end: int | None = None,
) -> dict[str, str]:
    """A/B/C assignment by price-weighted training-period volume.

    Top quantiles[0] share of products go to A, the next slice up to
    quantiles[1] to B, the rest to C. Ties break by product id.
    """
    n = panel.n_products
    if n < 3:
        raise ValueError("segmentation needs at least 3 products")
    end = panel.n_weeks if train_end is None else train_end
    volume = {
        pid: catalog.price[pid] * float(panel.y[panel.row(pid), :end].sum())
        for pid in panel.products
    }
    ranked = sorted(panel.products, key=lambda pid: (-volume[pid], pid))
    n_a = max(1, int(n * quantiles[0]))
    n_b = max(1, int(n * quantiles[1]) - n_a)
    segments = {}
    for rank, pid in enumerate(ranked):
        if rank < n_a:
            segments[pid] = "A"
        elif rank < n_a + n_b:
            segments[pid] = "B"
        else:
            segments[pid] = "C"
    return segments


def cold_start_filter(
    keys: list[tuple[str, int]],
    life_at_forecast: np.ndarray,
    min_life: int,
) -> np.ndarray:
    """Keep-mask for rows whose product had >= min_life on-sale weeks of history.

    life_at_forecast counts the on-sale weeks available when the forecast was
    issued (up to and including the feature week). min_life=0 keeps all rows,
    the cold-start showcase mode; min_life=6 reproduces the fair-comparison
    mode where benchmarks have enough history to run.
    """
    life = np.asarray(life_at_forecast)
    if life.shape[0] != len(keys):
        raise ValueError("life metadata must align with row keys")
    return life >= min_life


@dataclass
class MetricCell:
    rmse: float
    mae: float
    rows: int


@dataclass
class EvalReport:
    overall: MetricCell
    segments: dict[str, MetricCell]
    life_buckets: dict[str, MetricCell]


def _cell(y, y_hat, prices) -> MetricCell:
    try:
        mae = weighted_mae(y, y_hat, prices)
    except ValueError:
        mae = math.nan
    return MetricCell(rmse=weighted_rmse(y, y_hat, prices), mae=mae, rows=len(y))


def evaluate(
    predictions: dict[tuple[str, int], float],
    actuals: dict[tuple[str, int], float],
    catalog: Catalog,
    segments: dict[str, str],
    life_at_forecast: dict[tuple[str, int], int],
) -> EvalReport:
    """Weighted metrics overall, per segment, and per life-length bucket.

    Buckets follow the early-product-cycle breakdown: exact life lengths
    8..12 plus a 13+ aggregate; shorter lives only count toward overall and
    segment rows.
    """
    if set(predictions) != set(actuals):
        raise ValueError("prediction and actual keys do not match")
    keys = sorted(predictions)
    y = np.array([actuals[k] for k in keys])
    y_hat = np.array([predictions[k] for k in keys])
    prices = np.array([catalog.price[k[0]] for k in keys])
    life = np.array([life_at_forecast[k] for k in keys])
    report = EvalReport(
        overall=_cell(y, y_hat, prices),
        segments={},
        life_buckets={},
    )
    seg = np.array([segments.get(k[0], "C") for k in keys])
    for name in ("A", "B", "C"):
        mask = seg == name
        if mask.any():
            report.segments[name] = _cell(y[mask], y_hat[mask], prices[mask])
    for bucket in LIFE_BUCKETS:
        mask = life == bucket
        if mask.any():
            report.life_buckets[str(bucket)] = _cell(y[mask], y_hat[mask], prices[mask])
    mask = life > LIFE_BUCKETS[-1]
    if mask.any():
        report.life_buckets["13+"] = _cell(y[mask], y_hat[mask], prices[mask])
    return report


def report_rows(report: EvalReport) -> list[tuple[str, str, float, float, int]]:
    rows = [("overall", "all", report.overall.rmse, report.overall.mae, report.overall.rows)]
    for name in sorted(report.segments):
        cell = report.segments[name]
        rows.append(("segment", name, cell.rmse, cell.mae, cell.rows))
    for name, cell in report.life_buckets.items():
        rows.append(("life", name, cell.rmse, cell.mae, cell.rows))
    return rows


def write_report(report: EvalReport, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scope", "group", "rmse", "mae", "rows"])
        for scope, group, rmse, mae, rows in report_rows(report):
            writer.writerow([scope, group, repr(rmse), repr(mae), rows])


def format_report(report: EvalReport, title: str = "evaluation") -> str:
    lines = [title, f"{'scope':<10}{'group':<8}{'rmse':>12}{'mae':>10}{'rows':>8}"]
    for scope, group, rmse, mae, rows in report_rows(report):
        lines.append(f"{scope:<10}{group:<8}{rmse:>12.4f}{mae:>10.4f}{rows:>8}")
    return "\n".join(lines)
