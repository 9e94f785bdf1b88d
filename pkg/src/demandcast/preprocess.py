"""Sales repair and spike smoothing.

Two data defects are handled before any learning: zero-sales weeks caused by
stockouts ("fake zeros"), which are detected and replaced with a univariate
fit, and abnormally high weeks, which are capped at a rolling mean plus a
multiple of the rolling standard deviation so lag features reflect the
normal sales level.

The rolling window for week t covers the up-to-M on-sale weeks strictly
before t; statistics never include the week being tested, so a spike cannot
raise its own cap.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .baselines import es_fit_forecast
from .core import SalesPanel

REPAIR_ALPHA = 0.3


@dataclass(frozen=True)
class SmoothedPanel:
    """Smoothed series x plus the diagnostics behind each adjustment.

    rolling_mean/rolling_std are NaN where fewer than two prior on-sale
    weeks exist (no cap is applied there). residual = y - x for the panel
    the smoothing ran on, nonzero only at capped weeks.
    """

    products: tuple[str, ...]
    x: np.ndarray             # (N, T) float64
    rolling_mean: np.ndarray  # (N, T) float64, NaN where undefined
    rolling_std: np.ndarray   # (N, T) float64, NaN where undefined
    repaired_mask: np.ndarray  # (N, T) bool
    capped_mask: np.ndarray    # (N, T) bool
    residual: np.ndarray       # (N, T) float64

    @property
    def n_weeks(self) -> int:
        return self.x.shape[1]


def detect_fake_zeros(panel: SalesPanel) -> np.ndarray:
    """Mask of zero weeks that look like stockouts rather than absent demand.

    A week is flagged when the product was listed but out of stock, sold
    nothing, and has positive sales both strictly before and strictly after
    it. Leading and trailing zeros are never flagged.
    """
    mask = np.zeros_like(panel.on_sale_mask)
    for i in range(panel.n_products):
        positive = np.flatnonzero(panel.y[i] > 0)
        if positive.size == 0:
            continue
        first, last = positive[0], positive[-1]
        candidate = (
            (panel.y[i] == 0)
            & panel.on_sale_mask[i]
            & ~panel.stock_flag[i]
        )
        candidate[: first + 1] = False
        candidate[last:] = False
        mask[i] = candidate
    return mask


def _repair_value(history: list[float], future: np.ndarray) -> int:
    """Replacement count for one flagged week (nearest integer, half up)."""
    if history:
        level = es_fit_forecast(history, REPAIR_ALPHA)
        return max(0, int(math.floor(level + 0.5)))
    positive = future[future > 0]
    return int(positive[0]) if positive.size else 0


def repair_fake_zeros(panel: SalesPanel, mask: np.ndarray) -> SalesPanel:
    """Replace flagged weeks with a smoothing fit of the unflagged history.

    Each flagged y_{i,t} becomes the exponential-smoothing level (alpha 0.3)
    of the product's unflagged on-sale weeks before t. A flagged week with
    no prior history takes the first subsequent positive value.
    """
    if mask.shape != panel.y.shape:
        raise ValueError("mask shape must match the panel")
    if not mask.any():
        return panel
    y = panel.y.copy()
    for i in range(panel.n_products):
        flagged = np.flatnonzero(mask[i])
        if flagged.size == 0:
            continue
        usable = panel.on_sale_mask[i] & ~mask[i]
        for t in flagged:
            history = [float(v) for v in panel.y[i, :t][usable[:t]]]
            y[i, t] = _repair_value(history, panel.y[i, t + 1 :])
    return panel.replace_counts(y)


def smooth_panel(panel: SalesPanel, window: int, gamma: float) -> SmoothedPanel:
    """Cap spikes at rolling mean + gamma * rolling std.

    Statistics use the on-sale weeks among the window weeks t-window..t-1;
    with fewer than two such weeks no cap is applied and x = y. The panel
    should already be fake-zero repaired. repaired_mask is left empty here;
    preprocess_panel fills it from detection.
    """
    if window < 2:
        raise ValueError(f"smoothing window must be >= 2, got {window}")
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    n, t_count = panel.y.shape
    x = panel.y.astype(float)
    rolling_mean = np.full((n, t_count), np.nan)
    rolling_std = np.full((n, t_count), np.nan)
    capped = np.zeros((n, t_count), dtype=bool)
    # scalar accumulation on purpose: the cap rule is defined pointwise and
    # vectorized reductions round differently, breaking exact reproducibility
    for i in range(n):
        on_sale = panel.on_sale_mask[i]
        values = panel.y[i]
        for t in range(t_count):
            lo = max(0, t - window)
            obs = [float(values[s]) for s in range(lo, t) if on_sale[s]]
            if len(obs) < 2:
                continue
            m = len(obs)
            mean = sum(obs) / m
            var = sum((v - mean) ** 2 for v in obs) / m
            std = math.sqrt(var)
            rolling_mean[i, t] = mean
            rolling_std[i, t] = std
            cap = mean + gamma * std
            if float(values[t]) > cap:
                x[i, t] = cap
                capped[i, t] = True
    residual = panel.y - x
    return SmoothedPanel(
        products=panel.products,
        x=x,
        rolling_mean=rolling_mean,
        rolling_std=rolling_std,
        repaired_mask=np.zeros((n, t_count), dtype=bool),
        capped_mask=capped,
        residual=residual,
    )


def preprocess_panel(
    panel: SalesPanel, window: int, gamma: float
) -> tuple[SalesPanel, SmoothedPanel]:
    """Full repair-then-smooth pass; returns (repaired panel, smoothed panel)."""
    mask = detect_fake_zeros(panel)
    repaired = repair_fake_zeros(panel, mask)
    smoothed = smooth_panel(repaired, window, gamma)
    smoothed.repaired_mask[:] = mask
    return repaired, smoothed


def write_smoothed(panel: SalesPanel, smoothed: SmoothedPanel, path: str | Path) -> None:
    """Diagnostic dump of the smoothing decisions, one row per (product, week)."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["product_id", "week", "y", "x", "rolling_mean", "rolling_std", "repaired", "capped"]
        )
        for i, pid in enumerate(panel.products):
            for t in range(panel.n_weeks):
                if not panel.on_sale_mask[i, t]:
                    continue
                mean = smoothed.rolling_mean[i, t]
                std = smoothed.rolling_std[i, t]
                writer.writerow(
                    [
                        pid,
                        t,
                        int(panel.y[i, t]),
                        repr(float(smoothed.x[i, t])),
                        "" if math.isnan(mean) else repr(mean),
                        "" if math.isnan(std) else repr(std),
                        int(smoothed.repaired_mask[i, t]),
                        int(smoothed.capped_mask[i, t]),
                    ]
                )
