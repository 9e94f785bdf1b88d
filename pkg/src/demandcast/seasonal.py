"""Cross-product seasonality and trend features.

Individual series are too short to estimate a seasonal profile, so yearly
sales are standardized to a common level, averaged within each category,
and the category curves are clustered into a small set of shared patterns.
Every product inherits its category's pattern, which is what makes the
seasonal feature available from the first week a product is listed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Catalog, SalesPanel
from .preprocess import SmoothedPanel

MIN_YEAR_WEEKS = 4      # product-years with fewer on-sale weeks are too noisy
ANNUAL_WINDOW = 52
LOCAL_WINDOW = 8
MIN_ANNUAL_POINTS = 8
MIN_LOCAL_POINTS = 3


def standardize_year(x_year: np.ndarray, on_sale: np.ndarray) -> np.ndarray:
    """Rescale one product-year so its on-sale weeks sum to N_i/tau.

    Off-sale positions come back as NaN (absent, not zero). Scale-invariant:
    multiplying the year by a positive constant leaves the result unchanged.
    """
    x_year = np.asarray(x_year, dtype=float)
    on_sale = np.asarray(on_sale, dtype=bool)
    tau = x_year.shape[0]
    if on_sale.shape[0] != tau:
        raise ValueError("x_year and on_sale must have equal length")
    n_obs = int(on_sale.sum())
    total = float(x_year[on_sale].sum())
    if n_obs == 0 or total <= 0:
        raise ValueError("standardize_year needs at least one on-sale week with sales")
    out = np.full(tau, np.nan)
    out[on_sale] = (n_obs / tau) * (x_year[on_sale] / total)
    return out


def category_seasonality(
    smoothed: SmoothedPanel,
    panel: SalesPanel,
    catalog: Catalog,
    tau: int,
    end_week: int | None = None,
) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Per-category mean standardized curve and per-position sample variance.

    Each product-year with at least MIN_YEAR_WEEKS on-sale weeks and positive
    total sales contributes one standardized observation per on-sale seasonal
    position. Positions observed once get variance 0; positions never
    observed are filled by circular linear interpolation.
    """
    end = smoothed.n_weeks if end_week is None else min(end_week, smoothed.n_weeks)
    count: dict[str, np.ndarray] = {}
    total: dict[str, np.ndarray] = {}
    total_sq: dict[str, np.ndarray] = {}
    for i, pid in enumerate(panel.products):
        cat = catalog.category_of.get(pid)
        if cat is None:
            continue
        for year_start in range(0, end, tau):
            x_year = np.zeros(tau)
            on_sale = np.zeros(tau, dtype=bool)
            stop = min(year_start + tau, end)
            width = stop - year_start
            x_year[:width] = smoothed.x[i, year_start:stop]
            on_sale[:width] = panel.on_sale_mask[i, year_start:stop]
            if on_sale.sum() < MIN_YEAR_WEEKS or x_year[on_sale].sum() <= 0:
                continue
            std = standardize_year(x_year, on_sale)
            if cat not in count:
                count[cat] = np.zeros(tau, dtype=np.int64)
                total[cat] = np.zeros(tau)
                total_sq[cat] = np.zeros(tau)
            obs = ~np.isnan(std)
            count[cat][obs] += 1
            total[cat][obs] += std[obs]
            total_sq[cat][obs] += std[obs] ** 2
    curves: dict[str, np.ndarray] = {}
    variances: dict[str, np.ndarray] = {}
    for cat in sorted(count):
        n = count[cat]
        observed = n > 0
        curve = np.full(tau, np.nan)
        curve[observed] = total[cat][observed] / n[observed]
        var = np.zeros(tau)
        multi = n > 1
        var[multi] = np.maximum(
            0.0,
            (total_sq[cat][multi] - n[multi] * curve[multi] ** 2) / (n[multi] - 1),
        )
        curves[cat] = _interpolate_circular(curve)
        variances[cat] = var
    return curves, variances


def _interpolate_circular(curve: np.ndarray) -> np.ndarray:
    """Fill NaN positions by linear interpolation around the seasonal circle."""
    tau = curve.shape[0]
    observed = np.flatnonzero(~np.isnan(curve))
    if observed.size == 0:
        raise ValueError("cannot interpolate a curve with no observed positions")
    if observed.size == tau:
        return curve
    out = curve.copy()
    if observed.size == 1:
        out[:] = curve[observed[0]]
        return out
    for gap_idx in np.flatnonzero(np.isnan(curve)):
        prev_candidates = observed[observed < gap_idx]
        prev = prev_candidates[-1] if prev_candidates.size else observed[-1] - tau
        next_candidates = observed[observed > gap_idx]
        nxt = next_candidates[0] if next_candidates.size else observed[0] + tau
        frac = (gap_idx - prev) / (nxt - prev)
        out[gap_idx] = (1 - frac) * curve[prev % tau] + frac * curve[nxt % tau]
    return out


def _renormalize(pattern: np.ndarray, tau: int) -> np.ndarray:
    mean = float(pattern.mean())
    if mean <= 0:
        raise ValueError("seasonal pattern must have positive mean")
    return pattern * ((1.0 / tau) / mean)


def _kmeanspp_init(
    matrix: np.ndarray, weights: np.ndarray, k: int, rng: np.random.Generator
) -> np.ndarray:
    """Spread the initial centroids out, each draw weighted by w * distance^2."""
    n = matrix.shape[0]
    centroids = np.empty((k, matrix.shape[1]))
    first = int(rng.integers(n))
    centroids[0] = matrix[first]
    min_dist = ((matrix - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        mass = weights * min_dist
        total = mass.sum()
        if total <= 0:
            idx = int(rng.integers(n))  # all points coincide with a centroid
        else:
            idx = int(rng.choice(n, p=mass / total))
        centroids[j] = matrix[idx]
        min_dist = np.minimum(min_dist, ((matrix - centroids[j]) ** 2).sum(axis=1))
    return centroids


def cluster_seasonalities(
    curves: dict[str, np.ndarray],
    variances: dict[str, np.ndarray],
    k: int,
    seed: int,
    max_iter: int = 200,
    n_init: int = 8,
) -> tuple[list[np.ndarray], dict[str, int]]:
    """Weighted k-means over category curves.

    Assignment uses plain Euclidean distance; centroid updates weight each
    category by 1 / (1 + mean variance), so noisy categories pull less.
    Centroids are renormalized to mean 1/tau at the end. Empty clusters are
    re-seeded from the farthest point. The best of n_init restarts (lowest
    weighted within-cluster cost) wins; the seed fixes every draw, so the
    result is deterministic.
    """
    cats = sorted(curves)
    n = len(cats)
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    matrix = np.stack([curves[c] for c in cats])
    tau = matrix.shape[1]
    weights = np.array([1.0 / (1.0 + float(np.mean(variances[c]))) for c in cats])
    rng = np.random.default_rng(seed)
    best_cost = np.inf
    best: tuple[np.ndarray, np.ndarray] | None = None
    for _ in range(n_init):
        centroids, assign = _kmeans_once(matrix, weights, k, rng, max_iter)
        cost = float(
            (weights * ((matrix - centroids[assign]) ** 2).sum(axis=1)).sum()
        )
        if cost < best_cost:
            best_cost = cost
            best = (centroids, assign)
    centroids, assign = best
    patterns = [_renormalize(c, tau) for c in centroids]
    return patterns, {cat: int(assign[idx]) for idx, cat in enumerate(cats)}


def _kmeans_once(
    matrix: np.ndarray,
    weights: np.ndarray,
    k: int,
    rng: np.random.Generator,
    max_iter: int,
) -> tuple[np.ndarray, np.ndarray]:
    n = matrix.shape[0]
    centroids = _kmeanspp_init(matrix, weights, k, rng)
    assign = np.full(n, -1)
    for _ in range(max_iter):
        dist = ((matrix[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_assign = dist.argmin(axis=1)
        for j in range(k):
            if (new_assign == j).any():
                continue
            # re-seed from the farthest point whose cluster can spare it
            by_distance = np.argsort(-dist[np.arange(n), new_assign], kind="stable")
            for cand in by_distance:
                if (new_assign == new_assign[cand]).sum() > 1:
                    new_assign[cand] = j
                    break
        if (new_assign == assign).all():
            break
        assign = new_assign
        for j in range(k):
            members = assign == j
            w = weights[members]
            centroids[j] = (matrix[members] * w[:, None]).sum(axis=0) / w.sum()
    return centroids, assign


@dataclass(frozen=True)
class SeasonalityModel:
    """Fitted seasonal patterns plus the category bookkeeping to apply them."""

    tau: int
    category_curve: dict[str, np.ndarray]
    category_variance: dict[str, np.ndarray]
    patterns: list[np.ndarray]
    assignment: dict[str, int]
    category_of: dict[str, str]
    global_pattern: np.ndarray

    def pattern_for_category(self, category: str) -> np.ndarray:
        idx = self.assignment.get(category)
        if idx is None:
            return self.global_pattern
        return self.patterns[idx]

    def value_at(self, product_id: str, week: int) -> float:
        pattern = product_seasonality(product_id, self)
        return float(pattern[week % self.tau])


def product_seasonality(product_id: str, model: SeasonalityModel) -> np.ndarray:
    """The pattern assigned to the product's category (cold-start friendly).

    Products in categories the model never saw get the global mean pattern.
    """
    category = model.category_of.get(product_id)
    if category is None:
        return model.global_pattern
    return model.pattern_for_category(category)


def fit_seasonality(
    smoothed: SmoothedPanel,
    panel: SalesPanel,
    catalog: Catalog,
    tau: int,
    k: int,
    seed: int,
    end_week: int | None = None,
) -> SeasonalityModel:
    """Estimate category curves and cluster them into k shared patterns."""
    curves, variances = category_seasonality(smoothed, panel, catalog, tau, end_week)
    if curves:
        k_eff = min(k, len(curves))
        patterns, assignment = cluster_seasonalities(curves, variances, k_eff, seed)
        global_pattern = _renormalize(np.mean(np.stack(patterns), axis=0), tau)
    else:
        patterns = []
        assignment = {}
        global_pattern = np.full(tau, 1.0 / tau)
    return SeasonalityModel(
        tau=tau,
        category_curve=curves,
        category_variance=variances,
        patterns=patterns,
        assignment=assignment,
        category_of=dict(catalog.category_of),
        global_pattern=global_pattern,
    )


def trend_features(
    smoothed: SmoothedPanel, panel: SalesPanel, product_id: str, t: int
) -> tuple[float, float]:
    """Normalized (annual, local) level slopes at week t.

    Each slope is the least-squares slope of x over the on-sale weeks in the
    trailing window, divided by the mean level there; 0 when the window has
    too few points or a zero mean. Units are fraction of level per week.
    """
    i = panel.row(product_id)
    if not 0 <= t < smoothed.n_weeks:
        raise ValueError(f"week {t} outside panel range")
    annual = _window_slope(smoothed.x[i], panel.on_sale_mask[i], t, ANNUAL_WINDOW, MIN_ANNUAL_POINTS)
    local = _window_slope(smoothed.x[i], panel.on_sale_mask[i], t, LOCAL_WINDOW, MIN_LOCAL_POINTS)
    return annual, local


def _window_slope(
    x: np.ndarray, on_sale: np.ndarray, t: int, window: int, min_points: int
) -> float:
    lo = max(0, t - window)
    weeks = np.flatnonzero(on_sale[lo : t + 1]) + lo
    if weeks.size < min_points:
        return 0.0
    values = x[weeks]
    mean_level = float(values.mean())
    if mean_level == 0.0:
        return 0.0
    w = weeks.astype(float)
    w_centered = w - w.mean()
    denom = float((w_centered**2).sum())
    if denom == 0.0:
        return 0.0
    slope = float((w_centered * (values - values.mean())).sum()) / denom
    return slope / mean_level


def write_seasonality(model: SeasonalityModel, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["category_id", "pattern_index", "week_of_year", "value"])
        for cat in sorted(model.assignment):
            idx = model.assignment[cat]
            for week, value in enumerate(model.patterns[idx]):
                writer.writerow([cat, idx, week, repr(float(value))])
