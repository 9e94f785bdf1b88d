"""Core data model: weekly sales panel and product catalog.

Weeks are dense integer offsets 0..T-1 from the panel origin; calendar
alignment is the caller's concern at ingestion time. All types here are
immutable after construction and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ProductId = str
CategoryId = str


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class SalesPanel:
    """Weekly unit-sales counts for a set of products.

    y holds non-negative integer counts, one row per product over T weeks.
    on_sale_mask marks weeks where the product was listed; stock_flag marks
    weeks where it was in stock. A product can be listed but out of stock,
    which is what fake-zero detection keys on.
    """

    products: tuple[ProductId, ...]
    y: np.ndarray            # (N, T) int64
    on_sale_mask: np.ndarray  # (N, T) bool
    stock_flag: np.ndarray    # (N, T) bool
    index: dict[ProductId, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        n = len(self.products)
        if len(set(self.products)) != n:
            raise ValueError("duplicate product ids in panel")
        y = np.asarray(self.y, dtype=np.int64)
        on_sale = np.asarray(self.on_sale_mask, dtype=bool)
        stock = np.asarray(self.stock_flag, dtype=bool)
        if y.ndim != 2 or y.shape[0] != n:
            raise ValueError(f"y must be ({n}, T), got {y.shape}")
        if on_sale.shape != y.shape or stock.shape != y.shape:
            raise ValueError("mask shapes must match y")
        if (y < 0).any():
            raise ValueError("negative sales count in panel")
        if (y[~on_sale] > 0).any():
            raise ValueError("positive sales on a week not marked on sale")
        object.__setattr__(self, "y", _freeze(y))
        object.__setattr__(self, "on_sale_mask", _freeze(on_sale))
        object.__setattr__(self, "stock_flag", _freeze(stock))
        object.__setattr__(self, "index", {p: i for i, p in enumerate(self.products)})

    @property
    def n_products(self) -> int:
        return len(self.products)

    @property
    def n_weeks(self) -> int:
        return self.y.shape[1]

    def row(self, product_id: ProductId) -> int:
        try:
            return self.index[product_id]
        except KeyError:
            raise KeyError(f"unknown product id: {product_id!r}") from None

    def replace_counts(self, y: np.ndarray) -> "SalesPanel":
        """New panel with the same masks and different counts."""
        return SalesPanel(self.products, y, self.on_sale_mask.copy(), self.stock_flag.copy())


@dataclass(frozen=True)
class Catalog:
    """Product attributes: category, price, and named categorical features.

    Categories partition the product set: every product has exactly one.
    """

    category_of: dict[ProductId, CategoryId]
    price: dict[ProductId, float]
    attributes: dict[ProductId, dict[str, str]]

    def __post_init__(self) -> None:
        for pid, p in self.price.items():
            if not p > 0:
                raise ValueError(f"non-positive price for product {pid!r}: {p}")
        missing = set(self.price) - set(self.category_of)
        if missing:
            raise ValueError(f"products without a category: {sorted(missing)[:5]}")

    @property
    def n_categories(self) -> int:
        return len(set(self.category_of.values()))

    def categories(self) -> list[CategoryId]:
        return sorted(set(self.category_of.values()))

    def members(self, category: CategoryId) -> list[ProductId]:
        return sorted(p for p, c in self.category_of.items() if c == category)

    def validate_covers(self, panel: SalesPanel) -> None:
        """Every panel product must have a catalog entry."""
        missing = [p for p in panel.products if p not in self.category_of]
        if missing:
            raise ValueError(f"panel products missing from catalog: {missing[:5]}")


def life_length(panel: SalesPanel, product_id: ProductId) -> int:
    """Weeks between the first and last on-sale week, inclusive; 0 if never on sale."""
    i = panel.row(product_id)
    weeks = np.flatnonzero(panel.on_sale_mask[i])
    if weeks.size == 0:
        return 0
    return int(weeks[-1] - weeks[0] + 1)


def slice_history(panel: SalesPanel, product_id: ProductId, t: int) -> np.ndarray:
    """Counts y_{i,0..t} inclusive."""
    i = panel.row(product_id)
    if not 0 <= t < panel.n_weeks:
        raise ValueError(f"week {t} outside panel range [0, {panel.n_weeks})")
    return panel.y[i, : t + 1]


def launch_week(panel: SalesPanel, row: int) -> int:
    """First on-sale week index for a panel row, or -1 if never on sale."""
    weeks = np.flatnonzero(panel.on_sale_mask[row])
    return int(weeks[0]) if weeks.size else -1
