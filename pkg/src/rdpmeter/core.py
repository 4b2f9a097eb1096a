"""Order sets, budget-curve arithmetic, and RDP <-> DP conversion.

All budgets are in nats (natural log). Comparisons elsewhere in the
package use exact float comparisons on these values: budgets are
user-specified quantities, not measurements, so the accounting stays
conservative and deterministic.
"""

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping


@dataclass(frozen=True)
class OrderSet:
    """A finite, sorted set of Renyi orders, each strictly greater than 1."""

    orders: tuple[float, ...]
    _index: dict[float, int] = field(init=False, repr=False, compare=False)

    def __init__(self, orders: Iterable[float]):
        values = sorted(float(a) for a in orders)
        if not values:
            raise ValueError("order set must be nonempty")
        for a in values:
            if not math.isfinite(a) or a <= 1.0:
                raise ValueError(f"every order must be a finite real > 1, got {a}")
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ValueError("orders must be distinct")
        object.__setattr__(self, "orders", tuple(values))
        object.__setattr__(self, "_index", {a: i for i, a in enumerate(values)})

    def __len__(self) -> int:
        return len(self.orders)

    def __iter__(self):
        return iter(self.orders)

    def __contains__(self, alpha: float) -> bool:
        return alpha in self._index

    def index(self, alpha: float) -> int:
        try:
            return self._index[alpha]
        except KeyError:
            raise ValueError(f"order {alpha} is not tracked by this set") from None


@dataclass(frozen=True)
class RdpCurve:
    """A budget curve: one nonnegative epsilon value per tracked order."""

    orders: OrderSet
    values: tuple[float, ...]

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        if len(values) != len(self.orders):
            raise ValueError(
                f"curve has {len(values)} values for {len(self.orders)} orders"
            )
        for v in values:
            if not math.isfinite(v) or v < 0.0:
                raise ValueError(f"curve values must be finite and >= 0, got {v}")
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, orders: OrderSet) -> "RdpCurve":
        return cls(orders, (0.0,) * len(orders))

    @classmethod
    def from_mapping(cls, values: Mapping[float, float]) -> "RdpCurve":
        orders = OrderSet(values.keys())
        return cls(orders, tuple(values[a] for a in orders))

    def value(self, alpha: float) -> float:
        return self.values[self.orders.index(alpha)]

    def __add__(self, other: "RdpCurve") -> "RdpCurve":
        return curve_add(self, other)

    def is_zero(self) -> bool:
        return all(v == 0.0 for v in self.values)

    def to_json(self) -> dict:
        return {"orders": list(self.orders), "eps": list(self.values)}

    @classmethod
    def from_json(cls, data: Mapping) -> "RdpCurve":
        return cls(OrderSet(data["orders"]), tuple(data["eps"]))


@dataclass(frozen=True)
class DpGuarantee:
    """An (epsilon, delta)-DP statement, with the order that achieved it."""

    epsilon: float
    delta: float
    witness_order: float


def rdp_to_dp(eps_rdp: float, alpha: float, delta: float) -> float:
    """Convert a single (alpha, eps_rdp) point to the DP epsilon at delta.

    Returns eps_rdp + ln(1/delta)/(alpha - 1).
    """
    if alpha <= 1.0:
        raise ValueError(f"alpha must be > 1, got {alpha}")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if eps_rdp < 0.0:
        raise ValueError(f"eps_rdp must be >= 0, got {eps_rdp}")
    return eps_rdp + math.log(1.0 / delta) / (alpha - 1.0)


def curve_to_dp(curve: RdpCurve, delta: float) -> DpGuarantee:
    """Best DP guarantee over the curve; ties broken toward the smallest order."""
    best_eps = math.inf
    best_alpha = None
    for alpha, eps in zip(curve.orders, curve.values):
        candidate = rdp_to_dp(eps, alpha, delta)
        if candidate < best_eps:
            best_eps = candidate
            best_alpha = alpha
    return DpGuarantee(epsilon=best_eps, delta=delta, witness_order=best_alpha)


def dp_target_to_rdp_budget(
    eps_dp: float, delta: float, orders: OrderSet
) -> RdpCurve:
    """Per-order budget whose conversion back to DP stays within the target.

    For each order the budget is max(0, eps_dp - ln(1/delta)/(alpha - 1));
    orders where the expression goes negative are clamped to 0 so the order
    set stays stable across the pipeline. If every order clamps to 0 the
    target is unreachable at these orders and a warning is emitted.
    """
    if eps_dp <= 0.0:
        raise ValueError(f"eps_dp must be > 0, got {eps_dp}")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    log_term = math.log(1.0 / delta)
    budgets = []
    for alpha in orders:
        tail = log_term / (alpha - 1.0)
        budget = max(0.0, eps_dp - tail)
        # Conservative: granted budget must reconvert within the target under
        # the same double arithmetic; nudge down the rare 1-ulp overshoot.
        while budget > 0.0 and budget + tail > eps_dp:
            budget = math.nextafter(budget, -math.inf)
        budgets.append(budget)
    if all(b == 0.0 for b in budgets):
        warnings.warn(
            f"DP target {eps_dp} is below the conversion floor at every "
            "tracked order; the resulting budget is identically zero",
            stacklevel=2,
        )
    return RdpCurve(orders, tuple(budgets))


def curve_add(a: RdpCurve, b: RdpCurve) -> RdpCurve:
    """Pointwise sum of two curves over the same order set."""
    if a.orders.orders != b.orders.orders:
        raise ValueError("cannot add curves over different order sets")
    return RdpCurve(a.orders, tuple(x + y for x, y in zip(a.values, b.values)))


def default_order_set() -> OrderSet:
    """The 38-order working set: 1.25 to 10.0 in steps of 0.25, plus 16 and 32."""
    return OrderSet([1.25 + 0.25 * i for i in range(36)] + [16.0, 32.0])


def granularity_order_set(n: int) -> OrderSet:
    """Powers of two up to ceil(log2(n^2)), for a dataset of n records.

    The largest order bounds the finest DP granularity worth tracking
    (about 1/n^2), so the set scales with the dataset size.
    """
    if not isinstance(n, int) or n < 2:
        raise ValueError(f"n must be an integer >= 2, got {n}")
    top = (n * n - 1).bit_length()  # exact ceil(log2(n^2)) for integer n
    return OrderSet([2.0**i for i in range(1, top + 1)])
