"""Privacy odometer: unconditional spend tracking with a doubling
schedule of internal filter levels and a running DP bound that is valid
at any stopping time.

The schedule fixes, per order, a ladder of levels level(f, alpha) =
2^(f-1) * base(alpha) with base(alpha) = ln(2*|orders|/delta)/(alpha-1).
After any sequence of spends, each order sits at the smallest rung that
still covers its spent budget, and the reported bound is the best order's
level plus a union-bound term over rungs and orders. A fresh odometer
therefore reports exactly twice the base at every order: the price of not
fixing the budget in advance is a factor of two.

All bound arithmetic is scalar double precision through one shared
log-argument helper, so equal inputs give bit-identical outputs across
every code path (fresh-bound doubling is exact, replays reconstruct
bounds bit for bit).
"""

import math
from dataclasses import dataclass, field
from typing import Sequence

from rdpmeter.core import DpGuarantee, OrderSet, RdpCurve

MAX_FILTER_INDEX = 64


def _log_arg(m: int, f: int, delta: float) -> float:
    # Shared by base levels (f=1) and bound terms so the two are
    # bit-identical where the formulas coincide.
    return 2.0 * m * f * f / delta


@dataclass(frozen=True)
class FilterSchedule:
    """Doubling ladder of per-order budget levels."""

    delta: float
    orders: OrderSet
    _base: tuple[float, ...] = field(init=False, repr=False, compare=False)
    _terms: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        m = len(self.orders)
        base = tuple(
            math.log(_log_arg(m, 1, self.delta)) / (alpha - 1.0)
            for alpha in self.orders
        )
        object.__setattr__(self, "_base", base)
        object.__setattr__(self, "_terms", {})

    def base(self, alpha: float) -> float:
        """First level: ln(2*|orders|/delta)/(alpha-1)."""
        return self._base[self.orders.index(alpha)]

    def level(self, f: int, alpha: float) -> float:
        """f-th level: exactly 2^(f-1) times the base."""
        self._check_f(f)
        return math.ldexp(self._base[self.orders.index(alpha)], f - 1)

    def bound_term(self, f: int, i: int) -> float:
        """Union-bound increment ln(2*|orders|*f^2/delta)/(alpha_i - 1)."""
        self._check_f(f)
        key = (f, i)
        term = self._terms.get(key)
        if term is None:
            arg = _log_arg(len(self.orders), f, self.delta)
            term = math.log(arg) / (self.orders.orders[i] - 1.0)
            self._terms[key] = term
        return term

    @staticmethod
    def _check_f(f: int) -> None:
        if not isinstance(f, int) or f < 1:
            raise ValueError(f"filter index must be a positive integer, got {f}")
        if f > MAX_FILTER_INDEX:
            raise ValueError(
                f"filter index {f} exceeds the supported maximum "
                f"{MAX_FILTER_INDEX}"
            )


@dataclass(frozen=True)
class OdometerEvent:
    index: int
    request: RdpCurve


@dataclass(frozen=True)
class RunningBound:
    """A DP statement valid at any stopping time, with its witnesses."""

    eps_dp: float
    witness_order: float
    witness_level: int
    delta: float


class OdometerState:
    """Single-owner mutable accountant; spend calls must be serialized.

    Unlike a filter, an odometer never refuses: every request is added
    unconditionally and the running bound grows to cover it.
    """

    def __init__(self, schedule: FilterSchedule):
        self.schedule = schedule
        self._spent = [0.0] * len(schedule.orders)
        self._f = [1] * len(schedule.orders)
        self._history: list[OdometerEvent] = []
        self.step = 0

    @property
    def orders(self) -> OrderSet:
        return self.schedule.orders

    @property
    def spent(self) -> RdpCurve:
        return RdpCurve(self.schedule.orders, tuple(self._spent))

    @property
    def history(self) -> tuple[OdometerEvent, ...]:
        return tuple(self._history)


def new_odometer(delta: float, orders: OrderSet) -> OdometerState:
    return OdometerState(FilterSchedule(delta=delta, orders=orders))


def spend(state: OdometerState, request: RdpCurve) -> OdometerState:
    """Add the request at every order; the odometer never refuses."""
    if request.orders.orders != state.schedule.orders.orders:
        raise ValueError("request curve is defined over a different order set")
    base = state.schedule._base
    new_spent = []
    new_f = []
    for i, r in enumerate(request.values):
        total = state._spent[i] + r
        # climb the ladder only; spent is nondecreasing so f never falls
        f = state._f[i]
        while total > math.ldexp(base[i], f - 1):
            f += 1
            if f > MAX_FILTER_INDEX:
                raise ValueError(
                    f"spent budget {total} at order "
                    f"{state.schedule.orders.orders[i]} exceeds the top "
                    f"schedule level {MAX_FILTER_INDEX}"
                )
        new_spent.append(total)
        new_f.append(f)
    state._spent = new_spent
    state._f = new_f
    state.step += 1
    state._history.append(OdometerEvent(index=state.step, request=request))
    return state


def filter_index(state: OdometerState, alpha: float) -> int:
    """Smallest f with spent(alpha) <= level(f, alpha); fresh state gives 1."""
    return state._f[state.schedule.orders.index(alpha)]


def filter_index_from_spent(schedule: FilterSchedule, spent: float, alpha: float) -> int:
    """From-scratch recomputation, for cross-checking the running index."""
    i = schedule.orders.index(alpha)
    f = 1
    while spent > math.ldexp(schedule._base[i], f - 1):
        f += 1
        schedule._check_f(f)
    return f


def bound_candidates(state: OdometerState) -> dict[float, float]:
    """Per-order bound candidates level(f_a, a) + bound_term(f_a, a)."""
    schedule = state.schedule
    return {
        alpha: math.ldexp(schedule._base[i], state._f[i] - 1)
        + schedule.bound_term(state._f[i], i)
        for i, alpha in enumerate(schedule.orders)
    }


def running_bound(state: OdometerState) -> RunningBound:
    """Best candidate over orders; ties go to the smallest order."""
    schedule = state.schedule
    base = schedule._base
    best = math.inf
    best_i = 0
    for i in range(len(base)):
        candidate = math.ldexp(base[i], state._f[i] - 1) + schedule.bound_term(
            state._f[i], i
        )
        if candidate < best:
            best = candidate
            best_i = i
    return RunningBound(
        eps_dp=best,
        witness_order=schedule.orders.orders[best_i],
        witness_level=state._f[best_i],
        delta=schedule.delta,
    )


def early_stopping_bound(
    eps_per_step: Sequence[RdpCurve], s: int, delta: float
) -> DpGuarantee:
    """DP bound for stopping after step s of a pre-declared budget sequence.

    The per-step budgets are fixed in advance; only the stopping index s
    is adaptive. Per order: sum of the first s budgets plus
    ln(2*|orders|*s^2/delta)/(alpha-1), minimized over orders. With a
    single order and s=1 this collapses to rdp_to_dp at delta/2.
    """
    if not eps_per_step:
        raise ValueError("eps_per_step must be nonempty")
    if not isinstance(s, int) or not 1 <= s <= len(eps_per_step):
        raise ValueError(
            f"s must be an integer in [1, {len(eps_per_step)}], got {s}"
        )
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    orders = eps_per_step[0].orders
    for curve in eps_per_step[1:]:
        if curve.orders.orders != orders.orders:
            raise ValueError("step budgets must share one order set")
    m = len(orders)
    log_num = math.log(_log_arg(m, s, delta))
    best = math.inf
    best_alpha = None
    for i, alpha in enumerate(orders):
        total = math.fsum(curve.values[i] for curve in eps_per_step[:s])
        candidate = total + log_num / (alpha - 1.0)
        if candidate < best:
            best = candidate
            best_alpha = alpha
    return DpGuarantee(epsilon=best, delta=delta, witness_order=best_alpha)


def truncate(
    events: Sequence[RdpCurve], schedule: FilterSchedule, f: int, alpha: float
) -> list[RdpCurve]:
    """Cut the sequence where its running sum at alpha first needs a rung
    above f; that entry and everything after become zero curves.

    The comparison mirrors filter_index exactly (running sum <= level
    keeps the entry), including the accumulation order, so a truncated
    sequence routed through an odometer never climbs past rung f at alpha.
    """
    schedule._check_f(f)
    i = schedule.orders.index(alpha)
    limit = math.ldexp(schedule._base[i], f - 1)
    out = []
    total = 0.0
    stopped = False
    for event in events:
        if event.orders.orders != schedule.orders.orders:
            raise ValueError("event curve is defined over a different order set")
        if not stopped:
            nxt = total + event.values[i]
            if nxt <= limit:
                total = nxt
                out.append(event)
                continue
            stopped = True
        out.append(RdpCurve.zeros(event.orders))
    return out
