"""Privacy filter: grant/PASS decisions under an adaptive budget cap.

The filter holds a per-order cap curve and the running sum of granted
requests. A request is denied (PASS) only when it would overshoot the cap
at every tracked order; otherwise it is granted and added at every order,
including orders already over their cap. One order staying within its cap
is what the final guarantee needs, and tracking all orders keeps the
choice of witness open until conversion time.

Denials are per query: a PASSed query contributes nothing and later,
smaller requests may still be granted. Callers wanting a terminal filter
can construct it with sealed=True, which denies everything after the
first PASS.
"""

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, TextIO, Union

from rdpmeter.core import OrderSet, RdpCurve, dp_target_to_rdp_budget


class Decision(str, Enum):
    GRANT = "GRANT"
    PASS = "PASS"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class FilterEvent:
    """One decision: query index (from 1), the request, and the outcome."""

    index: int
    request: RdpCurve
    decision: Decision


@dataclass
class FilterState:
    """Single-owner mutable accountant; try_spend calls must be serialized."""

    cap: RdpCurve
    sealed: bool = False
    _spent: list[float] = field(init=False)
    _history: list[FilterEvent] = field(init=False, default_factory=list)
    _passed_once: bool = field(init=False, default=False)

    def __post_init__(self):
        self._spent = [0.0] * len(self.cap.orders)

    @property
    def orders(self) -> OrderSet:
        return self.cap.orders

    @property
    def spent(self) -> RdpCurve:
        return RdpCurve(self.cap.orders, tuple(self._spent))

    @property
    def history(self) -> tuple[FilterEvent, ...]:
        return tuple(self._history)


def new_filter(cap: RdpCurve, sealed: bool = False) -> FilterState:
    """Fresh filter: nothing spent, empty history."""
    return FilterState(cap=cap, sealed=sealed)


def new_filter_from_dp_target(
    eps_dp: float, delta: float, orders: OrderSet, sealed: bool = False
) -> FilterState:
    """Filter whose granted total always converts back within (eps_dp, delta)."""
    return new_filter(dp_target_to_rdp_budget(eps_dp, delta, orders), sealed=sealed)


def try_spend(state: FilterState, request: RdpCurve) -> Decision:
    """Grant the request if it fits under the cap at any order.

    PASS exactly when spent + request > cap at every order; the
    comparison is strict, so a request landing exactly on the cap is
    granted. Decisions are a pure function of (spent, request, cap);
    PASS leaves spent bit-identical.
    """
    if request.orders.orders != state.cap.orders.orders:
        raise ValueError("request curve is defined over a different order set")
    if state.sealed and state._passed_once:
        decision = Decision.PASS
    else:
        fits = any(
            s + r <= c
            for s, r, c in zip(state._spent, request.values, state.cap.values)
        )
        decision = Decision.GRANT if fits else Decision.PASS
    if decision is Decision.GRANT:
        for i, r in enumerate(request.values):
            state._spent[i] += r
    else:
        state._passed_once = True
    state._history.append(
        FilterEvent(index=len(state._history) + 1, request=request, decision=decision)
    )
    return decision


def remaining(state: FilterState) -> RdpCurve:
    """Headroom curve: pointwise max(0, cap - spent)."""
    return RdpCurve(
        state.cap.orders,
        tuple(max(0.0, c - s) for c, s in zip(state.cap.values, state._spent)),
    )


# ------------------------------------------------------------- event logs


def event_to_json(event: FilterEvent) -> dict:
    return {
        "i": event.index,
        "request": event.request.to_json(),
        "decision": event.decision.value,
    }


def event_from_json(data: dict) -> FilterEvent:
    return FilterEvent(
        index=int(data["i"]),
        request=RdpCurve.from_json(data["request"]),
        decision=Decision(data["decision"]),
    )


def write_event_log(state: FilterState, stream: TextIO) -> None:
    """One JSON object per line, in event order."""
    for event in state._history:
        stream.write(json.dumps(event_to_json(event)) + "\n")


def replay_events(
    cap: RdpCurve,
    events: Iterable[Union[FilterEvent, dict]],
    sealed: bool = False,
) -> FilterState:
    """Reconstruct a filter by re-running every logged request.

    Decisions are recomputed, not trusted: a logged decision that
    disagrees with the recomputation means the log and the cap do not
    belong together, and that is an error.
    """
    state = new_filter(cap, sealed=sealed)
    for event in events:
        if isinstance(event, dict):
            event = event_from_json(event)
        got = try_spend(state, event.request)
        if got is not event.decision:
            raise ValueError(
                f"event {event.index}: log says {event.decision.value}, "
                f"replay decides {got.value}"
            )
    return state
