"""Session runner: drives filters and odometers against scripted
adversaries or replayed budget schedules, logs every event, and exports
plot-ready traces.

A session log is a list of JSON-serializable records. The first record is
a header carrying the configuration; each following record is one query.
Logs reconstruct their final accountant state exactly: replay re-executes
every recorded request and cross-checks the recorded decisions and bounds,
so a log that replays cleanly is internally consistent.
"""

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from rdpmeter.core import OrderSet, RdpCurve, curve_add, default_order_set
from rdpmeter.filters import (
    Decision,
    FilterState,
    event_from_json,
    event_to_json,
    new_filter,
    new_filter_from_dp_target,
    try_spend,
)
from rdpmeter.mechanisms import (
    GaussianMechanism,
    Mechanism,
    gaussian_rdp_curve,
    mechanism_from_json,
    mechanism_rdp_curve,
    mechanism_to_json,
    sample,
)
from rdpmeter.odometers import (
    OdometerState,
    RunningBound,
    new_odometer,
    running_bound,
    spend,
)
from rdpmeter.oracle import BOTTOM, AdversaryScript

FILTER = "filter"
ODOMETER = "odometer"


@dataclass(frozen=True)
class ScheduleStep:
    """One epoch of a budget trace: a mechanism applied count times."""

    mech: Mechanism
    count: int = 1

    def __post_init__(self):
        if not isinstance(self.count, int) or self.count < 1:
            raise ValueError(f"count must be an integer >= 1, got {self.count}")


@dataclass(frozen=True)
class ScheduleReplay:
    """A training-run budget trace as a sequence of epochs."""

    steps: tuple[ScheduleStep, ...]

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))

    def to_json(self) -> dict:
        return {
            "steps": [
                {"mech": mechanism_to_json(s.mech), "count": s.count}
                for s in self.steps
            ]
        }

    @classmethod
    def from_json(cls, data: dict) -> "ScheduleReplay":
        return cls(
            steps=tuple(
                ScheduleStep(
                    mech=mechanism_from_json(s["mech"]),
                    count=int(s.get("count", 1)),
                )
                for s in data["steps"]
            )
        )


@dataclass(frozen=True)
class PolicySpec:
    """Parameters of the budget-adaptation rule.

    Every period_epochs epochs, a noisy count query (Gaussian, eval_sigma)
    measures progress. An improvement of at least threshold_sigmas
    standard deviations lowers the per-step budget by raising the noise
    scale one increment, but only while at least min_remaining_epochs more
    epochs fit under the cap at the current rate. Anything less walks the
    noise scale back down, never below the baseline (or sigma_floor).
    batch_increment/batch_floor record the batch-size variant of the rule;
    batch size feeds budgets only through caller-supplied curves, so the
    simulator itself adapts noise.
    """

    period_epochs: int = 10
    threshold_sigmas: float = 3.0
    sigma_increment: float = 0.1
    batch_increment: int = 128
    batch_floor: int = 256
    eval_sigma: float = 100.0
    sigma_floor: Optional[float] = None
    sigma_ceiling: Optional[float] = None
    min_remaining_epochs: int = 50

    def __post_init__(self):
        if self.period_epochs < 1:
            raise ValueError("period_epochs must be >= 1")
        if self.sigma_increment <= 0.0 or self.batch_increment <= 0:
            raise ValueError("increments must be positive")
        if self.threshold_sigmas < 0.0:
            raise ValueError("threshold_sigmas must be >= 0")
        if self.eval_sigma <= 0.0:
            raise ValueError("eval_sigma must be > 0")
        if self.min_remaining_epochs < 0:
            raise ValueError("min_remaining_epochs must be >= 0")

    def to_json(self) -> dict:
        return {
            "period_epochs": self.period_epochs,
            "threshold_sigmas": self.threshold_sigmas,
            "sigma_increment": self.sigma_increment,
            "batch_increment": self.batch_increment,
            "batch_floor": self.batch_floor,
            "eval_sigma": self.eval_sigma,
            "sigma_floor": self.sigma_floor,
            "sigma_ceiling": self.sigma_ceiling,
            "min_remaining_epochs": self.min_remaining_epochs,
        }

    @classmethod
    def from_json(cls, data: dict) -> "PolicySpec":
        return cls(**{k: data[k] for k in data})


@dataclass(frozen=True)
class SessionConfig:
    mode: str
    orders: OrderSet
    delta: float
    seed: int
    source: Union[AdversaryScript, ScheduleReplay]
    cap: Optional[RdpCurve] = None
    dp_target: Optional[float] = None
    sealed: bool = False

    def __post_init__(self):
        if self.mode not in (FILTER, ODOMETER):
            raise ValueError(f"mode must be {FILTER!r} or {ODOMETER!r}")
        if self.mode == FILTER:
            if (self.cap is None) == (self.dp_target is None):
                raise ValueError(
                    "filter mode takes exactly one of cap or dp_target"
                )
            if self.cap is not None and self.cap.orders.orders != self.orders.orders:
                raise ValueError("cap curve and config use different order sets")
        else:
            if self.cap is not None or self.dp_target is not None:
                raise ValueError("odometer mode carries delta and orders only")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")
        if (
            isinstance(self.source, AdversaryScript)
            and self.source.orders is not None
            and self.source.orders.orders != self.orders.orders
        ):
            raise ValueError("script and config use different order sets")


@dataclass
class SessionLog:
    records: list[dict]
    final_state: Union[FilterState, OdometerState, None] = field(
        default=None, compare=False
    )

    @property
    def header(self) -> dict:
        return self.records[0]

    @property
    def events(self) -> list[dict]:
        return self.records[1:]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r) + "\n" for r in self.records)

    @classmethod
    def from_jsonl(cls, text: str) -> "SessionLog":
        records = [json.loads(line) for line in text.splitlines() if line.strip()]
        if not records:
            raise ValueError("session log is empty")
        return cls(records=records)


def _bound_to_json(b: RunningBound) -> dict:
    return {"eps": b.eps_dp, "alpha": b.witness_order, "f": b.witness_level}


def _f_per_alpha(state: OdometerState) -> dict:
    return {
        repr(alpha): state._f[i] for i, alpha in enumerate(state.orders)
    }


def run_session(config: SessionConfig) -> SessionLog:
    """Execute the interaction loop; deterministic given the seed."""
    rng = np.random.default_rng(config.seed)
    header: dict = {
        "kind": config.mode,
        "delta": config.delta,
        "orders": list(config.orders),
        "seed": config.seed,
    }
    if config.mode == FILTER:
        if config.cap is not None:
            state: Union[FilterState, OdometerState] = new_filter(
                config.cap, sealed=config.sealed
            )
        else:
            state = new_filter_from_dp_target(
                config.dp_target, config.delta, config.orders, sealed=config.sealed
            )
            header["dp_target"] = config.dp_target
        header["cap"] = state.cap.to_json()
        if config.sealed:
            header["sealed"] = True
    else:
        state = new_odometer(config.delta, config.orders)
        header["bound"] = _bound_to_json(running_bound(state))
    records = [header]

    def on_request(request: RdpCurve) -> Optional[str]:
        # returns the filter decision so script walks can branch on denial
        if config.mode == FILTER:
            decision = try_spend(state, request)
            records.append(event_to_json(state.history[-1]))
            return decision
        spend(state, request)
        records.append(
            {
                "i": state.step,
                "request": request.to_json(),
                "f_per_alpha": _f_per_alpha(state),
                "bound": _bound_to_json(running_bound(state)),
            }
        )
        return None

    if isinstance(config.source, AdversaryScript):
        node = config.source.root
        while node is not None:
            decision = on_request(node.request)
            if decision is Decision.PASS:
                outcome = BOTTOM
            else:
                outcome = sample(node.mech, 0, rng)
            node = node.children.get(outcome)
    else:
        for step in config.source.steps:
            request = mechanism_rdp_curve(step.mech, config.orders)
            for _ in range(step.count):
                on_request(request)
    return SessionLog(records=records, final_state=state)


def reconstruct(log: SessionLog) -> Union[FilterState, OdometerState]:
    """Rebuild the final accountant state by re-executing the log.

    Recorded decisions, filter indices, and bounds are cross-checked
    against the re-execution; any disagreement raises.
    """
    header = log.header
    kind = header.get("kind")
    if kind == FILTER:
        cap = RdpCurve.from_json(header["cap"])
        state = new_filter(cap, sealed=bool(header.get("sealed", False)))
        for record in log.events:
            event = event_from_json(record)
            got = try_spend(state, event.request)
            if got is not event.decision:
                raise ValueError(
                    f"event {event.index}: log says {event.decision.value}, "
                    f"replay decides {got.value}"
                )
        return state
    if kind == ODOMETER:
        state = new_odometer(float(header["delta"]), OrderSet(header["orders"]))
        for record in log.events:
            spend(state, RdpCurve.from_json(record["request"]))
            if _f_per_alpha(state) != {
                k: int(v) for k, v in record["f_per_alpha"].items()
            }:
                raise ValueError(f"event {record['i']}: filter indices diverge")
            if _bound_to_json(running_bound(state)) != record["bound"]:
                raise ValueError(f"event {record['i']}: running bound diverges")
        return state
    raise ValueError(f"unknown session kind {kind!r}")


# ---------------------------------------------------------------- replays


def replay_schedule(schedule: ScheduleReplay, orders: OrderSet) -> list[RdpCurve]:
    """Cumulative spent curve after each query of the expanded schedule."""
    trace: list[RdpCurve] = []
    total = RdpCurve.zeros(orders)
    for step in schedule.steps:
        request = mechanism_rdp_curve(step.mech, orders)
        for _ in range(step.count):
            total = curve_add(total, request)
            trace.append(total)
    return trace


def schedule_total(schedule: ScheduleReplay, orders: OrderSet) -> RdpCurve:
    trace = replay_schedule(schedule, orders)
    return trace[-1] if trace else RdpCurve.zeros(orders)


def simulate_policy(
    policy: PolicySpec,
    signal: Sequence[float],
    base: ScheduleReplay,
    orders: Optional[OrderSet] = None,
) -> ScheduleReplay:
    """Apply the adaptation rule to a baseline schedule, accounting only.

    The baseline's total spend acts as the budget cap, matching a run
    that must live inside the same total loss as its non-adaptive
    counterpart. The progress signal is an external input, one
    measurement per period; each period also pays for its own evaluation
    query, which is appended to the emitted schedule.
    """
    if orders is None:
        orders = default_order_set()
    for step in base.steps:
        if not isinstance(step.mech, GaussianMechanism):
            raise ValueError("the noise-adaptation rule needs Gaussian steps")
    n_periods = len(base.steps) // policy.period_epochs
    if len(signal) != n_periods:
        raise ValueError(
            f"signal has {len(signal)} entries for {n_periods} periods "
            f"({len(base.steps)} epochs / {policy.period_epochs} per period)"
        )
    cap = schedule_total(base, orders)
    eval_mech = GaussianMechanism(sigma=policy.eval_sigma, sensitivity=1.0)
    eval_curve = gaussian_rdp_curve(eval_mech, orders)
    threshold = policy.threshold_sigmas * policy.eval_sigma

    spent = [0.0] * len(orders)
    offset = 0.0
    out: list[ScheduleStep] = []
    for e, step in enumerate(base.steps):
        mech = step.mech
        sigma = mech.sigma + offset
        if policy.sigma_floor is not None:
            sigma = max(sigma, policy.sigma_floor)
        if policy.sigma_ceiling is not None:
            sigma = min(sigma, policy.sigma_ceiling)
        adapted = GaussianMechanism(sigma=sigma, sensitivity=mech.sensitivity)
        out.append(ScheduleStep(mech=adapted, count=step.count))
        epoch_curve = gaussian_rdp_curve(adapted, orders)
        for i in range(len(orders)):
            spent[i] += step.count * epoch_curve.values[i]
        if (e + 1) % policy.period_epochs == 0:
            period = (e + 1) // policy.period_epochs - 1
            out.append(ScheduleStep(mech=eval_mech, count=1))
            for i in range(len(orders)):
                spent[i] += eval_curve.values[i]
            if signal[period] >= threshold:
                # budget decrease (more noise), gated on plenty of
                # training still fitting under the cap at today's rate
                if _epochs_admitted(cap, spent, adapted, step.count, orders) >= (
                    policy.min_remaining_epochs
                ):
                    offset += policy.sigma_increment
            else:
                offset = max(0.0, offset - policy.sigma_increment)
    return ScheduleReplay(steps=tuple(out))


def _epochs_admitted(
    cap: RdpCurve,
    spent: Sequence[float],
    mech: GaussianMechanism,
    count: int,
    orders: OrderSet,
) -> int:
    """How many more epochs at this per-epoch rate fit under the cap."""
    rate = gaussian_rdp_curve(mech, orders)
    best = 0
    for i in range(len(orders)):
        headroom = cap.values[i] - spent[i]
        per_epoch = count * rate.values[i]
        if headroom > 0.0 and per_epoch > 0.0:
            best = max(best, int(headroom / per_epoch))
    return best


# ----------------------------------------------------------------- export


def export(log: SessionLog, fmt: str, path: str) -> str:
    """Write the log as JSONL ("json") or a flat table ("csv")."""
    fmt = fmt.lower()
    if fmt in ("json", "jsonl"):
        payload = log.to_jsonl()
    elif fmt == "csv":
        payload = log_to_csv(log)
    else:
        raise ValueError(f"unknown export format {fmt!r}")
    try:
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(payload)
    except OSError as exc:
        raise OSError(f"cannot write session log to {path}: {exc}") from exc
    return path


def log_to_csv(log: SessionLog) -> str:
    """Flatten a session log: one row per event, cumulative spent columns."""
    header = log.header
    kind = header.get("kind")
    orders = [float(a) for a in header["orders"]]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if kind == FILTER:
        writer.writerow(
            ["step", "decision"] + [f"spent_{a}" for a in orders]
        )
        spent = [0.0] * len(orders)
        for record in log.events:
            if record["decision"] == Decision.GRANT.value:
                for i, v in enumerate(record["request"]["eps"]):
                    spent[i] += v
            writer.writerow(
                [record["i"], record["decision"]] + [repr(v) for v in spent]
            )
    elif kind == ODOMETER:
        writer.writerow(
            ["step"]
            + [f"spent_{a}" for a in orders]
            + [f"f_{a}" for a in orders]
            + ["eps_dp"]
        )
        spent = [0.0] * len(orders)
        for record in log.events:
            for i, v in enumerate(record["request"]["eps"]):
                spent[i] += v
            f_per_alpha = record["f_per_alpha"]
            writer.writerow(
                [record["i"]]
                + [repr(v) for v in spent]
                + [f_per_alpha[repr(a)] for a in orders]
                + [repr(record["bound"]["eps"])]
            )
    else:
        raise ValueError(f"unknown session kind {kind!r}")
    return buf.getvalue()
