"""Ground-truth verification by brute force.

Adaptive adversaries over finite-output mechanisms are finite decision
trees, so their two view distributions (one per neighboring world) can be
enumerated exactly: each leaf's probability is the product of conditional
outcome probabilities along its path. Divergences computed on those views
certify the accountants' bounds end to end, independently of the
accounting code paths. Gaussian curves, which have no finite view tree,
are certified separately by adaptive quadrature.

Denied and truncated steps emit a dedicated null outcome with probability
one in both worlds. Such a factor contributes nothing to any divergence,
which is exactly why denied queries are free. After truncation every
later output is deterministically null in both worlds, so the tail is
collapsed into a single terminal null without changing any divergence.
"""

import math
import random
from dataclasses import dataclass, field
from typing import Mapping, Optional, Union

from scipy import integrate

from rdpmeter.core import OrderSet, RdpCurve
from rdpmeter.mechanisms import (
    DiscreteMechanism,
    discrete_rdp_curve,
    mechanism_from_json,
    mechanism_to_json,
)
from rdpmeter.odometers import FilterSchedule

BOTTOM = "⊥"  # the null outcome emitted for denied/truncated steps
MAX_DEPTH = 8
MAX_OUTCOMES = 6
VERIFY_TOL = 1e-9

_STOP = "STOP"


@dataclass(frozen=True)
class ScriptNode:
    """One adversary move: a mechanism, its declared budget, and the
    follow-up move for every outcome the adversary might observe.

    Missing children (including the null outcome) mean the adversary
    stops after seeing that outcome.
    """

    mech: DiscreteMechanism
    request: RdpCurve
    children: Mapping[str, Optional["ScriptNode"]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "children", dict(self.children))


@dataclass(frozen=True)
class AdversaryScript:
    """A finite adaptive strategy; root None means stop immediately.

    Declared request curves must dominate the mechanisms' true curves at
    every order: an adversary may over-declare (slack) but never
    under-declare.
    """

    root: Optional[ScriptNode]

    def __post_init__(self):
        if self.root is not None:
            _validate_node(self.root, 1, self.root.request.orders)

    @property
    def orders(self) -> Optional[OrderSet]:
        return None if self.root is None else self.root.request.orders

    def depth(self) -> int:
        return _depth(self.root)


def _depth(node: Optional[ScriptNode]) -> int:
    if node is None:
        return 0
    return 1 + max((_depth(c) for c in node.children.values()), default=0)


def _validate_node(node: ScriptNode, depth: int, orders: OrderSet) -> None:
    if depth > MAX_DEPTH:
        raise ValueError(f"script deeper than the supported maximum {MAX_DEPTH}")
    if not isinstance(node.mech, DiscreteMechanism):
        raise ValueError("only finite-output mechanisms can be enumerated")
    if len(node.mech.outcomes) > MAX_OUTCOMES:
        raise ValueError(
            f"mechanism has {len(node.mech.outcomes)} outcomes; "
            f"the enumeration cap is {MAX_OUTCOMES}"
        )
    if BOTTOM in node.mech.outcomes:
        raise ValueError(f"outcome label {BOTTOM!r} is reserved for denied steps")
    if node.request.orders.orders != orders.orders:
        raise ValueError("every request in a script must share one order set")
    true_curve = discrete_rdp_curve(node.mech, orders)
    for alpha, declared, true in zip(orders, node.request.values, true_curve.values):
        if declared < true:
            raise ValueError(
                f"declared budget {declared} under-declares the true value "
                f"{true} at order {alpha}"
            )
    allowed = set(node.mech.outcomes) | {BOTTOM}
    for label, child in node.children.items():
        if label not in allowed:
            raise ValueError(f"child outcome {label!r} is not produced here")
        if child is not None:
            _validate_node(child, depth + 1, orders)


@dataclass(frozen=True)
class ViewDistribution:
    """Probability of each complete outcome sequence in one world."""

    probs: Mapping[tuple, float]

    def total(self) -> float:
        return math.fsum(self.probs.values())

    def __len__(self) -> int:
        return len(self.probs)


# -------------------------------------------------------------- policies


@dataclass(frozen=True)
class FilterPolicy:
    """Route requests through a budget cap; denials emit the null outcome
    and the interaction continues."""

    cap: RdpCurve

    def initial(self):
        return (0.0,) * len(self.cap.orders)

    def admit(self, spent, request: RdpCurve):
        fits = any(
            s + r <= c
            for s, r, c in zip(spent, request.values, self.cap.values)
        )
        if fits:
            return "deliver", tuple(
                s + r for s, r in zip(spent, request.values)
            )
        return "pass", spent


@dataclass(frozen=True)
class OdometerPolicy:
    """Deliver everything; plain unconditional composition."""

    def initial(self):
        return None

    def admit(self, carry, request: RdpCurve):
        return "deliver", None


@dataclass(frozen=True)
class TruncationPolicy:
    """Terminate the interaction once the running sum at one order would
    climb past the given schedule level."""

    schedule: FilterSchedule
    f: int
    alpha: float

    def initial(self):
        return 0.0

    def admit(self, total, request: RdpCurve):
        nxt = total + request.value(self.alpha)
        if nxt <= self.schedule.level(self.f, self.alpha):
            return "deliver", nxt
        return "stop", total


Policy = Union[FilterPolicy, OdometerPolicy, TruncationPolicy]


# ------------------------------------------------------------ enumeration


def enumerate_views(
    script: AdversaryScript, policy: Policy
) -> tuple[ViewDistribution, ViewDistribution]:
    """Exact view distributions for both worlds under the given policy."""
    out0: dict[tuple, float] = {}
    out1: dict[tuple, float] = {}
    _walk(script.root, 1.0, 1.0, (), policy.initial(), policy, out0, out1)
    for world, out in (("0", out0), ("1", out1)):
        total = math.fsum(out.values())
        if abs(total - 1.0) > 1e-9:
            raise ArithmeticError(
                f"world-{world} view probabilities sum to {total}"
            )
    return ViewDistribution(out0), ViewDistribution(out1)


def _walk(node, prob0, prob1, prefix, carry, policy, out0, out1):
    if node is None:
        out0[prefix] = out0.get(prefix, 0.0) + prob0
        out1[prefix] = out1.get(prefix, 0.0) + prob1
        return
    action, carry = policy.admit(carry, node.request)
    if action == "pass":
        # denied: null outcome with probability 1 in both worlds, the
        # adversary sees it and may continue
        _walk(
            node.children.get(BOTTOM),
            prob0,
            prob1,
            prefix + (BOTTOM,),
            carry,
            policy,
            out0,
            out1,
        )
        return
    if action == "stop":
        # truncated: deterministic null from here on, collapsed to one symbol
        key = prefix + (BOTTOM,)
        out0[key] = out0.get(key, 0.0) + prob0
        out1[key] = out1.get(key, 0.0) + prob1
        return
    mech = node.mech
    for label, q0, q1 in zip(mech.outcomes, mech.p0, mech.p1):
        if q0 == 0.0:
            continue  # shared support: q1 is 0 too, the branch never occurs
        _walk(
            node.children.get(label),
            prob0 * q0,
            prob1 * q1,
            prefix + (label,),
            carry,
            policy,
            out0,
            out1,
        )


def renyi_divergence_views(
    v0: ViewDistribution, v1: ViewDistribution, alpha: float
) -> float:
    """Exact divergence of order alpha between two view distributions."""
    if alpha <= 1.0:
        raise ValueError(f"alpha must be > 1, got {alpha}")
    support0 = {k for k, p in v0.probs.items() if p > 0.0}
    support1 = {k for k, p in v1.probs.items() if p > 0.0}
    if support0 != support1:
        raise ValueError("view supports differ; the divergence is infinite")
    terms = [
        math.exp(alpha * math.log(v0.probs[k]) + (1.0 - alpha) * math.log(v1.probs[k]))
        for k in support0
    ]
    return math.log(math.fsum(terms)) / (alpha - 1.0)


def _symmetric_divergence(v0, v1, alpha):
    return max(
        renyi_divergence_views(v0, v1, alpha),
        renyi_divergence_views(v1, v0, alpha),
    )


# ------------------------------------------------------------ verification


@dataclass(frozen=True)
class OracleReport:
    """Per-order divergences against their bounds.

    requirement "any" passes when one order is within its bound (a budget
    cap only needs a single surviving order); "all" demands every order
    hold (each truncation level is its own guarantee).
    """

    kind: str
    ok: bool
    orders: tuple[float, ...]
    divergences: tuple[float, ...]
    bounds: tuple[float, ...]
    margins: tuple[float, ...]
    witness_order: Optional[float]
    requirement: str
    tolerance: float = VERIFY_TOL

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "ok": self.ok,
            "orders": list(self.orders),
            "divergence": list(self.divergences),
            "bound": list(self.bounds),
            "margin": list(self.margins),
            "witness_order": self.witness_order,
            "requirement": self.requirement,
            "tolerance": self.tolerance,
        }


def verify_filter_bound(script: AdversaryScript, cap: RdpCurve) -> OracleReport:
    """Certify that views under the cap stay within it at some order."""
    if script.orders is not None and script.orders.orders != cap.orders.orders:
        raise ValueError("script and cap use different order sets")
    v0, v1 = enumerate_views(script, FilterPolicy(cap))
    divergences = tuple(
        _symmetric_divergence(v0, v1, alpha) for alpha in cap.orders
    )
    margins = tuple(c - d for c, d in zip(cap.values, divergences))
    witness = next(
        (a for a, m in zip(cap.orders, margins) if m >= -VERIFY_TOL), None
    )
    return OracleReport(
        kind="filter",
        ok=witness is not None,
        orders=cap.orders.orders,
        divergences=divergences,
        bounds=cap.values,
        margins=margins,
        witness_order=witness,
        requirement="any",
    )


def verify_truncated_odometer(
    script: AdversaryScript, schedule: FilterSchedule, f: int
) -> OracleReport:
    """Certify every order's truncated views against its own level."""
    if (
        script.orders is not None
        and script.orders.orders != schedule.orders.orders
    ):
        raise ValueError("script and schedule use different order sets")
    divergences = []
    bounds = []
    for alpha in schedule.orders:
        v0, v1 = enumerate_views(script, TruncationPolicy(schedule, f, alpha))
        divergences.append(_symmetric_divergence(v0, v1, alpha))
        bounds.append(schedule.level(f, alpha))
    margins = tuple(b - d for b, d in zip(bounds, divergences))
    ok = all(m >= -VERIFY_TOL for m in margins)
    witness = next(
        (a for a, m in zip(schedule.orders, margins) if m >= -VERIFY_TOL), None
    )
    return OracleReport(
        kind="truncated-odometer",
        ok=ok,
        orders=schedule.orders.orders,
        divergences=tuple(divergences),
        bounds=tuple(bounds),
        margins=margins,
        witness_order=witness,
        requirement="all",
    )


# -------------------------------------------------------------- quadrature


def numeric_renyi_gaussian(sigma: float, shift: float, alpha: float) -> float:
    """Divergence between N(0, sigma^2) and N(shift, sigma^2) by quadrature.

    The integrand exp(alpha*log p0 + (1-alpha)*log p1) is a Gaussian bump
    centered at -(alpha-1)*shift, far from the distributions' own means
    for large alpha, and its peak overflows double precision in raw form.
    Integrating exp(g - g_max) over a window around the peak (widened to
    cover both distributions) keeps everything in range; the peak height
    is added back in log space.
    """
    if sigma <= 0.0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    if alpha <= 1.0:
        raise ValueError(f"alpha must be > 1, got {alpha}")
    if shift < 0.0:
        raise ValueError(f"shift must be >= 0, got {shift}")
    lognorm = math.log(sigma * math.sqrt(2.0 * math.pi))

    def g(x: float) -> float:
        return (
            -(alpha * x * x + (1.0 - alpha) * (x - shift) ** 2)
            / (2.0 * sigma * sigma)
            - lognorm
        )

    mode = -(alpha - 1.0) * shift  # the quadratic's stationary point
    gmax = g(mode)
    lo = min(-20.0 * sigma, mode - 25.0 * sigma)
    hi = max(shift + 20.0 * sigma, mode + 25.0 * sigma)
    value, err = integrate.quad(
        lambda x: math.exp(g(x) - gmax), lo, hi, epsabs=1e-12, epsrel=1e-12, limit=200
    )
    if value <= 0.0 or err / value > 1e-8 * (alpha - 1.0):
        raise ArithmeticError(
            f"quadrature did not converge (value={value}, err={err})"
        )
    return (gmax + math.log(value)) / (alpha - 1.0)


# ------------------------------------------------------------ script corpus


def random_script(
    rng: random.Random,
    orders: OrderSet,
    max_depth: int = 4,
    max_outcomes: int = 4,
    continue_prob: float = 0.7,
    bottom_child_prob: float = 0.4,
    slack_prob: float = 0.3,
) -> AdversaryScript:
    """Random adaptive script for corpus testing.

    Children differ per observed outcome, so the strategies are genuinely
    adaptive; a fraction of nodes over-declare their budgets (slack), and
    a fraction plan a follow-up move for the null outcome so denial paths
    stay adaptive too.
    """

    def gen(depth: int) -> ScriptNode:
        n = rng.randint(2, max_outcomes)
        p0 = _random_probs(rng, n)
        p1 = _random_probs(rng, n)
        mech = DiscreteMechanism(
            tuple(f"v{i}" for i in range(n)), tuple(p0), tuple(p1)
        )
        true_curve = discrete_rdp_curve(mech, orders)
        if rng.random() < slack_prob:
            factor = rng.uniform(1.0, 1.5)
            request = RdpCurve(
                orders, tuple(factor * v for v in true_curve.values)
            )
        else:
            request = true_curve
        children: dict[str, Optional[ScriptNode]] = {}
        if depth < max_depth:
            for label in mech.outcomes:
                if rng.random() < continue_prob:
                    children[label] = gen(depth + 1)
            if rng.random() < bottom_child_prob:
                children[BOTTOM] = gen(depth + 1)
        return ScriptNode(mech=mech, request=request, children=children)

    return AdversaryScript(root=gen(1))


def _random_probs(rng: random.Random, n: int) -> list[float]:
    weights = [rng.uniform(0.05, 1.0) for _ in range(n)]
    total = math.fsum(weights)
    return [w / total for w in weights]


# ------------------------------------------------------------ serialization


def script_to_json(script: AdversaryScript) -> Union[dict, str]:
    if script.root is None:
        return _STOP
    return _node_to_json(script.root)


def _node_to_json(node: ScriptNode) -> dict:
    return {
        "mech": mechanism_to_json(node.mech),
        "request": node.request.to_json(),
        "children": {
            label: _STOP if child is None else _node_to_json(child)
            for label, child in node.children.items()
        },
    }


def script_from_json(data: Union[dict, str]) -> AdversaryScript:
    if data == _STOP:
        return AdversaryScript(root=None)
    return AdversaryScript(root=_node_from_json(data))


def _node_from_json(data: dict) -> ScriptNode:
    mech = mechanism_from_json(data["mech"])
    request = RdpCurve.from_json(data["request"])
    children = {
        label: None if child == _STOP else _node_from_json(child)
        for label, child in data.get("children", {}).items()
    }
    return ScriptNode(mech=mech, request=request, children=children)
