"""Mechanism catalog: closed-form budget curves and two-world sampling.

Three mechanism kinds are supported. Gaussian mechanisms carry their noise
scale and sensitivity and get an exact closed-form curve. Discrete
mechanisms carry a pair of output distributions, one per neighboring
world, and get a symmetrized divergence curve. Raw curves carry
caller-supplied budget values for mechanisms analyzed elsewhere; they can
be accounted but not sampled.
"""

import math
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

from rdpmeter.core import OrderSet, RdpCurve

PROB_SUM_TOL = 1e-12


@dataclass(frozen=True)
class GaussianMechanism:
    """Additive Gaussian noise with scale sigma on a query of given sensitivity."""

    sigma: float
    sensitivity: float = 1.0

    def __post_init__(self):
        if not math.isfinite(self.sigma) or self.sigma <= 0.0:
            raise ValueError(f"sigma must be finite and > 0, got {self.sigma}")
        if not math.isfinite(self.sensitivity) or self.sensitivity <= 0.0:
            raise ValueError(
                f"sensitivity must be finite and > 0, got {self.sensitivity}"
            )


@dataclass(frozen=True)
class DiscreteMechanism:
    """A finite-output mechanism given by its two neighboring-world distributions.

    Outcome labels are shared between the worlds. Each distribution must
    sum to 1 within PROB_SUM_TOL; drift inside the tolerance is
    renormalized, anything larger is rejected. The two distributions must
    share support, otherwise no finite budget curve exists.
    """

    outcomes: tuple[str, ...]
    p0: tuple[float, ...]
    p1: tuple[float, ...]

    def __post_init__(self):
        outcomes = tuple(str(x) for x in self.outcomes)
        if not outcomes:
            raise ValueError("mechanism must have at least one outcome")
        if len(set(outcomes)) != len(outcomes):
            raise ValueError("outcome labels must be distinct")
        if not (len(outcomes) == len(self.p0) == len(self.p1)):
            raise ValueError("outcomes, p0, p1 must have equal length")
        object.__setattr__(self, "outcomes", outcomes)
        object.__setattr__(self, "p0", self._normalize(self.p0, "p0"))
        object.__setattr__(self, "p1", self._normalize(self.p1, "p1"))
        for a, b in zip(self.p0, self.p1):
            if (a == 0.0) != (b == 0.0):
                raise ValueError(
                    "p0 and p1 must share support; divergence is infinite otherwise"
                )

    @staticmethod
    def _normalize(probs, name):
        values = [float(p) for p in probs]
        for p in values:
            if not math.isfinite(p) or p < 0.0:
                raise ValueError(f"{name} entries must be finite and >= 0, got {p}")
        total = math.fsum(values)
        if abs(total - 1.0) > PROB_SUM_TOL:
            raise ValueError(f"{name} sums to {total}, not 1")
        if total != 1.0:
            values = [p / total for p in values]
            # land on exact unit mass by absorbing the last-ulp residue
            # into the largest entry; construction is then a fixed point,
            # so serialized mechanisms reconstruct bit for bit
            residue = 1.0 - math.fsum(values)
            if residue != 0.0:
                top = max(range(len(values)), key=values.__getitem__)
                values[top] += residue
        return tuple(values)

    def support(self) -> tuple[str, ...]:
        return tuple(x for x, p in zip(self.outcomes, self.p0) if p > 0.0)


@dataclass(frozen=True)
class RawCurve:
    """A pre-analyzed budget curve; participates in accounting only."""

    curve: RdpCurve


Mechanism = Union[GaussianMechanism, DiscreteMechanism, RawCurve]
MechanismSpec = Mechanism


def gaussian_rdp_curve(mech: GaussianMechanism, orders: OrderSet) -> RdpCurve:
    """Budget curve alpha * sensitivity^2 / (2 sigma^2) at each order."""
    scale = mech.sensitivity * mech.sensitivity / (2.0 * mech.sigma * mech.sigma)
    return RdpCurve(orders, tuple(alpha * scale for alpha in orders))


def _renyi_discrete(p: tuple[float, ...], q: tuple[float, ...], alpha: float) -> float:
    # Ratio form q_i * (p_i/q_i)^alpha keeps intermediate terms near the
    # probabilities themselves; fsum removes ordering effects.
    terms = []
    for pi, qi in zip(p, q):
        if pi == 0.0:
            continue
        terms.append(qi * (pi / qi) ** alpha)
    return math.log(math.fsum(terms)) / (alpha - 1.0)


def discrete_rdp_curve(mech: DiscreteMechanism, orders: OrderSet) -> RdpCurve:
    """Symmetrized divergence curve: the worse of the two directions.

    Divergences are clamped at zero; identical distributions can land a
    few ulps negative through the ratio form.
    """
    values = []
    for alpha in orders:
        d01 = _renyi_discrete(mech.p0, mech.p1, alpha)
        d10 = _renyi_discrete(mech.p1, mech.p0, alpha)
        values.append(max(d01, d10, 0.0))
    return RdpCurve(orders, tuple(values))


def mechanism_rdp_curve(mech: Mechanism, orders: OrderSet) -> RdpCurve:
    """Dispatch to the right curve for any catalog mechanism."""
    if isinstance(mech, GaussianMechanism):
        return gaussian_rdp_curve(mech, orders)
    if isinstance(mech, DiscreteMechanism):
        return discrete_rdp_curve(mech, orders)
    if isinstance(mech, RawCurve):
        if mech.curve.orders.orders != orders.orders:
            raise ValueError("raw curve is defined over a different order set")
        return mech.curve
    raise TypeError(f"unknown mechanism type {type(mech).__name__}")


def sample(mech: Mechanism, world: int, rng: np.random.Generator):
    """Draw one output from the world-b distribution.

    Gaussian mechanisms model the worst-case neighboring pair: the query
    answer is 0 in world 0 and shifts by the sensitivity in world 1.
    Deterministic given the generator state.
    """
    if world not in (0, 1):
        raise ValueError(f"world must be 0 or 1, got {world}")
    if isinstance(mech, GaussianMechanism):
        center = 0.0 if world == 0 else mech.sensitivity
        return float(center + rng.normal(0.0, mech.sigma))
    if isinstance(mech, DiscreteMechanism):
        probs = mech.p0 if world == 0 else mech.p1
        idx = rng.choice(len(mech.outcomes), p=np.asarray(probs))
        return mech.outcomes[int(idx)]
    if isinstance(mech, RawCurve):
        raise TypeError("raw curves carry no output distribution to sample")
    raise TypeError(f"unknown mechanism type {type(mech).__name__}")


def mechanism_to_json(mech: Mechanism) -> dict:
    if isinstance(mech, GaussianMechanism):
        return {
            "kind": "gaussian",
            "sigma": mech.sigma,
            "sensitivity": mech.sensitivity,
        }
    if isinstance(mech, DiscreteMechanism):
        return {
            "kind": "discrete",
            "outcomes": list(mech.outcomes),
            "p0": list(mech.p0),
            "p1": list(mech.p1),
        }
    if isinstance(mech, RawCurve):
        return {"kind": "raw", "curve": mech.curve.to_json()}
    raise TypeError(f"unknown mechanism type {type(mech).__name__}")


def mechanism_from_json(data: Mapping) -> Mechanism:
    kind = data.get("kind")
    if kind == "gaussian":
        return GaussianMechanism(
            sigma=float(data["sigma"]),
            sensitivity=float(data.get("sensitivity", 1.0)),
        )
    if kind == "discrete":
        return DiscreteMechanism(
            outcomes=tuple(data["outcomes"]),
            p0=tuple(data["p0"]),
            p1=tuple(data["p1"]),
        )
    if kind == "raw":
        return RawCurve(RdpCurve.from_json(data["curve"]))
    raise ValueError(f"unknown mechanism kind {kind!r}")
