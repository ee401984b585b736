"""Isolation-efficiency mathematics and branching-factor laws.

An isolation tree with (average) branching factor ``v`` and depth ``d`` can
isolate at most ``v**d`` instances (its isolation capacity) while spending a
width-times-depth budget of ``v*d`` (its isolation area).  Isolation
efficiency is capacity per unit area::

    eta(v, d) = v**d / (v * d)

Holding the area fixed at ``Phi`` turns efficiency into a one-variable
function ``eta(v) = (1/Phi) * v**(Phi/v)`` whose unique maximum sits at
``v = e`` regardless of ``Phi``.  Real trees branch integrally, so the
optimum is realised on average by drawing integer branching factors from a
law with mean ``e``.  This module provides the efficiency functions, the
bracketing maximizer, the four supported branching laws, and numeric
validators for the constraints every mean-``e`` law must satisfy:

* total mass 1 and mean exactly ``e``,
* tail bound ``Pr(V >= v) <= (e-2)/(v-2)`` for ``v > 2``,
* floor ``p_2 >= 3 - e`` on the probability of a binary fork.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

E = math.e

# exp() overflows above ~709.78; reject a little earlier so v**d stays finite
_MAX_LOG_CAPACITY = 700.0

# Unbounded laws are truncated at this branching factor or at cumulative
# mass 1 - _TRUNCATION_TAIL, whichever comes first; the residual mass is
# folded into the last kept value so samplers draw from a proper law.
_TRUNCATION_HORIZON = 64
_TRUNCATION_TAIL = 1e-12

_SEARCH_UPPER = 32.0  # upper bracket for the efficiency maximizer


def isolation_efficiency(v: float, d: float) -> float:
    """Efficiency eta = v**d / (v*d) of a tree with branching v and depth d.

    Both arguments may be real-valued (fractional v/d model the average
    shape of an ensemble member).  Raises ``ValueError`` outside the domain
    v > 1, d > 0 and ``OverflowError`` when v**d is not representable.
    """
    if v <= 1.0:
        raise ValueError(f"branching factor must be > 1, got {v}")
    if d <= 0.0:
        raise ValueError(f"depth must be > 0, got {d}")
    if d * math.log(v) > _MAX_LOG_CAPACITY:
        raise OverflowError(f"v**d overflows for v={v}, d={d}")
    return v**d / (v * d)


def efficiency_at_fixed_area(v: float, area: float) -> float:
    """Efficiency as a function of v alone, with the area pinned to ``area``.

    Substituting d = area/v into ``isolation_efficiency`` gives
    ``(1/area) * v**(area/v)``.
    """
    if v <= 1.0:
        raise ValueError(f"branching factor must be > 1, got {v}")
    if area <= 0.0:
        raise ValueError(f"isolation area must be > 0, got {area}")
    return v ** (area / v) / area


def efficiency_derivative(v: float, area: float) -> float:
    """Derivative of ``efficiency_at_fixed_area`` with respect to v.

    Closed form ``v**(area/v - 2) * (1 - ln v)``: positive below v = e,
    zero at v = e, negative above, which is what makes the maximizer's
    bracketing sound.
    """
    if v <= 1.0:
        raise ValueError(f"branching factor must be > 1, got {v}")
    if area <= 0.0:
        raise ValueError(f"isolation area must be > 0, got {area}")
    return v ** (area / v - 2.0) * (1.0 - math.log(v))


def optimal_branching(area: float, tol: float = 1e-6) -> float:
    """Argmax of ``efficiency_at_fixed_area`` over v in [1+tol, 32].

    Golden-section search; the objective is unimodal on the bracket (the
    derivative changes sign exactly once), so the result is within ``tol``
    of the true optimum v = e for every area.
    """
    if area <= 0.0:
        raise ValueError(f"isolation area must be > 0, got {area}")
    if not 0.0 < tol < 0.1:
        raise ValueError(f"tol must be in (0, 0.1), got {tol}")
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    lo, hi = 1.0 + tol, _SEARCH_UPPER
    c = hi - inv_phi * (hi - lo)
    d = lo + inv_phi * (hi - lo)
    fc = efficiency_at_fixed_area(c, area)
    fd = efficiency_at_fixed_area(d, area)
    while hi - lo > tol:
        if fc > fd:
            hi, d, fd = d, c, fc
            c = hi - inv_phi * (hi - lo)
            fc = efficiency_at_fixed_area(c, area)
        else:
            lo, c, fc = c, d, fd
            d = lo + inv_phi * (hi - lo)
            fd = efficiency_at_fixed_area(d, area)
    return 0.5 * (lo + hi)


def tail_bound(v: int) -> float:
    """Upper bound (e-2)/(v-2) on Pr(V >= v) for any mean-e branching law."""
    if v < 3:
        raise ValueError(f"tail bound is defined for v >= 3, got {v}")
    return (E - 2.0) / (v - 2.0)


def efficiency_curve(
    area: float, v_min: float = 1.1, v_max: float = 10.0, step: float = 0.01
) -> np.ndarray:
    """(v, eta) pairs sampled on a grid, for plotting the efficiency curve."""
    grid = np.arange(v_min, v_max + 0.5 * step, step)
    values = np.array([efficiency_at_fixed_area(float(v), area) for v in grid])
    return np.column_stack([grid, values])


# ---------------------------------------------------------------------------
# Branching-factor laws
# ---------------------------------------------------------------------------

#: Ratio of the geometric mean-e law.  A geometric law p_v = (1-r) r**(v-2)
#: has mean 2 + r/(1-r); solving mean = e gives r = (e-2)/(e-1).
GEOMETRIC_RATIO = (E - 2.0) / (E - 1.0)

_KINDS = ("finite23", "geometric", "factorial", "fixed")


@dataclass(frozen=True)
class BranchingDistribution:
    """Probability law over integer branching factors v >= 2.

    Four kinds are supported:

    ``finite23``
        p_2 = 3-e, p_3 = e-2, zero elsewhere.  Mean is exactly e; the
        only mass the merge step has to handle is on binary and ternary
        forks, which keeps the subset scan cheap.
    ``geometric``
        p_v = (1/(e-1)) * ((e-2)/(e-1))**(v-2).  Geometrically decaying
        with mass 1 and mean exactly e.
    ``factorial``
        p_v = (v-1)/v!.  Telescopes to mass 1; mean is e because
        sum v(v-1)/v! = sum 1/(v-2)!.
    ``fixed``
        Degenerate at v0 >= 2.  Used for branching-factor ablations; its
        mean is v0, so it fails the mean-e validation unless v0 happens
        to be near e (it never is, v0 being an integer).
    """

    kind: str
    v0: Optional[int] = None

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if self.kind == "fixed":
            if self.v0 is None or self.v0 < 2:
                raise ValueError("fixed law needs an integer v0 >= 2")
        elif self.v0 is not None:
            raise ValueError(f"{self.kind} law takes no v0 parameter")

    @classmethod
    def finite23(cls) -> "BranchingDistribution":
        return cls("finite23")

    @classmethod
    def geometric(cls) -> "BranchingDistribution":
        return cls("geometric")

    @classmethod
    def factorial(cls) -> "BranchingDistribution":
        return cls("factorial")

    @classmethod
    def fixed(cls, v0: int) -> "BranchingDistribution":
        return cls("fixed", v0)

    def pmf(self, v: int) -> float:
        """Probability of drawing branching factor v (0 outside support)."""
        if v < 2:
            return 0.0
        if self.kind == "finite23":
            if v == 2:
                return 3.0 - E
            if v == 3:
                return E - 2.0
            return 0.0
        if self.kind == "geometric":
            return (1.0 / (E - 1.0)) * GEOMETRIC_RATIO ** (v - 2)
        if self.kind == "factorial":
            return (v - 1) / math.factorial(v)
        return 1.0 if v == self.v0 else 0.0

    def mass(self, v_max: int = 50) -> float:
        """Partial sum of the pmf over v = 2..v_max."""
        return math.fsum(self.pmf(v) for v in range(2, v_max + 1))

    def mean(self, v_max: int = 50) -> float:
        """Partial sum of v * p_v over v = 2..v_max."""
        return math.fsum(v * self.pmf(v) for v in range(2, v_max + 1))

    def tail(self, v: int, v_max: int = 200) -> float:
        """Pr(V >= v) by partial summation up to v_max."""
        return math.fsum(self.pmf(i) for i in range(v, v_max + 1))

    def support_table(self) -> tuple[np.ndarray, np.ndarray]:
        """Truncated support values and probabilities, renormalized to sum 1.

        Unbounded laws stop at v = 64 or once cumulative mass reaches
        1 - 1e-12; the residual is assigned to the last kept value so the
        sampler draws from a proper distribution.
        """
        if self.kind == "fixed":
            return np.array([self.v0]), np.array([1.0])
        if self.kind == "finite23":
            return np.array([2, 3]), np.array([3.0 - E, E - 2.0])
        values: list[int] = []
        probs: list[float] = []
        cumulative = 0.0
        for v in range(2, _TRUNCATION_HORIZON + 1):
            p = self.pmf(v)
            values.append(v)
            probs.append(p)
            cumulative += p
            if cumulative >= 1.0 - _TRUNCATION_TAIL:
                break
        probs[-1] += max(0.0, 1.0 - cumulative)
        return np.array(values), np.array(probs)

    def sample(self, rng: np.random.Generator, size: Optional[int] = None):
        """Draw branching factors by inverse-CDF lookup on the support table.

        Returns a Python int when ``size`` is None, else an int64 array.
        """
        values, probs = self.support_table()
        cdf = np.cumsum(probs)
        cdf[-1] = 1.0
        if size is None:
            return int(values[np.searchsorted(cdf, rng.random(), side="right")])
        idx = np.searchsorted(cdf, rng.random(size), side="right")
        return values[idx].astype(np.int64)


@dataclass(frozen=True)
class DistributionReport:
    """Validation summary for one branching law; failures are entries, not errors."""

    kind: str
    v0: Optional[int]
    mass: float
    mean: float
    p2: float
    max_bound_violation: float
    mass_ok: bool
    mean_ok: bool
    p2_ok: bool
    bound_ok: bool

    @property
    def passed(self) -> bool:
        return self.mass_ok and self.mean_ok and self.p2_ok and self.bound_ok

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "v0": self.v0,
            "mass": self.mass,
            "mean": self.mean,
            "p2": self.p2,
            "max_bound_violation": self.max_bound_violation,
            "mass_ok": self.mass_ok,
            "mean_ok": self.mean_ok,
            "p2_ok": self.p2_ok,
            "bound_ok": self.bound_ok,
            "passed": self.passed,
        }


def validate_distribution(dist: BranchingDistribution) -> DistributionReport:
    """Check mass, mean-e, the tail bound on v in [3, 20], and the p_2 floor.

    Partial sums run to v = 50, deep enough that truncation error for every
    supported law is far below the 1e-10 check tolerance.
    """
    mass = dist.mass(50)
    mean = dist.mean(50)
    p2 = dist.pmf(2)
    violations = [dist.tail(v) - tail_bound(v) for v in range(3, 21)]
    max_violation = max(violations)
    return DistributionReport(
        kind=dist.kind,
        v0=dist.v0,
        mass=mass,
        mean=mean,
        p2=p2,
        max_bound_violation=max_violation,
        mass_ok=(1.0 - 1e-10 <= mass <= 1.0 + 1e-12),
        mean_ok=abs(mean - E) <= 1e-10,
        p2_ok=p2 >= (3.0 - E) - 1e-12,
        bound_ok=max_violation <= 1e-12,
    )


def theory_report(
    areas: tuple[float, ...] = (1.0, 6.0, 100.0), tol: float = 1e-6
) -> dict:
    """Machine-readable summary: optimizer results, law validations, tail bounds."""
    laws = [
        BranchingDistribution.finite23(),
        BranchingDistribution.geometric(),
        BranchingDistribution.factorial(),
    ]
    return {
        "euler": E,
        "optimal_branching": [
            {"area": float(a), "v_star": optimal_branching(float(a), tol)}
            for a in areas
        ],
        "tolerance": tol,
        "distributions": [validate_distribution(law).to_dict() for law in laws],
        "tail_bounds": [{"v": v, "bound": tail_bound(v)} for v in range(3, 9)],
    }
