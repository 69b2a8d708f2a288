"""Utility and probability weighting functions, rank-dependent evaluation and
the concave envelope of a weighting function."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import mpmath
import numpy as np
from scipy.optimize import brentq

from .prob_core import DomainError, RandomVariable, ValidationError, merge_atoms

AUDIT_POINTS = 1000
UTILITY_FAMILIES = (
    "power",
    "quadratic",
    "linear_log",
    "exponential",
    "satiation",
    "piecewise_linear",
    "capped_quadratic",
)
WEIGHTING_FAMILIES = ("identity", "tk", "power", "piecewise_linear", "grid")
ATTITUDE_TAGS = ("strictly_convex", "strictly_concave", "convex", "concave", "linear", "ratio_increasing", "none")
CONVEX_TAGS = frozenset({"strictly_convex", "convex", "linear", "ratio_increasing"})
CONCAVE_TAGS = frozenset({"strictly_concave", "concave", "linear"})


def _params(family: str, given: Mapping[str, Any], defaults: Mapping[str, Any]) -> dict[str, Any]:
    unknown = set(given) - set(defaults)
    if unknown:
        raise ValidationError(f"unknown parameter(s) {sorted(unknown)} for family {family!r}")
    out = dict(defaults)
    out.update(given)
    missing = [k for k, v in out.items() if v is None]
    if missing:
        raise ValidationError(f"family {family!r} requires parameter(s) {missing}")
    return out


# ---------------------------------------------------------------------------
# utility functions
# ---------------------------------------------------------------------------

_UTILITY_DEFAULTS: dict[str, dict[str, Any]] = {
    "power": {"alpha": None, "scale": 1.0},
    "quadratic": {"a": None, "b": None},
    "linear_log": {"a": 1.0, "x0": 1.0},
    "exponential": {"k": 1.0, "scale": 1.0},
    "satiation": {"a": 1.0, "x0": 1.0, "y0": None},
    "piecewise_linear": {"xs": None, "ys": None},
    "capped_quadratic": {"a": 5.0, "t": 1.0, "cap": 0.0},
}


@dataclass(frozen=True, eq=False)
class UtilityFunction:
    family: str
    params: dict[str, Any] = field(default_factory=dict)
    attitude: str | None = None
    range_hi: float | None = None

    def __post_init__(self) -> None:
        if self.family not in UTILITY_FAMILIES:
            raise ValidationError(f"unknown utility family {self.family!r}")
        p = _params(self.family, self.params, _UTILITY_DEFAULTS[self.family])
        self._validate(p)
        object.__setattr__(self, "params", p)
        if self.range_hi is None:
            object.__setattr__(self, "range_hi", self._default_range(p))
        if self.range_hi <= 0:
            raise ValidationError("working range must have positive length")
        declared = self.attitude is not None
        tag = self.attitude or self._natural_tag(p)
        if tag not in ATTITUDE_TAGS:
            raise ValidationError(f"unknown attitude tag {tag!r}")
        object.__setattr__(self, "attitude", tag)
        try:
            self.audit()
        except ValidationError:
            # a parameter a hair away from linear is strict in exact arithmetic but flat in floating point
            if declared or not tag.startswith("strictly_"):
                raise
            object.__setattr__(self, "attitude", tag.removeprefix("strictly_"))
            self.audit()

    # -- construction helpers ------------------------------------------------

    def _validate(self, p: dict[str, Any]) -> None:
        f = self.family
        if f == "power":
            if p["alpha"] <= 0 or p["scale"] <= 0:
                raise ValidationError("power utility needs alpha > 0 and scale > 0")
        elif f == "quadratic":
            if p["a"] < 0 or (p["a"] == 0 and p["b"] <= 0):
                raise ValidationError("quadratic utility must be increasing at 0")
        elif f == "linear_log":
            if p["a"] <= 0 or p["x0"] <= 0:
                raise ValidationError("linear_log needs a > 0 and x0 > 0")
        elif f == "exponential":
            if p["scale"] <= 0:
                raise ValidationError("exponential utility needs scale > 0")
        elif f == "satiation":
            if p["a"] <= 0 or not 0 < p["x0"] < p["y0"]:
                raise ValidationError("satiation needs a > 0 and 0 < x0 < y0")
        elif f == "piecewise_linear":
            xs = np.asarray(p["xs"], dtype=float)
            ys = np.asarray(p["ys"], dtype=float)
            if xs.size < 2 or xs.size != ys.size or xs[0] != 0 or ys[0] != 0:
                raise ValidationError("piecewise_linear needs matching xs, ys starting at (0, 0)")
            if np.any(np.diff(xs) <= 0):
                raise ValidationError("piecewise_linear breakpoints must increase")
            p["xs"] = [float(v) for v in xs]
            p["ys"] = [float(v) for v in ys]
        elif f == "capped_quadratic":
            if p["a"] <= 0 or p["t"] <= 0:
                raise ValidationError("capped_quadratic needs a > 0 and t > 0")
            if not p["cap"]:
                p["cap"] = 2.0 / p["t"]
            if p["a"] - 2.0 * p["t"] * p["cap"] <= 0:
                raise ValidationError("capped_quadratic must still increase at the cap")

    def _default_range(self, p: dict[str, Any]) -> float:
        f = self.family
        if f == "linear_log":
            return 10.0 * p["x0"]
        if f == "satiation":
            return 2.0 * p["y0"]
        if f == "capped_quadratic":
            return float(p["cap"])
        if f == "piecewise_linear":
            return float(p["xs"][-1])
        if f == "quadratic" and p["b"] < 0:
            return min(10.0, -p["a"] / (2.0 * p["b"]))
        return 10.0

    def _natural_tag(self, p: dict[str, Any]) -> str:
        f = self.family
        if f == "power":
            return "linear" if p["alpha"] == 1 else ("strictly_convex" if p["alpha"] > 1 else "strictly_concave")
        if f == "quadratic":
            return "linear" if p["b"] == 0 else ("strictly_convex" if p["b"] > 0 else "strictly_concave")
        if f == "exponential":
            return "linear" if p["k"] == 0 else ("strictly_concave" if p["k"] > 0 else "strictly_convex")
        if f == "capped_quadratic":
            return "strictly_concave"
        if f in ("linear_log", "satiation"):
            return "concave"
        slopes = np.diff(p["ys"]) / np.diff(p["xs"])
        if np.all(np.abs(np.diff(slopes)) <= 1e-12):
            return "linear"
        if np.all(np.diff(slopes) <= 1e-12):
            return "concave"
        if np.all(np.diff(slopes) >= -1e-12):
            return "convex"
        return "none"

    # -- evaluation ------------------------------------------------------------

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x < -1e-12):
            raise DomainError("utility is defined on [0, inf) only")
        x = np.maximum(x, 0.0)
        p = self.params
        f = self.family
        if f == "power":
            out = p["scale"] * np.power(x, p["alpha"])
        elif f == "quadratic":
            out = p["a"] * x + p["b"] * x * x
        elif f == "linear_log":
            a, x0 = p["a"], p["x0"]
            with np.errstate(divide="ignore"):
                out = np.where(x <= x0, a * x, a * x0 * (1.0 + np.log(np.maximum(x, x0) / x0)))
        elif f == "exponential":
            k = p["k"]
            out = p["scale"] * x if k == 0 else p["scale"] * -np.expm1(-k * x) / k
        elif f == "satiation":
            a, x0, y0 = p["a"], p["x0"], p["y0"]
            z = np.clip(x, x0, y0) - x0
            out = np.where(x <= x0, a * x, a * x0 + a * z - a * z * z / (2.0 * (y0 - x0)))
        elif f == "piecewise_linear":
            out = self._pl_eval(x)
        else:
            a, t, cap = p["a"], p["t"], p["cap"]
            y = np.minimum(x, cap)
            out = a * y - t * y * y + (a - 2.0 * t * cap) * np.maximum(x - cap, 0.0)
        return out if out.ndim else float(out)

    def _pl_eval(self, x: np.ndarray) -> np.ndarray:
        xs = np.asarray(self.params["xs"])
        ys = np.asarray(self.params["ys"])
        last = (ys[-1] - ys[-2]) / (xs[-1] - xs[-2])
        return np.where(x <= xs[-1], np.interp(x, xs, ys), ys[-1] + last * (x - xs[-1]))

    def derivative(self, x, side: str = "right"):
        """One-sided derivative; ``side`` matters only at kinks."""
        if side not in ("left", "right"):
            raise ValidationError("side must be 'left' or 'right'")
        x = np.asarray(x, dtype=float)
        if np.any(x < -1e-12):
            raise DomainError("utility is defined on [0, inf) only")
        x = np.maximum(x, 0.0)
        left = side == "left"
        p = self.params
        f = self.family
        if f == "power":
            alpha, c = p["alpha"], p["scale"]
            with np.errstate(divide="ignore"):
                out = c * alpha * np.power(x, alpha - 1.0) if alpha != 1 else np.full_like(x, c)
        elif f == "quadratic":
            out = p["a"] + 2.0 * p["b"] * x
        elif f == "linear_log":
            a, x0 = p["a"], p["x0"]
            beyond = (x > x0) | ((x == x0) & ~left)
            out = np.where(beyond, a * x0 / np.maximum(x, x0), a)
        elif f == "exponential":
            out = p["scale"] * np.exp(-p["k"] * x)
        elif f == "satiation":
            a, x0, y0 = p["a"], p["x0"], p["y0"]
            z = np.clip(x, x0, y0) - x0
            out = np.where(x <= x0, a, a - a * z / (y0 - x0))
            out = np.where((x > y0) | ((x == y0) & ~left), 0.0, out)
        elif f == "piecewise_linear":
            xs = np.asarray(p["xs"])
            slopes = np.diff(p["ys"]) / np.diff(xs)
            k = np.searchsorted(xs, x, side="left" if left else "right") - 1
            k = np.clip(k, 0, slopes.size - 1)
            out = slopes[k]
        else:
            a, t, cap = p["a"], p["t"], p["cap"]
            inside = (x < cap) | ((x == cap) & left)
            out = np.where(inside, a - 2.0 * t * np.minimum(x, cap), a - 2.0 * t * cap)
        return out if np.ndim(out) else float(out)

    def value_mp(self, x) -> mpmath.mpf:
        """Arbitrary-magnitude evaluation used for limit estimates."""
        x = mpmath.mpf(x)
        p = self.params
        f = self.family
        if f == "power":
            return p["scale"] * x ** p["alpha"]
        if f == "quadratic":
            return p["a"] * x + p["b"] * x * x
        if f == "linear_log":
            a, x0 = p["a"], p["x0"]
            return a * x if x <= x0 else a * x0 * (1 + mpmath.log(x / x0))
        if f == "exponential":
            k = p["k"]
            return p["scale"] * x if k == 0 else -p["scale"] * mpmath.expm1(-k * x) / k
        if f in ("satiation", "capped_quadratic", "piecewise_linear"):
            if f == "satiation" and x >= p["y0"]:
                return mpmath.mpf(float(self(p["y0"])))
            if f == "piecewise_linear" and x > p["xs"][-1]:
                xs, ys = p["xs"], p["ys"]
                return ys[-1] + (ys[-1] - ys[-2]) / (xs[-1] - xs[-2]) * (x - xs[-1])
            if f == "capped_quadratic" and x > p["cap"]:
                cap = p["cap"]
                return float(self(cap)) + (p["a"] - 2 * p["t"] * cap) * (x - cap)
            return mpmath.mpf(float(self(float(x))))
        raise ValidationError(f"no extended evaluation for {f!r}")

    def linear_part(self) -> tuple[float, float]:
        """(x0, slope) such that u(x) = slope * x on [0, x0]; x0 = 0 when none."""
        p = self.params
        f = self.family
        if f in ("linear_log", "satiation"):
            return float(p["x0"]), float(p["a"])
        if f == "power" and p["alpha"] == 1:
            return math.inf, float(p["scale"])
        if f == "quadratic" and p["b"] == 0:
            return math.inf, float(p["a"])
        if f == "exponential" and p["k"] == 0:
            return math.inf, float(p["scale"])
        if f == "piecewise_linear":
            xs, ys = p["xs"], p["ys"]
            slopes = np.diff(ys) / np.diff(xs)
            k = 0
            while k + 1 < slopes.size and abs(slopes[k + 1] - slopes[0]) <= 1e-12:
                k += 1
            x0 = math.inf if k + 1 == slopes.size else float(xs[k + 1])
            return x0, float(slopes[0])
        return 0.0, float(self.derivative(0.0))

    def inverse_derivative(self, target, upper) -> np.ndarray:
        """Largest y in [0, upper] with u'(y) >= target (0 when u'(0) < target)."""
        target = np.asarray(target, dtype=float)
        upper = np.broadcast_to(np.asarray(upper, dtype=float), target.shape).astype(float)
        closed = self._inverse_closed(target)
        if closed is not None:
            with np.errstate(invalid="ignore"):
                out = np.where(target <= 0, upper, np.clip(np.nan_to_num(closed, nan=0.0, posinf=np.inf), 0.0, upper))
            return out
        lo = np.zeros_like(target)
        hi = upper.copy()
        full = self.derivative(upper, side="left") >= target
        none = self.derivative(np.zeros_like(target), side="right") < target
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            ok = self.derivative(mid, side="left") >= target
            lo = np.where(ok, mid, lo)
            hi = np.where(ok, hi, mid)
            if np.all(hi - lo <= 1e-15 * np.maximum(1.0, upper)):
                break
        out = np.where(full, upper, lo)  # lo keeps u'(lo-) >= target, even at a kink
        return np.where(none & ~full, 0.0, out)

    def _inverse_closed(self, target: np.ndarray) -> np.ndarray | None:
        p = self.params
        f = self.family
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            t = np.maximum(target, 1e-300)
            if f == "power" and p["alpha"] < 1:
                return np.power(t / (p["scale"] * p["alpha"]), 1.0 / (p["alpha"] - 1.0))
            if f == "quadratic" and p["b"] < 0:
                return (p["a"] - t) / (-2.0 * p["b"])
            if f == "exponential" and p["k"] > 0:
                return -np.log(t / p["scale"]) / p["k"]
            if f == "linear_log":
                return np.where(t <= p["a"], p["a"] * p["x0"] / t, 0.0)
            if f == "capped_quadratic":
                a, tt, cap = p["a"], p["t"], p["cap"]
                return np.where(t <= a - 2.0 * tt * cap, np.inf, (a - t) / (2.0 * tt))
        return None

    # -- audit -----------------------------------------------------------------

    def audit_grid(self) -> np.ndarray:
        return np.linspace(0.0, self.range_hi, AUDIT_POINTS)

    def audit(self) -> None:
        x = self.audit_grid()
        u = np.asarray(self(x))
        scale = max(1.0, float(np.max(np.abs(u))))
        tol = 1e-9 * scale
        if abs(float(self(0.0))) > 1e-12:
            raise ValidationError("utility must satisfy u(0) = 0")
        if np.any(np.diff(u) < -tol):
            raise ValidationError(f"{self.family} utility decreases on its working range")
        d2 = np.diff(u, 2)
        tag = self.attitude
        flat = np.all(np.abs(d2) <= tol)
        ok = True
        if tag == "strictly_convex":
            ok = np.all(d2 >= -tol) and not flat
        elif tag == "convex":
            ok = np.all(d2 >= -tol)
        elif tag == "strictly_concave":
            ok = np.all(d2 <= tol) and not flat
        elif tag == "concave":
            ok = np.all(d2 <= tol)
        elif tag == "linear":
            ok = flat
        elif tag == "ratio_increasing":
            ok = np.all(np.diff(u[1:] / x[1:]) >= -tol)
        if not ok:
            raise ValidationError(f"declared attitude {tag!r} fails the audit for {self.family} utility")

    @property
    def risk_seeking(self) -> bool:
        return self.attitude in CONVEX_TAGS

    @property
    def risk_averse(self) -> bool:
        return self.attitude in CONCAVE_TAGS

    def to_dict(self) -> dict[str, Any]:
        return {"family": self.family, "params": dict(self.params), "attitude": self.attitude}


# ---------------------------------------------------------------------------
# probability weighting
# ---------------------------------------------------------------------------

_WEIGHTING_DEFAULTS: dict[str, dict[str, Any]] = {
    "identity": {},
    "tk": {"gamma": 0.71},
    "power": {"gamma": None},
    "piecewise_linear": {"ts": None, "ws": None},
    "grid": {"values": None},
}


@dataclass(frozen=True, eq=False)
class WeightingFunction:
    family: str = "identity"
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.family not in WEIGHTING_FAMILIES:
            raise ValidationError(f"unknown weighting family {self.family!r}")
        p = _params(self.family, self.params, _WEIGHTING_DEFAULTS[self.family])
        if self.family in ("tk", "power") and p["gamma"] <= 0:
            raise ValidationError("weighting exponent must be positive")
        if self.family == "tk" and p["gamma"] < 0.28:
            raise ValidationError("tk weighting is not monotone for gamma below 0.28")
        if self.family == "piecewise_linear":
            ts = np.asarray(p["ts"], dtype=float)
            ws = np.asarray(p["ws"], dtype=float)
            if ts.size < 2 or ts.size != ws.size or ts[0] != 0 or ts[-1] != 1 or np.any(np.diff(ts) <= 0):
                raise ValidationError("piecewise_linear weighting needs increasing ts from 0 to 1")
            p["ts"], p["ws"] = [float(v) for v in ts], [float(v) for v in ws]
        if self.family == "grid":
            vals = np.asarray(p["values"], dtype=float)
            if vals.size < 2:
                raise ValidationError("grid weighting needs at least two values")
            p["values"] = [float(v) for v in vals]
        object.__setattr__(self, "params", p)
        t = np.linspace(0.0, 1.0, AUDIT_POINTS)
        w = np.asarray(self(t))
        if abs(w[0]) > 1e-12 or abs(w[-1] - 1.0) > 1e-12:
            raise ValidationError("weighting must satisfy w(0) = 0 and w(1) = 1")
        if np.any(np.diff(w) < -1e-12):
            raise ValidationError("weighting must be nondecreasing")

    @property
    def smooth(self) -> bool:
        return self.family in ("identity", "tk", "power")

    @property
    def is_identity(self) -> bool:
        return self.family == "identity"

    def __call__(self, t):
        t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
        p = self.params
        f = self.family
        if f == "identity":
            out = t.copy()
        elif f == "tk":
            g = p["gamma"]
            num = np.power(t, g)
            den = np.power(num + np.power(1.0 - t, g), 1.0 / g)
            out = num / den
        elif f == "power":
            out = np.power(t, p["gamma"])
        elif f == "piecewise_linear":
            out = np.interp(t, p["ts"], p["ws"])
        else:
            vals = p["values"]
            out = np.interp(t, np.linspace(0.0, 1.0, len(vals)), vals)
        return out if out.ndim else float(out)

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        p = self.params
        f = self.family
        if f == "identity":
            out = np.ones_like(t)
        elif f == "power":
            g = p["gamma"]
            with np.errstate(divide="ignore"):
                out = g * np.power(t, g - 1.0)
        elif f == "tk":
            g = p["gamma"]
            with np.errstate(divide="ignore", invalid="ignore"):
                a = np.power(t, g) + np.power(1.0 - t, g)
                inner = g * np.power(t, g - 1.0) * a - np.power(t, g) * (
                    np.power(t, g - 1.0) - np.power(1.0 - t, g - 1.0)
                )
                out = np.power(a, -1.0 / g - 1.0) * inner
        else:
            h = 1e-7
            out = (np.asarray(self(t + h)) - np.asarray(self(t - h))) / (2 * h)
        return out if np.ndim(out) else float(out)

    def to_dict(self) -> dict[str, Any]:
        return {"family": self.family, "params": dict(self.params)}


IDENTITY = WeightingFunction("identity")


@dataclass(frozen=True, eq=False)
class Agent:
    utility: UtilityFunction
    weighting: WeightingFunction = IDENTITY
    attitude: str | None = None
    name: str = ""

    def __post_init__(self) -> None:
        derived = self.derived_attitude()
        if self.attitude is None:
            object.__setattr__(self, "attitude", derived)
        elif self.attitude != derived and not (derived == "risk_neutral" and self.attitude in ("risk_seeking", "risk_averse")):
            raise ValidationError(f"declared attitude {self.attitude!r} conflicts with components ({derived})")

    def derived_attitude(self) -> str:
        if not self.weighting.is_identity:
            return "rdu"
        tag = self.utility.attitude
        if tag == "linear":
            return "risk_neutral"
        if tag in CONVEX_TAGS:
            return "risk_seeking"
        if tag in CONCAVE_TAGS:
            return "risk_averse"
        return "none"

    @property
    def is_eu(self) -> bool:
        return self.weighting.is_identity

    @property
    def risk_seeking(self) -> bool:
        return self.is_eu and self.utility.risk_seeking

    @property
    def risk_averse(self) -> bool:
        return self.is_eu and self.utility.risk_averse

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "utility": self.utility.to_dict(),
            "weighting": self.weighting.to_dict(),
            "attitude": self.attitude,
        }


# ---------------------------------------------------------------------------
# Choquet integral and RDU
# ---------------------------------------------------------------------------


def choquet_values(values: np.ndarray, probs: np.ndarray, w: WeightingFunction) -> float:
    values = np.asarray(values, dtype=float)
    if np.any(values < -1e-12):
        raise DomainError("Choquet evaluation covers nonnegative payoffs only")
    vals, masses = merge_atoms(np.maximum(values, 0.0), np.asarray(probs, dtype=float))
    vals = vals[::-1]
    tail = np.minimum(np.cumsum(masses[::-1]), 1.0)
    steps = vals - np.concatenate([vals[1:], [0.0]])
    return float(np.dot(steps, np.asarray(w(tail))))


def choquet(Y: RandomVariable, w: WeightingFunction) -> float:
    return choquet_values(Y.values, Y.space.probs, w)


def rdu_utility(agent: Agent, Y: RandomVariable) -> float:
    return choquet_values(np.asarray(agent.utility(Y.values)), Y.space.probs, agent.weighting)


def expected_utility(u: UtilityFunction, Y: RandomVariable) -> float:
    return float(np.dot(Y.space.probs, u(Y.values)))


# ---------------------------------------------------------------------------
# concave envelope and shape checks
# ---------------------------------------------------------------------------


def _upper_hull(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    hull: list[int] = []
    for k in range(x.size):
        while len(hull) >= 2:
            i, j = hull[-2], hull[-1]
            cross = (x[j] - x[i]) * (y[k] - y[i]) - (y[j] - y[i]) * (x[k] - x[i])
            if cross >= 0:
                hull.pop()
            else:
                break
        hull.append(k)
    return np.asarray(hull)


@dataclass(frozen=True, eq=False)
class EnvelopeResult:
    weighting: WeightingFunction
    grid: np.ndarray
    values: np.ndarray
    beta: float
    slope: float
    refined: bool
    beta_error: float

    def __call__(self, p):
        p = np.clip(np.asarray(p, dtype=float), 0.0, 1.0)
        if self.refined:
            wb = float(self.weighting(self.beta))
            out = np.where(p <= self.beta, self.weighting(p), wb + self.slope * (p - self.beta))
        else:
            # chords of the grid undershoot w where it is concave; the envelope dominates both
            out = np.maximum(np.interp(p, self.grid, self.values), self.weighting(p))
        return out if out.ndim else float(out)


def concave_envelope(w: WeightingFunction, grid_size: int = 10001) -> EnvelopeResult:
    if grid_size < 100:
        raise ValidationError("grid_size must be at least 100")
    t = np.linspace(0.0, 1.0, grid_size)
    wt = np.asarray(w(t))
    hull = _upper_hull(t, wt)
    env = np.interp(t, t[hull], wt[hull])
    touching = env - wt <= 1e-9
    k = int(np.argmin(touching)) - 1 if not touching.all() else grid_size - 1
    beta = float(t[max(k, 0)])
    h = 1.0 / (grid_size - 1)
    refined = False
    error = h
    if 0.0 < beta < 1.0 and w.smooth:
        inflection = check_cavexity(w, grid_size)
        hi = inflection if inflection is not None and inflection > beta else min(1.0 - h, beta + 2 * h)

        def tangency(b: float) -> float:
            return float(w(b)) + float(w.derivative(b)) * (1.0 - b) - 1.0

        lo = 1e-12
        if tangency(lo) > 0 > tangency(hi):
            beta = float(brentq(tangency, lo, hi, xtol=1e-15, rtol=1e-15))
            refined = True
            error = 1e-12
    if beta >= 1.0:
        slope = float(w.derivative(1.0)) if w.smooth else float((wt[-1] - wt[-2]) / h)
    else:
        slope = (1.0 - float(w(beta))) / (1.0 - beta)
    result = EnvelopeResult(w, t, env, beta, slope, refined, error)
    if refined:
        object.__setattr__(result, "values", np.maximum(np.asarray(result(t)), wt))
    return result


def check_cavexity(w: WeightingFunction, grid_size: int = 10001) -> float | None:
    """Inflection point of a concave-then-convex weighting, else None.

    Concave functions report 1 and convex ones 0.
    """
    if grid_size < 100:
        raise ValidationError("grid_size must be at least 100")
    t = np.linspace(0.0, 1.0, grid_size)
    d2 = np.diff(np.asarray(w(t)), 2)
    sign = np.where(np.abs(d2) <= 1e-14, 0, np.sign(d2)).astype(int)
    nz = np.flatnonzero(sign)
    if nz.size == 0:
        return 1.0
    s = sign[nz]
    flips = np.flatnonzero(np.diff(s) != 0)
    if flips.size == 0:
        return 1.0 if s[0] < 0 else 0.0
    if flips.size > 1 or s[0] > 0:
        return None
    last_neg = nz[flips[0]]
    first_pos = nz[flips[0] + 1]
    # d2[k] is centred on t[k + 1]
    return float(0.5 * (t[last_neg + 1] + t[first_pos + 1]))


@dataclass(frozen=True)
class TechConReport:
    sup_ratio_estimate: float
    w_at_1_over_n: float
    utility_ratio_limit_estimate: float
    satisfied: bool
    t_range: tuple[float, float]
    x_range: tuple[str, str]


def default_small_t_grid() -> np.ndarray:
    return np.logspace(-8, 0, 801)


def default_large_x_grid() -> list[mpmath.mpf]:
    return [mpmath.mpf(10) ** k for k in range(0, 2001, 20)]


def check_tech_con(w: WeightingFunction, u: UtilityFunction, n: int, small_t_grid=None, large_x_grid=None) -> TechConReport:
    if n < 2:
        raise ValidationError("the condition concerns n >= 2 agents")
    ts = default_small_t_grid() if small_t_grid is None else np.asarray(small_t_grid, dtype=float)
    xs = default_large_x_grid() if large_x_grid is None else [mpmath.mpf(x) for x in large_x_grid]
    if ts.size == 0 or len(xs) == 0:
        raise ValidationError("grids must be nonempty")
    sup_ratio = float(np.max(np.asarray(w(ts / n)) / np.asarray(w(ts))))
    w_n = float(w(1.0 / n))
    ratio = None
    for x in xs:
        ux = u.value_mp(x)
        if x > 0 and ux == 0:
            raise DomainError(f"u vanishes at x = {mpmath.nstr(x, 6)} > 0")
        ratio = u.value_mp(x / n) / ux
    ratio_f = float(ratio)
    satisfied = sup_ratio < 1 - 1e-6 and w_n < 1 - 1e-9 and ratio_f >= 1 - 1e-3
    return TechConReport(
        sup_ratio,
        w_n,
        ratio_f,
        bool(satisfied),
        (float(ts.min()), float(ts.max())),
        (mpmath.nstr(min(xs), 6), mpmath.nstr(max(xs), 6)),
    )
