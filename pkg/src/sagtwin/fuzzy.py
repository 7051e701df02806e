"""Fuzzy-logic model of the SAG expert control system.

Values and slopes of the controlled and manipulated variables are mapped to
triangular membership grades, the operating state is classified through a
criticality hierarchy, and setpoint changes come out of zero-order Sugeno
inference (firing-strength-weighted average of constant consequents).

CV universes are expressed as fractions of the adjustable operating limits
``y_lim``, which is what makes those limits a supervisory degree of freedom:
raising a limit relaxes every rule tied to it.  MV universes are fractions
of the actuator range; slope universes are fractions of ``y_lim`` per hour.

The same implementation serves as the "real" expert system inside the plant
simulator and as the twin's model of it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

import numpy as np

from .errors import ConfigError

CV_VARS = ("y1", "y2")
MV_VARS = ("u1", "u2", "u3")
SLOPE_VARS = ("dy1", "dy2")
ALL_VARS = CV_VARS + MV_VARS + SLOPE_VARS


@dataclass(frozen=True)
class YLim:
    """Upper operational limits for bearing pressure (kPa) and power (kW)."""

    y1: float
    y2: float

    def __post_init__(self):
        if self.y1 <= 0 or self.y2 <= 0:
            raise ConfigError("y_lim values must be strictly positive")

    def as_array(self) -> np.ndarray:
        return np.array([self.y1, self.y2])


@dataclass(frozen=True)
class Triangle:
    """Triangular membership function with vertices a <= b <= c.

    ``a == b`` makes a left shoulder (grade saturates at 1 for x <= b);
    ``b == c`` makes a right shoulder.  A fully degenerate triangle is a
    configuration error.
    """

    a: float
    b: float
    c: float

    def __post_init__(self):
        if not self.a <= self.b <= self.c:
            raise ConfigError(f"triangle vertices must be ordered, got {(self.a, self.b, self.c)}")
        if self.a == self.b == self.c:
            raise ConfigError("degenerate triangle (a == b == c)")

    def mu(self, x: float) -> float:
        if x < self.a or x > self.c:
            # shoulder sets saturate beyond the flat vertex
            if self.a == self.b and x < self.a:
                return 1.0
            if self.b == self.c and x > self.c:
                return 1.0
            return 0.0
        if x == self.b:
            return 1.0
        if x < self.b:
            return (x - self.a) / (self.b - self.a) if self.b > self.a else 1.0
        return (self.c - x) / (self.c - self.b) if self.c > self.b else 1.0


@dataclass
class MembershipSpec:
    """Named fuzzy sets per linguistic variable, ordered by criticality.

    ``sets[var]`` maps set name -> Triangle; ``order[var]`` lists set names
    from least to most critical (ties in classification resolve toward the
    later, more critical entry).
    """

    sets: dict[str, dict[str, Triangle]]
    order: dict[str, tuple[str, ...]]

    def __post_init__(self):
        for var, names in self.order.items():
            missing = [n for n in names if n not in self.sets.get(var, {})]
            if missing:
                raise ConfigError(f"sets {missing} listed in order but undefined for {var}")


@dataclass(frozen=True)
class Rule:
    """One Sugeno rule: min-conjunction antecedent, constant consequent."""

    name: str
    rank: int                       # criticality: higher fires tonnage cuts last
    antecedent: dict[str, str]      # variable -> fuzzy set name
    consequent: tuple[float, float, float]  # (du1 t/h, du2 %, du3 rpm) per 30 s step
    label: str = "normal"


@dataclass
class RuleBase:
    rules: list[Rule]

    def __post_init__(self):
        self.rules = sorted(self.rules, key=lambda r: r.rank)
        if self.rules:
            max_rank = self.rules[-1].rank
            for r in self.rules:
                if r.consequent[0] < 0 and r.rank != max_rank:
                    raise ConfigError(
                        f"rule {r.name}: tonnage reduction is reserved for the "
                        f"highest criticality rank ({max_rank})"
                    )

    @property
    def max_rank(self) -> int:
        return max((r.rank for r in self.rules), default=0)


@dataclass
class ExpertState:
    """Per-session expert bookkeeping."""

    mode_label: str = "normal"
    mode_rank: int = 0
    last_delta: np.ndarray = field(default_factory=lambda: np.zeros(3))


def normalize_inputs(
    values: dict[str, float],
    slopes: dict[str, float],
    ylim: YLim,
    mv_lo: np.ndarray,
    mv_hi: np.ndarray,
) -> dict[str, float]:
    """Map raw engineering values onto the fuzzy universes.

    CVs become fractions of their limit, MVs fractions of the actuator
    range, CV slopes fractions of the limit per hour.
    """
    lim = ylim.as_array()
    out = {
        "y1": values["y1"] / lim[0],
        "y2": values["y2"] / lim[1],
    }
    for j, var in enumerate(MV_VARS):
        out[var] = (values[var] - mv_lo[j]) / (mv_hi[j] - mv_lo[j])
    out["dy1"] = slopes["y1"] * 3600.0 / lim[0]
    out["dy2"] = slopes["y2"] * 3600.0 / lim[1]
    return out


def fuzzify(
    values: dict[str, float],
    slopes: dict[str, float],
    ylim: YLim,
    spec: MembershipSpec,
    mv_lo: np.ndarray,
    mv_hi: np.ndarray,
) -> dict[tuple[str, str], float]:
    """Membership grade of every (variable, set) pair."""
    x = normalize_inputs(values, slopes, ylim, mv_lo, mv_hi)
    mu: dict[tuple[str, str], float] = {}
    for var, names in spec.order.items():
        for name in names:
            mu[(var, name)] = spec.sets[var][name].mu(x[var])
    return mu


def argmax_sets(mu: dict[tuple[str, str], float], spec: MembershipSpec) -> dict[str, str]:
    """Winning fuzzy set per variable; ties resolve toward the more critical
    (later-ordered) set."""
    winners = {}
    for var, names in spec.order.items():
        best, best_mu = names[0], -1.0
        for name in names:
            m = mu[(var, name)]
            if m >= best_mu:
                best, best_mu = name, m
        winners[var] = best
    return winners


def classify_state(
    mu: dict[tuple[str, str], float],
    rules: RuleBase,
    spec: MembershipSpec,
) -> tuple[int, str]:
    """Overall operating mode: the highest criticality rank among rules whose
    antecedent sets all win their variable's argmax."""
    winners = argmax_sets(mu, spec)
    best = (0, "normal")
    for rule in rules.rules:
        if all(winners.get(var) == name for var, name in rule.antecedent.items()):
            if rule.rank >= best[0]:
                best = (rule.rank, rule.label)
    return best


def firing_strengths(mu: dict[tuple[str, str], float], rules: RuleBase) -> np.ndarray:
    """Min-conjunction firing strength of every rule."""
    w = np.empty(len(rules.rules))
    for i, rule in enumerate(rules.rules):
        w[i] = min(mu[(var, name)] for var, name in rule.antecedent.items())
    return w


def recommend(
    values: dict[str, float],
    slopes: dict[str, float],
    ylim: YLim,
    rules: RuleBase,
    spec: MembershipSpec,
    mv_lo: np.ndarray,
    mv_hi: np.ndarray,
    rate_limits: np.ndarray,
    current_usp: np.ndarray | None = None,
) -> np.ndarray:
    """Zero-order Sugeno setpoint change (du1, du2, du3) for one 30 s step.

    Weighted average of the constant consequents over all firing rules; a
    total rule miss yields zero action.  The result is clamped to the
    per-MV rate limits and, when the current setpoints are supplied, so
    that the new setpoints stay inside the actuator range.
    """
    mu = fuzzify(values, slopes, ylim, spec, mv_lo, mv_hi)
    w = firing_strengths(mu, rules)
    total = w.sum()
    if total <= 0.0:
        delta = np.zeros(3)
    else:
        cons = np.array([r.consequent for r in rules.rules])
        delta = (w @ cons) / total
    delta = np.clip(delta, -rate_limits, rate_limits)
    if current_usp is not None:
        delta = np.clip(delta, mv_lo - current_usp, mv_hi - current_usp)
    return delta


# ---------------------------------------------------------------------------
# Default membership spec and rule base: shipped as a documented data file
# (data/default_rules.yaml), loadable/overridable from any YAML with the
# same schema.
# ---------------------------------------------------------------------------

@lru_cache(maxsize=1)
def _default_rules_raw() -> dict:
    import yaml
    text = resources.files("sagtwin").joinpath("data/default_rules.yaml").read_text("utf-8")
    return yaml.safe_load(text)


def default_membership_spec() -> MembershipSpec:
    """Shipped CV/MV/slope universes (see data/default_rules.yaml).

    CV sets put "normal" around 92 % of the limit and "critical" peaking at
    the limit itself, so the nominal operating point classifies as normal
    under the default limits while approaches to the limit escalate.
    """
    return membership_spec_from_dict(_default_rules_raw()["membership"])


def default_rule_base() -> RuleBase:
    """Shipped 12-rule hierarchy (see data/default_rules.yaml).

    Rank 3 (critical pressure/power): cut tonnage, the last-resort action.
    Rank 2 (high): reduce speed first; add a solids cut when still rising.
    Rank 1 (low load, steady): restore tonnage/speed toward nominal.
    Rank 0 (normal): hold.
    """
    return rule_base_from_list(_default_rules_raw()["rules"])


def membership_spec_from_dict(raw: dict) -> MembershipSpec:
    """Build a MembershipSpec from parsed config data.

    Expected shape::

        {var: {"order": [names...], "sets": {name: [a, b, c], ...}}, ...}
    """
    sets: dict[str, dict[str, Triangle]] = {}
    order: dict[str, tuple[str, ...]] = {}
    for var, block in raw.items():
        if var not in ALL_VARS:
            raise ConfigError(f"unknown linguistic variable {var!r}")
        try:
            order[var] = tuple(block["order"])
            sets[var] = {name: Triangle(*map(float, abc)) for name, abc in block["sets"].items()}
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed membership block for {var}: {exc}") from exc
    missing = [v for v in ALL_VARS if v not in sets]
    if missing:
        raise ConfigError(f"membership spec missing variables {missing}")
    return MembershipSpec(sets=sets, order=order)


def rule_base_from_list(raw: list[dict]) -> RuleBase:
    """Build a RuleBase from parsed config data.

    Each entry: ``{name, rank, when: {var: set}, do: [du1, du2, du3], label}``.
    """
    rules = []
    for item in raw:
        try:
            rules.append(
                Rule(
                    name=str(item["name"]),
                    rank=int(item["rank"]),
                    antecedent={str(k): str(v) for k, v in item["when"].items()},
                    consequent=tuple(float(x) for x in item["do"]),
                    label=str(item.get("label", "normal")),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed rule entry {item!r}: {exc}") from exc
    return RuleBase(rules=rules)
