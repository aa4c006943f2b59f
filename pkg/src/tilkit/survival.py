"""Survival statistics for cohort validation.

Kaplan-Meier product-limit curves, the two-group log-rank test, a
univariable proportional-hazards hazard ratio with Efron tie handling,
score dichotomization, exhaustive cut-off sweeps and Pearson correlation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

__all__ = [
    "EmptyCohortError",
    "NoEventsError",
    "SeparationError",
    "DegenerateSplitError",
    "ZeroVarianceError",
    "SurvivalRecord",
    "KmStep",
    "KmCurve",
    "LogRankResult",
    "HazardEstimate",
    "SweepPoint",
    "km_curve",
    "survival_at",
    "median_survival",
    "logrank",
    "hazard_ratio",
    "dichotomize",
    "median_dichotomize",
    "cutoff_sweep",
    "pearson_r",
]


class EmptyCohortError(ValueError):
    pass


class NoEventsError(ValueError):
    pass


class SeparationError(ValueError):
    """One group has no events; the hazard ratio is not estimable."""


class DegenerateSplitError(ValueError):
    pass


class ZeroVarianceError(ValueError):
    pass


@dataclass(frozen=True)
class SurvivalRecord:
    patient_id: str
    time: float  # months
    event: bool  # True = disease-specific death observed
    score: float = math.nan

    def __post_init__(self):
        if not (math.isfinite(self.time) and self.time > 0):
            raise ValueError(f"time must be finite and positive, got {self.time}")


@dataclass(frozen=True)
class KmStep:
    time: float
    survival: float
    at_risk: int
    events: int


@dataclass
class KmCurve:
    steps: list[KmStep]
    censor_times: list[float] = field(default_factory=list)


@dataclass(frozen=True)
class LogRankResult:
    chi_square: float
    p_value: float
    observed: tuple[float, float]
    expected: tuple[float, float]


@dataclass(frozen=True)
class HazardEstimate:
    hr: float
    ci_low: float
    ci_high: float
    reference: str = "low"


@dataclass(frozen=True)
class SweepPoint:
    cutoff: float
    p_value: float | None


def km_curve(records: Sequence[SurvivalRecord]) -> KmCurve:
    """Product-limit survival estimate.

    At tied times events are processed before censorings, so censored
    subjects at an event time still count in that risk set.
    """
    if not records:
        raise EmptyCohortError("no records")
    events: dict[float, int] = {}
    for r in records:
        if r.event:
            events[r.time] = events.get(r.time, 0) + 1
    times = np.array([r.time for r in records])
    survival = 1.0
    steps = []
    for t in sorted(events):
        at_risk = int((times >= t).sum())
        d = events[t]
        survival *= 1.0 - d / at_risk
        steps.append(KmStep(time=t, survival=survival, at_risk=at_risk, events=d))
    censors = sorted(r.time for r in records if not r.event)
    return KmCurve(steps=steps, censor_times=censors)


def survival_at(curve: KmCurve, t: float) -> float:
    """Step-function value of the curve at time ``t`` (1.0 before any event)."""
    if t < 0:
        raise ValueError("t must be >= 0")
    value = 1.0
    for step in curve.steps:
        if step.time <= t:
            value = step.survival
        else:
            break
    return value


def median_survival(curve: KmCurve) -> float | None:
    """Earliest time where survival drops to 0.5 or below; None if never."""
    for step in curve.steps:
        if step.survival <= 0.5:
            return step.time
    return None


def logrank(a: Sequence[SurvivalRecord], b: Sequence[SurvivalRecord]) -> LogRankResult:
    """Two-group log-rank test (chi-square with one degree of freedom)."""
    if not a or not b:
        raise EmptyCohortError("both groups must be non-empty")
    if not any(r.event for r in a) and not any(r.event for r in b):
        raise NoEventsError("no events in either group")
    times_a = np.array([r.time for r in a])
    times_b = np.array([r.time for r in b])
    event_times = sorted(
        {r.time for r in a if r.event} | {r.time for r in b if r.event}
    )
    observed_a = 0.0
    expected_a = 0.0
    variance = 0.0
    observed_b = 0.0
    expected_b = 0.0
    for t in event_times:
        n_a = int((times_a >= t).sum())
        n_b = int((times_b >= t).sum())
        d_a = sum(1 for r in a if r.event and r.time == t)
        d_b = sum(1 for r in b if r.event and r.time == t)
        n = n_a + n_b
        d = d_a + d_b
        observed_a += d_a
        observed_b += d_b
        expected_a += d * n_a / n
        expected_b += d * n_b / n
        if n > 1:
            variance += d * (n_a / n) * (n_b / n) * (n - d) / (n - 1)
    if variance == 0:
        chi2 = 0.0
    else:
        chi2 = (observed_a - expected_a) ** 2 / variance
    p = float(stats.chi2.sf(chi2, df=1))
    return LogRankResult(
        chi_square=float(chi2),
        p_value=p,
        observed=(observed_a, observed_b),
        expected=(expected_a, expected_b),
    )


def _efron_step(beta: float, times, events, x) -> tuple[float, float, float]:
    """Log partial likelihood, score and information at ``beta`` for a
    single binary covariate, with Efron's tie correction."""
    exp_bx = np.exp(beta * x)
    loglik = 0.0
    score = 0.0
    info = 0.0
    for t in np.unique(times[events]):
        risk = times >= t
        dead = events & (times == t)
        d = int(dead.sum())
        s_r = exp_bx[risk].sum()
        s_rx = (x[risk] * exp_bx[risk]).sum()
        s_rxx = (x[risk] ** 2 * exp_bx[risk]).sum()
        s_d = exp_bx[dead].sum()
        s_dx = (x[dead] * exp_bx[dead]).sum()
        s_dxx = (x[dead] ** 2 * exp_bx[dead]).sum()
        loglik += beta * x[dead].sum()
        for k in range(d):
            frac = k / d
            denom = s_r - frac * s_d
            dx = s_rx - frac * s_dx
            dxx = s_rxx - frac * s_dxx
            loglik -= math.log(denom)
            score -= dx / denom
            info += dxx / denom - (dx / denom) ** 2
        score += x[dead].sum()
    return loglik, score, info


def hazard_ratio(
    records: Sequence[SurvivalRecord],
    group_of: Mapping[str, str] | Callable[[str], str],
) -> HazardEstimate:
    """Univariable proportional-hazards HR for high vs low.

    ``group_of`` assigns each patient to "low" (reference) or "high".
    Newton iteration on the Efron partial likelihood, |delta beta| < 1e-9,
    at most 50 iterations; the 95% CI is Wald on the log scale.
    """
    lookup = group_of if callable(group_of) else group_of.__getitem__
    x = np.array([1.0 if lookup(r.patient_id) == "high" else 0.0 for r in records])
    times = np.array([r.time for r in records])
    events = np.array([r.event for r in records], dtype=bool)
    if not (x == 1.0).any() or not (x == 0.0).any():
        raise EmptyCohortError("both groups must be non-empty")
    for label, mask in (("low", x == 0.0), ("high", x == 1.0)):
        if not events[mask].any():
            raise SeparationError(
                f"no events in the {label} group; hazard ratio not estimable"
            )
    beta = 0.0
    for _ in range(50):
        _, score, info = _efron_step(beta, times, events, x)
        if info <= 0:
            raise SeparationError("degenerate information; hazard ratio not estimable")
        delta = score / info
        beta += delta
        if abs(delta) < 1e-9:
            break
    _, _, info = _efron_step(beta, times, events, x)
    se = 1.0 / math.sqrt(info)
    z = stats.norm.ppf(0.975)
    return HazardEstimate(
        hr=math.exp(beta),
        ci_low=math.exp(beta - z * se),
        ci_high=math.exp(beta + z * se),
        reference="low",
    )


def dichotomize(scores: Mapping[str, float], cutoff: float) -> dict[str, str]:
    """Assign "low" to scores at or below the cutoff, "high" above it."""
    if len(scores) < 2:
        raise EmptyCohortError("need at least two patients")
    groups = {pid: ("low" if s <= cutoff else "high") for pid, s in scores.items()}
    values = set(groups.values())
    if values != {"low", "high"}:
        raise DegenerateSplitError(f"cutoff {cutoff} leaves a group empty")
    return groups


def median_dichotomize(scores: Mapping[str, float]) -> tuple[dict[str, str], float]:
    """Median split: low group is score <= sample median."""
    cutoff = float(np.median(list(scores.values())))
    return dichotomize(scores, cutoff), cutoff


def cutoff_sweep(
    records: Sequence[SurvivalRecord],
    min_group_fraction: float = 0.10,
) -> list[SweepPoint]:
    """Log-rank p-value at every midpoint between consecutive distinct scores.

    Cut-offs that leave either group below ``min_group_fraction`` of the
    cohort are emitted with an absent p-value.
    """
    scores = {r.patient_id: r.score for r in records}
    distinct = sorted(set(scores.values()))
    if len(distinct) < 2:
        raise DegenerateSplitError("need at least two distinct scores")
    min_size = min_group_fraction * len(records)
    points = []
    for lo, hi in zip(distinct, distinct[1:]):
        cutoff = (lo + hi) / 2.0
        groups = dichotomize(scores, cutoff)
        low = [r for r in records if groups[r.patient_id] == "low"]
        high = [r for r in records if groups[r.patient_id] == "high"]
        if len(low) < min_size or len(high) < min_size:
            points.append(SweepPoint(cutoff=cutoff, p_value=None))
            continue
        try:
            result = logrank(low, high)
            points.append(SweepPoint(cutoff=cutoff, p_value=result.p_value))
        except NoEventsError:
            points.append(SweepPoint(cutoff=cutoff, p_value=None))
    return points


def pearson_r(x: Iterable[float], y: Iterable[float]) -> float:
    """Sample Pearson correlation coefficient."""
    x = np.asarray(list(x), dtype=np.float64)
    y = np.asarray(list(y), dtype=np.float64)
    if x.shape != y.shape or x.size < 3:
        raise ValueError("x and y must have equal length >= 3")
    xd = x - x.mean()
    yd = y - y.mean()
    denom = math.sqrt(float((xd**2).sum()) * float((yd**2).sum()))
    if denom == 0:
        raise ZeroVarianceError("zero variance in x or y")
    return float(np.clip((xd * yd).sum() / denom, -1.0, 1.0))


def format_p(p: float) -> str:
    """Three-decimal p-value formatting with a '<0.001' floor."""
    if p < 0.001:
        return "<0.001"
    return f"{p:.3f}"
