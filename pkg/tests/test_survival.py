import math

import numpy as np
import pytest
from scipy import stats

from tilkit import survival as sv


def rec(pid, time, event, score=math.nan):
    return sv.SurvivalRecord(patient_id=pid, time=time, event=event, score=score)


def cohort(times_events, prefix="p"):
    return [
        rec(f"{prefix}{i}", t, e) for i, (t, e) in enumerate(times_events)
    ]


# Hand-worked five-subject cohort: events at 5, 8, 20; censored at 12, 25.
FIVE = cohort([(5, True), (8, True), (12, False), (20, True), (25, False)])


class TestKmCurve:
    def test_all_censored_flat(self):
        curve = sv.km_curve(cohort([(3, False), (9, False), (11, False)]))
        assert curve.steps == []
        assert sv.survival_at(curve, 100) == 1.0

    def test_hand_worked_cohort(self):
        curve = sv.km_curve(FIVE)
        values = [(s.time, s.survival) for s in curve.steps]
        assert values[0] == (5, pytest.approx(0.8))
        assert values[1] == (8, pytest.approx(0.6))
        assert values[2] == (20, pytest.approx(0.3))
        assert curve.censor_times == [12, 25]

    def test_no_censoring_identity(self):
        n = 6
        curve = sv.km_curve(cohort([(t, True) for t in range(1, n + 1)]))
        for k, step in enumerate(curve.steps, start=1):
            assert step.survival == pytest.approx((n - k) / n)

    def test_empty_cohort(self):
        with pytest.raises(sv.EmptyCohortError):
            sv.km_curve([])

    def test_ties_events_before_censors(self):
        # A censoring at an event time stays in that risk set.
        curve = sv.km_curve(cohort([(5, True), (5, False), (9, True)]))
        assert curve.steps[0].at_risk == 3
        assert curve.steps[0].survival == pytest.approx(2 / 3)

    def test_non_increasing(self, rng):
        times = rng.uniform(1, 100, size=40)
        events = rng.random(40) < 0.6
        curve = sv.km_curve(cohort(list(zip(times, events))))
        probs = [s.survival for s in curve.steps]
        assert all(a >= b for a, b in zip(probs, probs[1:]))

    def test_equals_empirical_when_no_censoring(self, rng):
        times = rng.uniform(1, 50, size=25)
        records = cohort([(t, True) for t in times])
        curve = sv.km_curve(records)
        for step in curve.steps:
            empirical = np.mean(times > step.time)
            assert step.survival == pytest.approx(empirical, abs=1e-12)


class TestSurvivalAt:
    def test_time_zero(self):
        assert sv.survival_at(sv.km_curve(FIVE), 0) == 1.0

    def test_at_sixty(self):
        assert sv.survival_at(sv.km_curve(FIVE), 60) == pytest.approx(0.3)

    def test_before_first_event(self):
        assert sv.survival_at(sv.km_curve(FIVE), 4.999) == 1.0

    def test_step_boundaries(self):
        curve = sv.km_curve(FIVE)
        assert sv.survival_at(curve, 5) == pytest.approx(0.8)
        assert sv.survival_at(curve, 7.9) == pytest.approx(0.8)
        assert sv.survival_at(curve, 8) == pytest.approx(0.6)


class TestMedianSurvival:
    def test_hand_worked(self):
        assert sv.median_survival(sv.km_curve(FIVE)) == 20

    def test_never_reached(self):
        curve = sv.km_curve(cohort([(5, True), (8, False), (9, False), (10, False)]))
        assert min(s.survival for s in curve.steps) > 0.64
        assert sv.median_survival(curve) is None

    def test_boundary_inclusive(self):
        # Two subjects, one event: survival hits exactly 0.5.
        curve = sv.km_curve(cohort([(47, True), (60, False)]))
        assert curve.steps[0].survival == pytest.approx(0.5)
        assert sv.median_survival(curve) == 47


class TestLogrank:
    def test_identical_groups(self):
        a = cohort([(5, True), (9, True), (14, False), (20, True)])
        result = sv.logrank(a, list(a))
        assert result.chi_square == pytest.approx(0.0, abs=1e-12)
        assert result.p_value == pytest.approx(1.0, abs=1e-9)

    def test_hand_worked_table(self):
        # O/E/V table computed by hand, time by time:
        #   t=1: nA=3 nB=3 dA=1 -> E_A=0.5,   V=0.25
        #   t=2: nA=2 nB=3 dB=1 -> E_A=0.4,   V=0.24
        #   t=4: nA=2 nB=2 dA=1 -> E_A=0.5,   V=0.25
        #   t=5: nA=1 nB=2 dB=1 -> E_A=1/3,   V=2/9
        #   t=7: nA=0 nB=1 dB=1 -> E_A=0.0,   V=0 (n-1=0)
        a = cohort([(1, True), (4, True), (6, False)], prefix="a")
        b = cohort([(2, True), (5, True), (7, True)], prefix="b")
        expected_e = 0.5 + 0.4 + 0.5 + 1 / 3
        expected_v = 0.25 + 0.24 + 0.25 + 2 / 9
        chi2 = (2 - expected_e) ** 2 / expected_v
        result = sv.logrank(a, b)
        assert result.observed[0] == 2
        assert result.expected[0] == pytest.approx(expected_e, abs=1e-12)
        assert result.chi_square == pytest.approx(chi2, abs=1e-12)
        assert result.p_value == pytest.approx(float(stats.chi2.sf(chi2, 1)), abs=1e-12)

    def test_symmetric_in_group_labels(self):
        a = cohort([(1, True), (4, True), (6, False)], prefix="a")
        b = cohort([(2, True), (5, True), (7, True)], prefix="b")
        r1 = sv.logrank(a, b)
        r2 = sv.logrank(b, a)
        assert r1.chi_square == pytest.approx(r2.chi_square, abs=1e-12)
        assert r1.p_value == pytest.approx(r2.p_value, abs=1e-12)

    def test_no_events(self):
        a = cohort([(5, False)], prefix="a")
        b = cohort([(7, False)], prefix="b")
        with pytest.raises(sv.NoEventsError):
            sv.logrank(a, b)


def exponential_cohort(rng, n, rate, group, censor_at=30.0):
    records = []
    for i in range(n):
        t = rng.exponential(1.0 / rate)
        event = t <= censor_at
        records.append(rec(f"{group}{i}", min(t, censor_at), event))
    return records


class TestHazardRatio:
    def test_identical_groups_hr_one(self):
        base = cohort([(3, True), (6, True), (9, False), (12, True), (15, False)])
        records = base + [
            rec(f"h{i}", r.time, r.event) for i, r in enumerate(base)
        ]
        groups = {r.patient_id: ("high" if r.patient_id.startswith("h") else "low") for r in records}
        est = sv.hazard_ratio(records, groups)
        assert est.hr == pytest.approx(1.0, abs=1e-6)
        assert est.ci_low <= est.hr <= est.ci_high

    def test_monte_carlo_rate_ratio(self):
        rng = np.random.default_rng(2024)
        low = exponential_cohort(rng, 500, rate=0.10, group="low")
        high = exponential_cohort(rng, 500, rate=0.05, group="high")
        groups = {r.patient_id: ("high" if r.patient_id.startswith("high") else "low") for r in low + high}
        est = sv.hazard_ratio(low + high, groups)
        assert 0.4 <= est.hr <= 0.6

    def test_swap_gives_reciprocal(self):
        rng = np.random.default_rng(7)
        low = exponential_cohort(rng, 60, rate=0.10, group="low")
        high = exponential_cohort(rng, 60, rate=0.05, group="high")
        records = low + high
        fwd = {r.patient_id: ("high" if r.patient_id.startswith("high") else "low") for r in records}
        rev = {pid: ("low" if g == "high" else "high") for pid, g in fwd.items()}
        a = sv.hazard_ratio(records, fwd)
        b = sv.hazard_ratio(records, rev)
        assert a.hr == pytest.approx(1 / b.hr, abs=1e-9)
        assert a.ci_low == pytest.approx(1 / b.ci_high, abs=1e-9)
        assert a.ci_high == pytest.approx(1 / b.ci_low, abs=1e-9)

    def test_separation(self):
        records = [
            rec("a1", 5, True),
            rec("a2", 8, True),
            rec("b1", 9, False),
            rec("b2", 11, False),
        ]
        groups = {"a1": "low", "a2": "low", "b1": "high", "b2": "high"}
        with pytest.raises(sv.SeparationError):
            sv.hazard_ratio(records, groups)


class TestDichotomize:
    def test_simple_cutoff(self):
        groups = sv.dichotomize({"a": 1, "b": 2, "c": 3, "d": 4}, 2.5)
        assert groups == {"a": "low", "b": "low", "c": "high", "d": "high"}

    def test_87_patient_median_split(self, rng):
        scores = {f"p{i}": float(s) for i, s in enumerate(rng.permutation(87) * 3.7)}
        groups, cutoff = sv.median_dichotomize(scores)
        sizes = (
            sum(1 for g in groups.values() if g == "low"),
            sum(1 for g in groups.values() if g == "high"),
        )
        assert sizes == (44, 43)

    def test_all_equal_degenerate(self):
        with pytest.raises(sv.DegenerateSplitError):
            sv.dichotomize({"a": 2.0, "b": 2.0}, 2.0)

    def test_sizes_sum(self, rng):
        scores = {f"p{i}": float(v) for i, v in enumerate(rng.uniform(0, 10, 31))}
        groups, _ = sv.median_dichotomize(scores)
        assert len(groups) == 31
        assert set(groups.values()) == {"low", "high"}


class TestCutoffSweep:
    def _scored(self, rng, n=40):
        records = []
        for i in range(n):
            score = float(rng.uniform(0, 10))
            # Hazard decreasing in score: high scores survive longer.
            t = float(rng.exponential(5 + 3 * score))
            records.append(rec(f"p{i}", min(t, 60.0) or 0.1, t <= 60.0, score=score))
        return records

    def test_candidate_count(self, rng):
        records = self._scored(rng, 25)
        distinct = len({r.score for r in records})
        points = sv.cutoff_sweep(records, min_group_fraction=0.0)
        assert len(points) == distinct - 1

    def test_small_groups_absent(self, rng):
        records = self._scored(rng, 30)
        points = sv.cutoff_sweep(records, min_group_fraction=0.10)
        # The extreme cut-offs leave fewer than 3 patients on one side.
        assert points[0].p_value is None
        assert points[-1].p_value is None

    def test_median_cutoff_matches_median_dichotomization(self, rng):
        records = self._scored(rng, 30)
        scores = {r.patient_id: r.score for r in records}
        groups, _cut = sv.median_dichotomize(scores)
        low = [r for r in records if groups[r.patient_id] == "low"]
        high = [r for r in records if groups[r.patient_id] == "high"]
        direct = sv.logrank(low, high).p_value
        points = sv.cutoff_sweep(records, min_group_fraction=0.0)
        split_of = lambda c: frozenset(p for p, s in scores.items() if s <= c)
        median_split = frozenset(p for p, g in groups.items() if g == "low")
        matching = [pt for pt in points if split_of(pt.cutoff) == median_split]
        assert matching and matching[0].p_value == pytest.approx(direct, abs=1e-12)

    def test_permutation_false_positive_rate(self, rng):
        # Scores independent of survival: the sweep's minimum p is not
        # trustworthy, but individual cut-offs should reject at ~5%.
        hits = 0
        total = 0
        for trial in range(20):
            records = []
            for i in range(40):
                t = float(rng.exponential(10))
                records.append(
                    rec(f"p{i}", min(t, 30.0), t <= 30.0, score=float(rng.uniform(0, 1)))
                )
            points = sv.cutoff_sweep(records, min_group_fraction=0.2)
            ps = [pt.p_value for pt in points if pt.p_value is not None]
            hits += sum(1 for p in ps if p < 0.05)
            total += len(ps)
        assert hits / total < 0.25  # sweep points are correlated; envelope is loose

    def test_interior_minimum_on_monotone_hazard(self, rng):
        records = self._scored(rng, 120)
        points = sv.cutoff_sweep(records, min_group_fraction=0.05)
        usable = [(pt.cutoff, pt.p_value) for pt in points if pt.p_value is not None]
        cutoffs = [c for c, _ in usable]
        best = min(usable, key=lambda cp: cp[1])[0]
        assert min(cutoffs) < best < max(cutoffs)


class TestPearson:
    def test_identity(self):
        assert sv.pearson_r([1, 2, 3, 4], [1, 2, 3, 4]) == pytest.approx(1.0)

    def test_negative_affine(self):
        x = [0.5, 1.5, 2.5, 7.0]
        y = [-2 * v + 7 for v in x]
        assert sv.pearson_r(x, y) == pytest.approx(-1.0)

    def test_worked_example(self):
        assert sv.pearson_r([1, 2, 3, 4], [2, 1, 4, 3]) == pytest.approx(0.6)

    def test_zero_variance(self):
        with pytest.raises(sv.ZeroVarianceError):
            sv.pearson_r([1, 1, 1], [2, 3, 4])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            sv.pearson_r([1, 2], [1, 2, 3])


class TestFormatP:
    def test_floor(self):
        assert sv.format_p(0.0004) == "<0.001"

    def test_three_decimals(self):
        assert sv.format_p(0.0134) == "0.013"
