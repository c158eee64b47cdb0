from __future__ import annotations

import math
import random
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from natlab.analytics import (CollisionModel, LinkBudget, birthday_party_probability,
                              birthday_success_ceiling, birthday_success_probability,
                              brute_force_duration, enumerate_collision_probability,
                              estimate_birthday, estimate_birthday_party, estimate_brute_force,
                              estimate_probe_rate, estimate_probes_for_target, estimate_retention,
                              exact_birthday_party, exact_collision_probability, max_probe_rate,
                              overlapping_pairs, pair_count, probes_for_target,
                              probes_for_target_windowed, retention_volume, to_ms,
                              windowed_success_probability)


def _mc_collision(k: int, port_space: int, trials: int, seed: int) -> float:
    """Independent oracle: k (src, dst) draws per side, hit if any A pair
    appears mirrored on side B."""
    rng = random.Random(seed)
    hits = 0
    for _ in range(trials):
        a = {(rng.randrange(port_space), rng.randrange(port_space)) for _ in range(k)}
        mirrored = {(d, s) for s, d in a}
        if any((rng.randrange(port_space), rng.randrange(port_space)) in mirrored for _ in range(k)):
            hits += 1
    return hits / trials


class TestProbeRate:
    def test_forty_megabit_at_88_bytes(self):
        assert max_probe_rate(LinkBudget(40_000_000, 88)) == 56_818

    def test_forty_megabit_at_92_bytes(self):
        assert max_probe_rate(LinkBudget(40_000_000, 92)) == 54_347

    def test_unit_case(self):
        assert max_probe_rate(LinkBudget(8, 1)) == 1

    @pytest.mark.parametrize("bps,size", [(0, 88), (-1, 88), (1000, 0)])
    def test_rejects_non_positive(self, bps, size):
        with pytest.raises(ValueError):
            LinkBudget(bps, size)


class TestBruteForceDuration:
    def test_full_port_space(self):
        d = brute_force_duration(65_535, 57_000)
        assert d == Fraction(65_535, 57_000)
        assert to_ms(d) == 1.150

    def test_full_pair_space(self):
        d = brute_force_duration(4_294_836_225, 57_000)
        assert abs(float(d) - 75_348) < 1
        assert round(float(d) / 3600, 1) == 20.9

    def test_zero_combinations(self):
        assert brute_force_duration(0, 57_000) == 0

    def test_zero_pps_rejected(self):
        with pytest.raises(ValueError):
            brute_force_duration(10, 0)


class TestBirthdayModel:
    def test_half_port_space_squared(self):
        assert round(birthday_success_probability(54_000, 65_535), 3) == 0.493

    def test_high_target(self):
        assert round(birthday_success_probability(170_000, 65_535), 4) == 0.9988

    def test_zero_probes(self):
        assert birthday_success_probability(0, 65_535) == 0

    def test_accepts_model(self):
        assert birthday_success_probability(CollisionModel(1024, 853)) == \
            birthday_success_probability(853, 1024)

    @pytest.mark.parametrize("P,k", [(0, 1), (10, -1)])
    def test_model_validation(self, P, k):
        with pytest.raises(ValueError):
            CollisionModel(P, k)

    def test_inverse_examples(self):
        # Formula values; both within 2% of the rounded headline figures.
        assert probes_for_target(0.5, 65_535) == 54_562
        assert probes_for_target(0.999, 65_535) == 172_244
        assert abs(54_562 / 54_000 - 1) < 0.02
        assert abs(172_244 / 170_000 - 1) < 0.02

    def test_inverse_zero(self):
        assert probes_for_target(0, 65_535) == 0

    @pytest.mark.parametrize("p", [1.0, 1.5, -0.1])
    def test_inverse_rejects_out_of_range(self, p):
        with pytest.raises(ValueError):
            probes_for_target(p, 1024)

    @pytest.mark.parametrize("P", [256, 1024, 65_535])
    @pytest.mark.parametrize("p", [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.99, 0.999])
    def test_inversion_consistency(self, p, P):
        k = probes_for_target(p, P)
        assert birthday_success_probability(k, P) >= p
        assert k == 0 or birthday_success_probability(k - 1, P) < p


class TestWindowedModel:
    def test_pairs_without_window(self):
        assert overlapping_pairs(10, None) == 100
        assert overlapping_pairs(10, 10) == 100

    def test_pairs_with_window_by_counting(self):
        for k, w in [(5, 2), (9, 3), (20, 7)]:
            count = sum(1 for i in range(k) for j in range(k) if abs(i - j) < w)
            assert overlapping_pairs(k, w) == count

    def test_ceiling_at_acceptance_point(self):
        c = birthday_success_ceiling(2693, 1024)
        assert 0.985 < c < 0.9860
        assert c < birthday_success_probability(2693, 1024)

    def test_windowed_inverse(self):
        k = probes_for_target_windowed(0.999, 1024, 1024)
        assert windowed_success_probability(k, 1024, 1024) >= 0.999
        assert windowed_success_probability(k - 1, 1024, 1024) < 0.999

    def test_windowed_inverse_below_window_matches_plain(self):
        assert probes_for_target_windowed(0.5, 1024, 4096) == probes_for_target(0.5, 1024)


class TestOracles:
    @pytest.mark.parametrize("k,P", [(1, 2), (2, 2), (2, 3), (3, 2)])
    def test_exact_matches_enumeration_with_replacement(self, k, P):
        assert exact_collision_probability(k, P) == enumerate_collision_probability(k, P)

    @pytest.mark.parametrize("k,P", [(1, 2), (2, 2), (2, 3), (3, 3)])
    def test_exact_matches_enumeration_without_replacement(self, k, P):
        assert exact_collision_probability(k, P, replacement=False) == \
            enumerate_collision_probability(k, P, replacement=False)

    def test_without_replacement_needs_k_le_P(self):
        with pytest.raises(ValueError):
            exact_collision_probability(5, 4, replacement=False)

    @pytest.mark.parametrize("P", range(3, 65))
    def test_model_within_two_points_at_median(self, P):
        k = math.ceil(P * math.sqrt(math.log(2)))
        exact = float(exact_collision_probability(k, P))
        assert abs(exact - birthday_success_probability(k, P)) <= 0.02

    @pytest.mark.parametrize("P", [16, 64])
    def test_exact_agrees_with_independent_monte_carlo(self, P):
        k = math.ceil(P * math.sqrt(math.log(2)))
        trials = 20_000
        p = float(exact_collision_probability(k, P))
        sigma = math.sqrt(p * (1 - p) / trials)
        assert abs(_mc_collision(k, P, trials, seed=P) - p) < 4 * sigma

    @pytest.mark.parametrize("P", [256, 1024])
    def test_model_agrees_with_monte_carlo_large_P(self, P):
        k = math.ceil(P * math.sqrt(math.log(2)))
        assert abs(_mc_collision(k, P, 4000, seed=P) - 0.5) < 0.03


class TestMonotonicity:
    @settings(max_examples=300)
    @given(st.integers(1, 100_000), st.integers(0, 200_000))
    def test_increasing_in_k(self, P, k):
        lo, hi = birthday_success_probability(k, P), birthday_success_probability(k + 1, P)
        # Strict until the float saturates at 1.
        assert hi > lo or lo == 1.0

    @settings(max_examples=300)
    @given(st.integers(1, 100_000), st.integers(1, 200_000))
    def test_decreasing_in_P(self, P, k):
        lo, hi = birthday_success_probability(k, P + 1), birthday_success_probability(k, P)
        assert lo < hi or hi == 1.0


class TestBirthdayParty:
    def test_twenty_three(self):
        assert abs(birthday_party_probability(23, 365) - 0.5073) <= 0.0001
        assert pair_count(23) == 253

    def test_one_person(self):
        assert birthday_party_probability(1) == 0

    def test_pigeonhole(self):
        assert birthday_party_probability(366, 365) == 1.0

    @pytest.mark.parametrize("n", range(0, 51))
    def test_matches_permutation_oracle(self, n):
        assert abs(birthday_party_probability(n) - float(exact_birthday_party(n))) < 1e-12

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            birthday_party_probability(-1)
        with pytest.raises(ValueError):
            birthday_party_probability(3, 0)
        with pytest.raises(ValueError):
            pair_count(-1)


class TestRetention:
    def test_carrier_scale(self):
        v = retention_volume(25_000_000, 33_000, 515)
        assert v == 424_875_000_000_000
        assert round(v / 10**12) == 425

    def test_zero_and_unit(self):
        assert retention_volume(0, 33_000, 515) == 0
        assert retention_volume(1, 1, 100) == 100

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            retention_volume(-1, 1, 1)


class TestEstimateReports:
    KEYS = {"inputs", "formula", "value", "provenance_note"}

    def test_all_reports_have_provenance(self):
        for r in (estimate_probe_rate(40_000_000), estimate_brute_force(65_535, 57_000),
                  estimate_birthday(54_000), estimate_probes_for_target(0.5),
                  estimate_birthday_party(23), estimate_retention(25_000_000, 33_000)):
            assert self.KEYS <= r.keys()
            assert r["provenance_note"]

    def test_probe_rate_documents_overhead_gap(self):
        r = estimate_probe_rate(40_000_000)
        assert r["value"] == 56_818
        assert "54347" in r["provenance_note"]

    def test_brute_force_display(self):
        r = estimate_brute_force(65_535, 57_000)
        assert r["display"] == "1.150 s"
        assert r["exact"] == "4369/3800"

    def test_retention_labels_assumption(self):
        r = estimate_retention(25_000_000, 33_000)
        assert r["provenance_note"].startswith("ASSUMPTION")
        assert round(r["terabytes"]) == 425

    def test_retention_custom_record_has_no_assumption(self):
        assert "ASSUMPTION" not in estimate_retention(1, 1, 100)["provenance_note"]

    def test_party_report_has_pairs(self):
        assert estimate_birthday_party(23)["pair_count"] == 253
