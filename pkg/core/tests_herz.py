import math

import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st

from core.exceptions import ConfigurationError, ExponentError, IndexRangeError
from core.services.herz_norms import (
    INF, HerzParams, annulus_mask, global_weak_lp, holder_check, holder_linf_check, lp_norm, lq_aggregate,
    morrey_norm, parse_exponent, weak_herz_norm, weak_lp_region,
)
from core.utils.fields import Field, Grid, make_grid
from core.utils.presets import preset_field


class ExponentTests(SimpleTestCase):
    def test_parse_exponent(self):
        """'inf' spellings parse to infinity, numbers pass through."""
        self.assertEqual(parse_exponent('inf'), INF)
        self.assertEqual(parse_exponent('Infinity'), INF)
        self.assertEqual(parse_exponent('2.5'), 2.5)
        with self.assertRaises(ConfigurationError):
            parse_exponent('two')

    def test_params_validation(self):
        """p must exceed 1 and q must be at least 1."""
        with self.assertRaises(ExponentError):
            HerzParams(0.0, 1.0)
        with self.assertRaises(ExponentError):
            HerzParams(0.0, 2.0, 0.5)
        with self.assertRaises(ExponentError) as ctx:
            HerzParams(1.5, 2.0).check_window(2)
        self.assertEqual(ctx.exception.condition, '-n/p < alpha < n(1-1/p)')

    def test_lq_aggregate(self):
        """l^q sums, with q = inf the maximum."""
        self.assertEqual(lq_aggregate([3.0, 4.0], 2.0), 5.0)
        self.assertEqual(lq_aggregate([3.0, 4.0], INF), 4.0)
        self.assertEqual(lq_aggregate([], 1.0), 0.0)


class WeakHerzTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.grid = make_grid(2, 256, 16.0)
        cls.power = preset_field('power', {'a': 1.0}, cls.grid)

    def test_indicator_profile_is_exact(self):
        """An annulus indicator has one nonzero entry 2^{k alpha} |A_k|^{1/p}."""
        grid = self.grid
        f = preset_field('annulus_indicator', {'k': 2}, grid)
        profile = weak_herz_norm(f, HerzParams(0.5, 2.0))
        measure = annulus_mask(grid, 2).sum() * grid.cell_volume
        self.assertAlmostEqual(profile.entry(2), 2.0 ** 1.0 * math.sqrt(measure), places=12)
        self.assertEqual([profile.entry(k) for k in (0, 1, 3)], [0.0, 0.0, 0.0])
        self.assertEqual(profile.aggregate, profile.entry(2))

    def test_power_law_annulus_values(self):
        """|x|^{-n/p} has per-annulus value (V_n (1 - 2^-n))^{1/p} 2^{k alpha} within 3%."""
        profile = weak_herz_norm(self.power, HerzParams(0.0, 2.0))
        expected = math.sqrt(math.pi * 0.75)
        for k in profile.indices:
            self.assertAlmostEqual(profile.entry(k) / expected, 1.0, delta=0.03)
        weighted = weak_herz_norm(self.power, HerzParams(0.5, 2.0))
        for k in weighted.indices:
            self.assertAlmostEqual(weighted.entry(k) / (expected * 2.0 ** (0.5 * k)), 1.0, delta=0.03)

    def test_global_weak_norm_of_power_law(self):
        """||x|^{-n/p}|_{L^{p,inf}} = V_n^{1/p} within 3%."""
        self.assertAlmostEqual(global_weak_lp(self.power, 2.0) / math.sqrt(math.pi), 1.0, delta=0.03)

    def test_inclusion_chain(self):
        """WK^0_{p,inf} <= L^{p,inf} <= L^p on any field."""
        for f in (self.power, preset_field('gaussian', {'sigma': 2.0}, self.grid)):
            wk = weak_herz_norm(f, HerzParams(0.0, 2.0)).aggregate
            weak = global_weak_lp(f, 2.0)
            self.assertLessEqual(wk, weak * (1 + 1e-12))
            self.assertLessEqual(weak, lp_norm(f, 2.0) * (1 + 1e-12))

    def test_restricted_sup(self):
        """p = inf on a region is the maximum of |f| there."""
        f = self.power
        mask = annulus_mask(self.grid, 1)
        self.assertEqual(weak_lp_region(f, mask, INF), f.magnitude()[mask].max())

    def test_profile_tables(self):
        """Profiles export as records and frames indexed by k."""
        profile = weak_herz_norm(self.power, HerzParams(0.0, 2.0))
        record = profile.to_record()
        self.assertEqual(record['space'], 'wk')
        self.assertEqual(record['params']['q'], 'inf')
        self.assertEqual(len(record['profile']), 4)
        frame = profile.to_frame()
        self.assertEqual(list(frame.columns), ['k', 'value'])

    def test_k_range_checked(self):
        """Explicit annulus ranges outside the grid raise IndexRangeError."""
        with self.assertRaises(IndexRangeError):
            weak_herz_norm(self.power, HerzParams(0.0, 2.0), k_range=(0, 6))


class HolderTests(SimpleTestCase):
    def setUp(self):
        self.grid = make_grid(2, 128, 16.0)

    def test_indicator_pair_is_sharp(self):
        """f = g = 1_{A_k} attains ratio 1."""
        f = preset_field('annulus_indicator', {'k': 1}, self.grid)
        report = holder_check(f, f, HerzParams(0.0, 4.0), HerzParams(0.0, 4.0))
        self.assertAlmostEqual(report.ratio, 1.0, places=12)
        self.assertEqual(report.details['target']['p'], 2.0)

    def test_target_must_match_exponents(self):
        """An explicit target violating 1/p = 1/p1 + 1/p2 is rejected."""
        f = preset_field('gaussian', {}, self.grid)
        with self.assertRaises(ExponentError) as ctx:
            holder_check(f, f, HerzParams(0.0, 4.0), HerzParams(0.0, 4.0), target=HerzParams(0.0, 3.0))
        self.assertEqual(ctx.exception.condition, '1/p = 1/p1 + 1/p2')

    @settings(max_examples=8, deadline=None)
    @given(st.integers(0, 1000))
    def test_linf_factor_never_increases(self, seed):
        """||fg||_WK <= ||f||_inf ||g||_WK."""
        f = preset_field('random_bandlimited', {'seed': seed}, self.grid)
        g = preset_field('random_bandlimited', {'seed': seed + 1}, self.grid)
        self.assertLessEqual(holder_linf_check(f, g, HerzParams(0.0, 2.0)).ratio, 1.0 + 1e-12)


class MorreyTests(SimpleTestCase):
    def test_power_law_grows_under_refinement(self):
        """|x|^{-n/p} rebuilt on the coarse grid grows by at least 1.2 in M^p_p and M^{2p}_{2p}."""
        fine = make_grid(2, 256, 16.0)
        coarse = Grid(2, 128, 16.0)
        f = preset_field('power', {'a': 1.0}, fine)
        g = preset_field('power', {'a': 1.0}, coarse)
        self.assertGreaterEqual(morrey_norm(f, 2.0, 2.0, coarse=g).refinement, 1.2)
        self.assertGreaterEqual(morrey_norm(f, 4.0, 4.0, coarse=g).refinement, 1.35)

    def test_smooth_field_is_stable(self):
        """A Gaussian's Morrey value barely changes under refinement."""
        grid = make_grid(2, 128, 16.0)
        result = morrey_norm(preset_field('gaussian', {}, grid), 2.0, 4.0)
        self.assertAlmostEqual(result.refinement, 1.0, delta=1e-3)

    def test_zero_field_and_exponent_order(self):
        """Zero has refinement 1; q > r is rejected."""
        grid = make_grid(2, 64, 8.0)
        self.assertEqual(morrey_norm(Field.zeros(grid), 2.0, 2.0).refinement, 1.0)
        with self.assertRaises(ExponentError):
            morrey_norm(Field.zeros(grid), 4.0, 2.0)

    def test_indicator_on_unit_ball(self):
        """For f = 1_{B(0,R)} and q = r the value is |B|^0 ||f||_q = |B|^{1/q}."""
        grid = make_grid(2, 128, 16.0)
        f = Field(grid, (grid.radius < 4.0).astype(float))
        result = morrey_norm(f, 2.0, 2.0)
        count = (grid.radius < 4.0).sum()
        self.assertAlmostEqual(result.value, math.sqrt(count * grid.cell_volume), places=12)
        self.assertTrue(np.isfinite(result.coarse_value))
