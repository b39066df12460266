import math

import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from core.exceptions import ExponentError, FieldError, IndexRangeError
from core.services.littlewood_paley import (
    INF, BesovParams, besov_wh_norm, bony, build_bump, classical_besov_norm, doubling_embedding_check,
    embedding_target, lp_block, lp_lowpass, paraproduct_piece, riesz_potential, sandwich,
)
from core.utils.fields import dealiased_product, make_grid
from core.utils.presets import preset_field


class BumpTests(SimpleTestCase):
    def setUp(self):
        self.grid = make_grid(2, 64, 8.0)

    def test_partition_of_unity(self):
        """The resolved blocks sum to one on the resolved band."""
        family = build_bump(self.grid)
        self.assertEqual(family.indices, [0, 1, 2])
        self.assertLess(family.partition_defect, 1e-12)
        self.assertAlmostEqual(family.band[0], 4.0 / 3.0)
        self.assertAlmostEqual(family.band[1], 6.0)

    def test_blocks_reconstruct_band_limited_field(self):
        """S_{j_max} f = f for f with spectrum inside the band."""
        f = preset_field('random_bandlimited', {'seed': 3}, self.grid)
        assert_allclose(lp_lowpass(f, 2).values, f.values, atol=1e-10 * f.sup_norm())
        total = sum(lp_block(f, j).values for j in (0, 1, 2))
        assert_allclose(total, f.values, atol=1e-10 * f.sup_norm())

    def test_pure_block_is_isolated(self):
        """Spectrum in the pure band of block 1 is seen by Delta_1 only."""
        f = preset_field('random_bandlimited', {'j': 1, 'pure': True, 'seed': 5}, self.grid)
        assert_allclose(lp_block(f, 1).values, f.values, atol=1e-12 * f.sup_norm())
        for j in (0, 2):
            self.assertLess(lp_block(f, j).sup_norm(), 1e-12 * f.sup_norm())

    def test_distant_blocks_are_orthogonal(self):
        """Delta_j Delta_k f = 0 once |j - k| >= 2."""
        grid = make_grid(2, 256, 16.0)
        f = preset_field('random_bandlimited', {'seed': 7}, grid)
        j_min, j_max = grid.j_range
        for j in range(j_min, j_max + 1):
            for k in range(j + 2, j_max + 1):
                self.assertLess(lp_block(lp_block(f, j), k).sup_norm(), 1e-12 * f.sup_norm())
        self.assertGreater(lp_block(lp_block(f, 0), 1).sup_norm(), 0.0)

    def test_block_range_checked(self):
        """Blocks outside the resolvable range raise IndexRangeError."""
        f = preset_field('gaussian', {}, self.grid)
        with self.assertRaises(IndexRangeError):
            lp_block(f, 5)


class BonyTests(SimpleTestCase):
    def setUp(self):
        self.grid = make_grid(2, 64, 8.0)

    @settings(max_examples=6, deadline=None)
    @given(st.integers(0, 500))
    def test_pieces_sum_to_truncated_product(self, seed):
        """T_f g + T_g f + R(fg) equals the 2/3-truncated product for in-band data."""
        f = preset_field('random_bandlimited', {'seed': seed}, self.grid)
        g = preset_field('random_bandlimited', {'seed': seed + 1000}, self.grid)
        t_fg, t_gf, rest = bony(f, g)
        expected = dealiased_product(f, g).values
        assert_allclose(t_fg.values + t_gf.values + rest.values, expected,
                        atol=1e-10 * np.abs(expected).max())

    def test_constants_land_in_remainder(self):
        """A mean-only factor contributes through T and the mean product."""
        f = preset_field('random_bandlimited', {'seed': 1}, self.grid)
        one = f.with_values(np.ones(self.grid.shape))
        t_fg, t_gf, rest = bony(one, f)
        total = t_fg.values + t_gf.values + rest.values
        assert_allclose(total, dealiased_product(one, f).values, atol=1e-10 * f.sup_norm())

    def test_paraproduct_piece_support(self):
        """S_{k-2} g Delta_k f has no content in blocks five or more steps below k."""
        grid = make_grid(2, 512, 16.0)
        f = preset_field('random_bandlimited', {'seed': 21}, grid)
        g = preset_field('random_bandlimited', {'seed': 22}, grid)
        piece = paraproduct_piece(g, f, 4)
        self.assertGreater(piece.sup_norm(), 0.0)
        self.assertLess(lp_block(piece, -1).sup_norm(), 1e-12 * piece.sup_norm())

    def test_out_of_band_input_rejected(self):
        """Content above the resolved band raises FieldError."""
        f = preset_field('mode', {'m': [18, 0]}, self.grid)
        g = preset_field('random_bandlimited', {'seed': 2}, self.grid)
        with self.assertRaises(FieldError):
            bony(f, g)


class PotentialTests(SimpleTestCase):
    def test_riesz_potential_of_mode(self):
        """I^s cos(xi0 x) = |xi0|^s cos(xi0 x)."""
        grid = make_grid(2, 64, 8.0)
        f = preset_field('mode', {'m': [3, 0]}, grid)
        xi0 = 3 * math.pi / 8.0
        assert_allclose(riesz_potential(f, 0.5).values, xi0 ** 0.5 * f.values, atol=1e-12)
        assert_allclose(riesz_potential(f, -1.0).values, f.values / xi0, atol=1e-12)


class BesovTests(SimpleTestCase):
    def setUp(self):
        self.grid = make_grid(2, 64, 8.0)

    def test_params_validation(self):
        """r < 1 and invalid base exponents are rejected."""
        with self.assertRaises(ExponentError):
            BesovParams(0.0, 2.0, INF, 0.0, 0.5)
        with self.assertRaises(ExponentError):
            BesovParams(0.0, 1.0)
        self.assertEqual(BesovParams(0.0, 2.0).to_dict()['r'], 'inf')

    def test_embedding_target(self):
        """General embedding shifts alpha and s by n(1/p - 1/p1) and n(1/p2 - 1/p1)."""
        target = embedding_target(2, BesovParams(0.0, 2.0), 4.0, 2.0)
        self.assertAlmostEqual(target.alpha, 0.5)
        self.assertAlmostEqual(target.s, 0.5)
        self.assertEqual(target.p, 2.0)

    def test_embedding_hypotheses(self):
        """Each violated hypothesis names its condition."""
        bp = BesovParams(0.0, 2.0)
        with self.assertRaises(ExponentError) as ctx:
            embedding_target(2, bp, 1.5, 1.5)
        self.assertEqual(ctx.exception.condition, 'p <= p1 < inf')
        with self.assertRaises(ExponentError) as ctx:
            embedding_target(2, bp, 4.0, 8.0)
        self.assertEqual(ctx.exception.condition, '1 < p2 <= p1')
        with self.assertRaises(ExponentError):
            embedding_target(2, bp.replace(alpha=0.5), 4.0, 2.0)

    def test_doubling_alpha_bound(self):
        """alpha must stay below min(1 - n/2p, n/2p)."""
        f = preset_field('gaussian', {}, self.grid)
        with self.assertRaises(ExponentError):
            doubling_embedding_check(f, BesovParams(0.5, 2.0))
        with self.assertRaises(ExponentError):
            doubling_embedding_check(f, BesovParams(-0.1, 2.0))

    def test_weak_herz_blocks_below_classical(self):
        """With alpha = 0 and q = inf each block's weak-Herz norm is at most its L^p norm."""
        f = preset_field('random_bandlimited', {'seed': 7}, self.grid)
        weak = besov_wh_norm(f, BesovParams(0.0, 2.0, INF, 0.5, INF))
        classical = classical_besov_norm(f, 0.5, 2.0)
        for w, c in zip(weak.values, classical.values):
            self.assertLessEqual(w, c * (1 + 1e-12))
        self.assertEqual(weak.to_frame().columns[0], 'j')

    def test_sandwich_ordering(self):
        """The r = inf Besov sum never exceeds the r = 1 sum."""
        f = preset_field('random_bandlimited', {'seed': 9}, self.grid)
        values = sandwich(f, BesovParams(0.0, 2.0, INF, 0.0))
        self.assertLessEqual(values['besov_rinf'], values['besov_r1'])
        self.assertGreater(values['sobolev'], 0.0)
