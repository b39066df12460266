import math
import tempfile

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose

from core.exceptions import AdmissibilityError, TimeGridError
from core.services.mild_solver import (
    QuadratureConfig, TimeGrid, Trajectory, admissible, asymptotic_compare, beta_constants, contraction_ratio,
    decay_summary, duhamel_all, duhamel_bilinear, fixed_point_residual, linear_trajectory, nonlinear_term, pair,
    picard_solve, scale_offset, self_similar_check, x_norm,
)
from core.services.reference_solver import reference_solve
from core.utils.field_io import load_trajectory, save_trajectory
from core.utils.fields import Field, fft, heat, ifft, leray_project, make_grid, spectral_divergence_defect
from core.utils.presets import preset_field


class AdmissibilityTests(SimpleTestCase):
    def test_codes(self):
        """Each violated hypothesis carries its own code."""
        cases = [
            ((4, 4.0, 'inf', 0.0), 'dimension'),
            ((2, 1.0, 'inf', 0.0), 'p_lower'),
            ((2, 'inf', 'inf', 0.0), 'p_upper'),
            ((2, 4.0, 0.5, 0.0), 'q'),
            ((2, 4.0, 'inf', -0.1), 'alpha_lower'),
            ((2, 4.0, 'inf', 0.25), 'alpha_upper'),
        ]
        for args, code in cases:
            with self.assertRaises(AdmissibilityError) as ctx:
                admissible(*args)
            self.assertEqual(ctx.exception.code, code)

    def test_derived_exponents(self):
        """p = n = 2, alpha = 0 gives s = 0, w = 1/4 and gamma = 1/2."""
        mp = admissible(2, 2.0, 'inf', 0.0)
        self.assertEqual(mp.s, 0.0)
        self.assertEqual(mp.w, 0.25)
        self.assertEqual(mp.gamma, 0.5)
        self.assertEqual(mp.to_dict()['q'], 'inf')

    def test_beta_constants(self):
        """With gamma = 1/2 the first factor is B(1/2, 1/2) = pi."""
        self.assertAlmostEqual(beta_constants(admissible(2, 2.0, 'inf', 0.0))['part1'], math.pi, places=12)


class TimeGridTests(SimpleTestCase):
    def test_default_grid(self):
        """rho = 2^(1/4) from 1e-3 to 4 lands on T after 48 steps."""
        tg = TimeGrid.geometric()
        self.assertEqual(len(tg), 49)
        self.assertEqual(tg.t_min, 1e-3)
        self.assertEqual(tg.T, 4.0)
        self.assertLessEqual(tg.rho, 2 ** 0.25)
        self.assertAlmostEqual(tg.rho, 4000.0 ** (1.0 / 48), places=12)

    def test_invalid_grids(self):
        """rho outside (1, 2] and t_min >= T are rejected."""
        with self.assertRaises(TimeGridError):
            TimeGrid.geometric(2.5, 0.01, 1.0)
        with self.assertRaises(TimeGridError):
            TimeGrid.geometric(1.5, 1.0, 1.0)
        with self.assertRaises(TimeGridError):
            TimeGrid.from_times([0.1, 0.1])

    def test_index_lookup(self):
        """Stored times are found, others raise."""
        tg = TimeGrid.geometric(2.0, 0.01, 0.16)
        self.assertEqual(tg.times, (0.01, 0.02, 0.04, 0.08, 0.16))
        self.assertEqual(tg.index(0.04), 2)
        with self.assertRaises(TimeGridError):
            tg.index(0.05)

    def test_scale_offset(self):
        """lambda = rho^(m/2) maps to offset m."""
        tg = TimeGrid.geometric(2.0, 0.01, 0.16)
        self.assertEqual(scale_offset(tg, 2 ** 0.5), 1)
        self.assertEqual(scale_offset(tg, 2.0), 2)
        with self.assertRaises(TimeGridError):
            scale_offset(tg, 1.3)
        with self.assertRaises(TimeGridError):
            scale_offset(TimeGrid.from_times([0.1, 0.2]), 2 ** 0.5)


class NonlinearTermTests(SimpleTestCase):
    def setUp(self):
        self.grid = make_grid(2, 64, 8.0)

    def test_radial_vortex_is_steady(self):
        """For u = x^perp g(|x|) the term P div(u (x) u) vanishes."""
        x, y = self.grid.coords
        g = np.exp(-self.grid.radius ** 2 / 2.0)
        u = Field(self.grid, np.stack([-y * g, x * g]))
        self.assertLess(nonlinear_term(u, u).sup_norm(), 1e-9)

    def test_output_is_solenoidal(self):
        """The projected term is divergence-free."""
        u = preset_field('vortex_pair', {}, self.grid)
        self.assertLess(spectral_divergence_defect(nonlinear_term(u, u)), 1e-12)


class DuhamelTests(SimpleTestCase):
    def setUp(self):
        self.grid = make_grid(2, 64, 8.0)
        self.tg = TimeGrid.geometric(2.0, 0.01, 0.16)
        self.u0 = 0.3 * preset_field('vortex_pair', {}, self.grid)

    def test_all_times_match_single_time(self):
        """The recursive sweep agrees with evaluating B at each stored time."""
        uT = linear_trajectory(self.u0, self.tg)
        every = duhamel_all(uT, uT)
        for t, f in zip(self.tg.times, every.fields):
            assert_allclose(duhamel_bilinear(uT, uT, t).values, f.values, rtol=1e-12, atol=1e-15)

    def test_constant_forcing_is_exact(self):
        """A time-independent integrand gives -F (1 - e^{-|xi|^2 t}) / |xi|^2."""
        uT = Trajectory(self.tg, tuple(self.u0 for _ in self.tg.times))
        result = duhamel_all(uT, uT)
        self.assertEqual(result.meta['first_panel_beta'], 0.0)
        forcing = fft(nonlinear_term(self.u0, self.u0).values, self.grid)
        kappa = self.grid.xi_norm ** 2
        for t, f in zip(self.tg.times, result.fields):
            factor = np.where(kappa > 0, -np.expm1(-kappa * t) / np.where(kappa > 0, kappa, 1.0), t)
            expected = -ifft(forcing * factor, self.grid).real
            assert_allclose(f.values, expected, atol=1e-10 * np.abs(expected).max())

    def test_fixed_beta_is_clipped(self):
        """An explicit first-panel exponent is capped at 1 - gamma."""
        mp = admissible(2, 2.0, 'inf', 0.0)
        quad = QuadratureConfig(beta=0.9)
        self.assertEqual(quad.first_panel_exponent([], [], mp), 0.5)
        self.assertEqual(QuadratureConfig(beta=-1.0).first_panel_exponent([], [], mp), 0.0)


class PicardTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.grid = make_grid(2, 64, 8.0)
        cls.mp = admissible(2, 2.0, 'inf', 0.0)
        cls.tg = TimeGrid.geometric(2 ** 0.5, 0.01, 0.16)
        cls.u0 = 0.05 * preset_field('vortex_pair', {}, cls.grid)
        cls.tol = 1e-9
        cls.solution = picard_solve(cls.u0, cls.mp, cls.tg, tol=cls.tol, max_iter=12)

    def test_zero_data(self):
        """Zero data converges on the first iteration to zero."""
        uT = picard_solve(Field.zeros(self.grid, 2), self.mp, self.tg)
        self.assertEqual(uT.status, 'converged')
        self.assertEqual(uT.meta['iterations'], 1)
        self.assertEqual(x_norm(uT, self.mp).total, 0.0)

    def test_small_data_contracts(self):
        """Small vortex-pair data converges with contraction ratio below 0.9."""
        uT = self.solution
        self.assertEqual(uT.status, 'converged')
        self.assertLess(uT.meta['contraction_ratio'], 0.9)
        self.assertGreater(uT.meta['epsilon'], 0.0)
        self.assertLess(uT.divergence_defect(), 1e-9)

    def test_fixed_point_residual(self):
        """The returned trajectory solves u = G u0 + B(u, u) to within the tolerance."""
        self.assertLess(fixed_point_residual(self.solution, self.u0, self.mp), 2 * self.tol)

    def test_start_independence(self):
        """Starting from zero reaches the same fixed point."""
        other = picard_solve(self.u0, self.mp, self.tg, tol=self.tol, max_iter=14, start='zero')
        self.assertEqual(other.status, 'converged')
        self.assertLess(x_norm(other - self.solution, self.mp).total, 5 * self.tol)

    def test_agrees_with_reference_solver(self):
        """The nonlinear part at T matches an integrating-factor RK4 run within 5%."""
        T = self.tg.T
        reference = reference_solve(self.u0, T, 64).fields[-1]
        linear = heat(self.u0, T)
        picard_part = self.solution.at(T) - linear
        error = (reference - linear - picard_part).l2_norm() / picard_part.l2_norm()
        self.assertLess(error, 0.05)

    def test_large_data_diverges(self):
        """Large vortex-pair data ends with status 'diverged' and a finite history."""
        u0 = 200.0 * preset_field('vortex_pair', {}, self.grid)
        uT = picard_solve(u0, self.mp, self.tg, tol=self.tol, max_iter=12)
        self.assertEqual(uT.status, 'diverged')
        self.assertLess(uT.meta['iterations'], 12)
        self.assertTrue(all(math.isfinite(d) for d in uT.history))
        self.assertGreater(uT.history[-1], uT.history[0])

    def test_trajectory_round_trip(self):
        """Saved trajectories reload with fields, history and params intact."""
        with tempfile.TemporaryDirectory() as tmp:
            save_trajectory(self.solution, tmp)
            loaded = load_trajectory(tmp)
        self.assertEqual(loaded.times, self.solution.times)
        self.assertEqual(loaded.history, self.solution.history)
        self.assertEqual(loaded.status, 'converged')
        self.assertEqual(loaded.params, self.mp)
        for a, b in zip(loaded.fields, self.solution.fields):
            assert_allclose(a.values, b.values, rtol=0, atol=0)


class CheckTests(SimpleTestCase):
    def test_contraction_ratio(self):
        """Ratios below the noise floor are ignored."""
        self.assertEqual(contraction_ratio([1.0, 0.5, 0.1], 1e-8), 0.5)
        self.assertIsNone(contraction_ratio([1e-12, 1e-6], 1e-8))
        self.assertIsNone(contraction_ratio([1.0], 1e-8))

    def test_pairing(self):
        """<f, f> is the squared Riemann L^2 norm."""
        f = preset_field('vortex_pair', {}, make_grid(2, 64, 8.0))
        self.assertAlmostEqual(pair(f, f), f.l2_norm() ** 2, places=10)

    def test_pairing_of_gaussians(self):
        """<g, g> for g = exp(-|x|^2/2) is the integral of exp(-|x|^2), pi in the plane."""
        g = preset_field('gaussian', {'sigma': 1.0}, make_grid(2, 128, 16.0))
        self.assertAlmostEqual(pair(g, g), math.pi, places=10)

    def test_decay_summary(self):
        """Values under the floor count as decayed; growth in the last decade is counted."""
        times = [0.01, 0.1, 0.2, 0.4, 0.8, 1.0]
        summary = decay_summary(times, [1.0, 0.5, 0.1, 1e-14, 3e-14, 2e-14], floor=1e-10)
        self.assertEqual(summary['decreasing_fraction'], 1.0)
        self.assertEqual(summary['final_ratio'], 0.0)
        raw = decay_summary(times, [1.0, 0.5, 0.1, 1e-14, 3e-14, 2e-14])
        self.assertEqual(raw['decreasing_fraction'], 0.75)
        self.assertAlmostEqual(raw['final_ratio'], 2e-14)

    def test_asymptotic_compare_of_heat_flow(self):
        """A high-frequency perturbation carried by G(t) decays monotonically in the critical norm."""
        grid = make_grid(2, 64, 8.0)
        mp = admissible(2, 2.0, 'inf', 0.0)
        tg = TimeGrid.geometric(2.0, 0.01, 0.64)
        j = grid.j_range[1]
        comps = [preset_field('random_bandlimited', {'j': j, 'pure': True, 'seed': 40 + i}, grid).values[0]
                 for i in range(2)]
        v0 = leray_project(Field(grid, np.stack(comps)))
        curve = asymptotic_compare(linear_trajectory(v0, tg), linear_trajectory(Field.zeros(grid, 2), tg), mp)
        self.assertEqual(curve['times'], list(tg.times))
        self.assertGreater(curve['values'][0], 0.0)
        self.assertEqual(curve['decreasing_fraction'], 1.0)
        self.assertLess(curve['final_ratio'], 0.1)

    def test_linear_flow_of_homogeneous_data_is_self_similar(self):
        """G(t) applied to a degree -1 field satisfies u(t) = lam u(lam x, lam^2 t)."""
        grid = make_grid(2, 256, 16.0)
        tg = TimeGrid.geometric(2.0, 0.04, 0.16)
        uT = linear_trajectory(preset_field('rotational', {}, grid), tg)
        result = self_similar_check(uT, 2 ** 0.5, (2.0, 3.0))
        self.assertEqual(result['offset'], 1)
        self.assertLess(result['max_error'], 1e-3)

    def test_reference_linear_run_is_heat(self):
        """Without the nonlinear term the reference stepper reproduces G(T)."""
        grid = make_grid(2, 64, 8.0)
        u0 = preset_field('vortex_pair', {}, grid)
        final = reference_solve(u0, 0.5, 20, nonlinear=False).fields[-1]
        assert_allclose(final.values, heat(u0, 0.5).values, atol=1e-12)
