import math
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from core.exceptions import ConfigurationError, FieldError, FieldFormatError, GridMismatchError, PresetError
from core.utils.field_io import HEADER, decode_field, encode_field, read_field, sidecar_path, write_field
from core.utils.fields import (
    Field, Representation, apply_multiplier, constant_symbol, convolve, dealiased_product, divergence, fft,
    gradient, heat, ifft, leray_project, make_grid, product_symbol, rescale, riesz_transform,
    spectral_divergence_defect, to_physical, to_spectral,
)
from core.utils.presets import preset_field, unit_ball_volume


def solenoidal(grid, seed, j=None):
    j = grid.j_range[1] if j is None else j
    comps = [preset_field('random_bandlimited', {'j': j, 'seed': seed * 10 + i}, grid).values[0]
             for i in range(grid.n)]
    return leray_project(Field(grid, np.stack(comps)))


class GridTests(SimpleTestCase):
    def test_ranges_for_reference_grid(self):
        """N=256, L=16 resolves annuli 0..3 and blocks -1..3."""
        grid = make_grid(2, 256, 16.0)
        self.assertEqual(grid.h, 0.125)
        self.assertEqual(grid.k_range, (0, 3))
        self.assertEqual(grid.j_range, (-1, 3))
        self.assertEqual(make_grid(2, 512, 16.0).j_range, (-1, 4))

    def test_origin_is_sample_half_n(self):
        """The origin sits at index N/2 on every axis."""
        grid = make_grid(2, 64, 8.0)
        self.assertEqual(grid.radius[32, 32], 0.0)
        self.assertEqual(grid.axis[0], -8.0)

    def test_invalid_parameters(self):
        """Bad N, n or L are rejected with the offending key."""
        for args, key in (((2, 100, 16.0), 'N'), ((4, 64, 16.0), 'n'), ((2, 64, 0.0), 'L'), ((2, 16, 16.0), 'N')):
            with self.assertRaises(ConfigurationError) as ctx:
                make_grid(*args)
            self.assertEqual(ctx.exception.key, key)


class FieldTests(SimpleTestCase):
    def setUp(self):
        self.grid = make_grid(2, 64, 8.0)

    def test_values_are_read_only(self):
        """Field arrays cannot be modified in place."""
        f = preset_field('gaussian', {}, self.grid)
        with self.assertRaises(ValueError):
            f.values[0, 0, 0] = 1.0

    def test_shape_and_finiteness_checks(self):
        """Wrong shapes and non-finite samples raise FieldError."""
        with self.assertRaises(FieldError):
            Field(self.grid, np.zeros((3, 64, 64)))
        bad = np.zeros((64, 64))
        bad[0, 0] = np.nan
        with self.assertRaises(FieldError):
            Field(self.grid, bad)

    def test_grid_mismatch(self):
        """Arithmetic across grids raises GridMismatchError."""
        other = make_grid(2, 32, 8.0)
        with self.assertRaises(GridMismatchError):
            Field.zeros(self.grid) + Field.zeros(other)

    def test_spectral_round_trip(self):
        """to_spectral followed by to_physical restores the samples."""
        f = preset_field('gaussian', {'sigma': 1.5}, self.grid)
        g = to_physical(to_spectral(f))
        self.assertIs(to_spectral(f).representation, Representation.SPECTRAL)
        assert_allclose(g.values, f.values, atol=1e-13)


class OperatorTests(SimpleTestCase):
    def setUp(self):
        self.grid = make_grid(2, 64, 8.0)

    def test_heat_on_a_mode(self):
        """G(t) multiplies a lattice mode by exp(-t|xi|^2)."""
        f = preset_field('mode', {'m': [2, 1]}, self.grid)
        xi2 = (math.pi / 8.0) ** 2 * 5
        assert_allclose(heat(f, 0.3).values, math.exp(-0.3 * xi2) * f.values, atol=1e-12)
        assert_allclose(heat(f, 0.0).values, f.values, atol=1e-13)

    @settings(max_examples=10, deadline=None)
    @given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
    def test_heat_semigroup(self, s, t):
        """G(s)G(t) = G(s + t)."""
        f = preset_field('random_bandlimited', {'j': 1, 'seed': 3}, self.grid)
        assert_allclose(heat(heat(f, s), t).values, heat(f, s + t).values, atol=1e-12)

    def test_heat_rejects_negative_time(self):
        """Negative heat time is a configuration error."""
        with self.assertRaises(ConfigurationError):
            heat(preset_field('gaussian', {}, self.grid), -1.0)

    def test_constant_multiplier(self):
        """The constant symbol c multiplies the field by c."""
        f = preset_field('gaussian', {}, self.grid)
        assert_allclose(apply_multiplier(f, constant_symbol(2.5)).values, 2.5 * f.values, atol=1e-12)

    def test_riesz_transform_needs_scalar(self):
        """Riesz transforms act on scalar fields only."""
        with self.assertRaises(FieldError):
            riesz_transform(solenoidal(self.grid, 1), 0)

    def test_leray_kills_gradients(self):
        """P(grad g) = 0 for a smooth scalar g."""
        g = preset_field('gaussian', {'sigma': 1.0}, self.grid)
        projected = leray_project(gradient(g))
        self.assertLess(np.abs(projected.values).max(), 1e-10)

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 10_000))
    def test_leray_is_idempotent_and_solenoidal(self, seed):
        """P is a projection onto divergence-free fields."""
        comps = [preset_field('random_bandlimited', {'seed': seed + i}, self.grid).values[0] for i in range(2)]
        u = leray_project(Field(self.grid, np.stack(comps)))
        assert_allclose(leray_project(u).values, u.values, atol=1e-12)
        self.assertLess(spectral_divergence_defect(u), 1e-12)
        self.assertLess(np.abs(divergence(u).values).max(), 1e-10)

    def test_transforms_accept_single_components(self):
        """fft and ifft treat a bare (N, N) array like one component of the stack."""
        f = preset_field('random_bandlimited', {'seed': 4}, self.grid)
        spec = fft(f.values[0], self.grid)
        assert_allclose(spec, fft(f.values, self.grid)[0], atol=1e-12)
        assert_allclose(ifft(spec, self.grid).real, f.values[0], atol=1e-13)

    def test_riesz_squares_sum_to_minus_identity(self):
        """sum_i R_i R_i f = -(f - mean f), and R_i kills constants."""
        f = preset_field('random_bandlimited', {'seed': 2}, self.grid)
        g = f.with_values(f.values[0] + 3.0)
        total = sum(riesz_transform(riesz_transform(g, i), i).values for i in range(2))
        assert_allclose(total, -f.values, atol=1e-12 * f.sup_norm())
        constant = f.with_values(np.full(self.grid.shape, 3.0))
        self.assertEqual(riesz_transform(constant, 0).sup_norm(), 0.0)

    def test_multiplier_is_linear(self):
        """T_P(a f + b g) = a T_P f + b T_P g."""
        P = product_symbol(0, 1)
        f = preset_field('random_bandlimited', {'seed': 8}, self.grid)
        g = preset_field('gaussian', {'sigma': 0.8}, self.grid)
        lhs = apply_multiplier(2.5 * f - 1.25 * g, P).values
        rhs = 2.5 * apply_multiplier(f, P).values - 1.25 * apply_multiplier(g, P).values
        assert_allclose(lhs, rhs, atol=1e-12)

    def test_heat_peak_of_gaussian(self):
        """G(t) exp(-|x|^2/2) peaks at (1 + 2t)^-1 in the plane."""
        grid = make_grid(2, 128, 16.0)
        f = preset_field('gaussian', {'sigma': 1.0}, grid)
        for t in (0.1, 0.5, 2.0):
            self.assertAlmostEqual(heat(f, t).values[0, 64, 64], 1.0 / (1.0 + 2.0 * t), places=10)

    def test_convolution_with_delta(self):
        """The discrete unit mass is the identity for convolve."""
        f = preset_field('gaussian', {'sigma': 0.7}, self.grid)
        delta = preset_field('delta', {}, self.grid)
        assert_allclose(convolve(delta, f).values, f.values, atol=1e-12)

    def test_heat_kernel_convolution_matches_heat(self):
        """Convolution with the heat kernel equals the spectral heat flow."""
        grid = make_grid(2, 128, 16.0)
        f = preset_field('gaussian', {'sigma': 1.0}, grid)
        theta = preset_field('heat_kernel', {'t': 0.5}, grid)
        assert_allclose(convolve(theta, f).values, heat(f, 0.5).values, atol=1e-9)

    def test_dealiased_product_of_low_modes(self):
        """Products of well-resolved modes are exact."""
        a = preset_field('mode', {'m': [1, 0]}, self.grid)
        b = preset_field('mode', {'m': [0, 2], 'kind': 'sin'}, self.grid)
        assert_allclose(dealiased_product(a, b).values, a.values * b.values, atol=1e-12)

    def test_rescale_gaussian(self):
        """lam f(lam x) of a Gaussian is the narrower Gaussian scaled by lam."""
        grid = make_grid(2, 256, 16.0)
        f = preset_field('gaussian', {'sigma': 1.0}, grid)
        g = rescale(f, 2.0)
        expected = 2.0 * preset_field('gaussian', {'sigma': 0.5}, grid).values
        assert_allclose(g.values, expected, atol=1e-9)
        self.assertFalse(g.meta['decay_warning'])
        assert_allclose(rescale(f, 0.5).values, 0.5 * preset_field('gaussian', {'sigma': 2.0}, grid).values,
                        atol=1e-9)

    def test_rescale_composes(self):
        """Rescaling by a then b equals rescaling by ab."""
        grid = make_grid(2, 256, 16.0)
        f = preset_field('gaussian', {'sigma': 1.0}, grid)
        assert_allclose(rescale(rescale(f, 2.0), 0.5).values, f.values, atol=1e-8)
        root = 2 ** 0.5
        assert_allclose(rescale(rescale(f, root), root).values, rescale(f, 2.0).values, atol=1e-8)

    def test_rescale_identity(self):
        """lam = 1 returns the same samples."""
        f = preset_field('gaussian', {}, self.grid)
        assert_allclose(rescale(f, 1.0).values, f.values)


class PresetTests(SimpleTestCase):
    def test_unknown_preset(self):
        """Unknown names raise PresetError."""
        with self.assertRaises(PresetError):
            preset_field('nope', {}, make_grid(2, 64, 8.0))

    def test_annulus_indicator_range(self):
        """Indicators outside the resolvable range are rejected."""
        grid = make_grid(2, 256, 16.0)
        with self.assertRaises(PresetError):
            preset_field('annulus_indicator', {'k': 5}, grid)
        f = preset_field('annulus_indicator', {'k': 2}, grid)
        area = f.values.sum() * grid.cell_volume
        self.assertAlmostEqual(area / (unit_ball_volume(2) * (16 - 4)), 1.0, delta=0.02)

    def test_random_field_is_resolution_independent(self):
        """The same seed and band sample the same function on N and 2N."""
        coarse = preset_field('random_bandlimited', {'j': 2, 'j_low': 0, 'seed': 11}, make_grid(2, 128, 16.0))
        fine = preset_field('random_bandlimited', {'j': 2, 'j_low': 0, 'seed': 11}, make_grid(2, 256, 16.0))
        assert_allclose(fine.values[0][::2, ::2], coarse.values[0], atol=1e-12)

    def test_random_field_band(self):
        """Spectral content stays inside [(4/3)2^j_low, (3/2)2^j]."""
        grid = make_grid(2, 128, 16.0)
        f = preset_field('random_bandlimited', {'j': 1, 'j_low': 0, 'seed': 5}, grid)
        spec = np.abs(fft(f.values[0], grid))
        lo, hi = f.meta['band']
        outside = (grid.xi_norm < lo - 1e-12) | (grid.xi_norm > hi + 1e-12)
        self.assertLess(spec[outside].max(), 1e-9 * spec.max())

    def test_rotational_is_homogeneous_inside_taper(self):
        """Inside the taper radius the rotational field is exactly x^perp / |x|^2."""
        grid = make_grid(2, 128, 16.0)
        u = preset_field('rotational', {}, grid)
        mask = (grid.radius > 0) & (grid.radius < 8.0)
        assert_allclose(u.values[0][mask], -grid.coords[1][mask] / grid.radius[mask] ** 2)
        assert_allclose(u.magnitude()[mask], 1.0 / grid.radius[mask])
        self.assertEqual(u.magnitude()[grid.radius > 14.0].max(), 0.0)

    def test_rotational_is_degree_minus_one_homogeneous(self):
        """lam u(lam x) = u(x) inside the taper radius."""
        grid = make_grid(2, 128, 16.0)
        u = preset_field('rotational', {}, grid)
        scaled = rescale(u, 2.0)
        mask = (grid.radius > 0) & (grid.radius < 3.5)
        assert_allclose(scaled.values[:, mask], u.values[:, mask], atol=1e-9)

    def test_leray_fixes_rotational(self):
        """The Oseen-cored rotational field is already divergence-free."""
        grid = make_grid(2, 256, 16.0)
        u = preset_field('rotational', {'core': 1.0}, grid)
        assert_allclose(leray_project(u).values, u.values, atol=1e-4 * u.sup_norm())

    def test_strictness_witness_needs_resolution(self):
        """Bumps of radius 1/8 need h <= 1/8."""
        with self.assertRaises(PresetError):
            preset_field('strictness_witness', {}, make_grid(2, 64, 16.0))
        f = preset_field('strictness_witness', {'p': 2}, make_grid(2, 256, 8.0))
        self.assertEqual(f.meta['bumps'], 3)


class FieldIOTests(SimpleTestCase):
    def setUp(self):
        self.grid = make_grid(2, 32, 4.0)
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def test_write_and_read_with_sidecar(self):
        """A written preset reads back with its metadata."""
        f = preset_field('gaussian', {'sigma': 0.5}, self.grid)
        path = write_field(f, Path(self.tmp.name) / 'g.bhf')
        self.assertTrue(sidecar_path(path).exists())
        g = read_field(path)
        assert_allclose(g.values, f.values)
        self.assertEqual(g.meta['preset'], 'gaussian')

    def test_spectral_vector_field_survives_packing(self):
        """Hermitian packing keeps the full spectrum of real data."""
        u = solenoidal(make_grid(2, 32, 8.0), 4)
        spec = to_spectral(u)
        back = decode_field(encode_field(spec))
        self.assertIs(back.representation, Representation.SPECTRAL)
        assert_allclose(back.values, spec.values, atol=1e-12 * np.abs(spec.values).max())

    def test_layout_is_x_fastest(self):
        """Payload order runs over the first axis fastest."""
        values = np.arange(32 * 32, dtype=float).reshape(32, 32)
        data = encode_field(Field(self.grid, values))
        payload = np.frombuffer(data, dtype='<f8', offset=HEADER.size)
        self.assertEqual(payload[1], values[1, 0])
        self.assertEqual(payload[32], values[0, 1])

    def test_truncated_and_corrupt_files(self):
        """Short payloads and bad magic raise FieldFormatError."""
        data = encode_field(preset_field('gaussian', {}, self.grid))
        with self.assertRaises(FieldFormatError) as ctx:
            decode_field(data[:-8])
        self.assertEqual(ctx.exception.expected, len(data))
        self.assertEqual(ctx.exception.actual, len(data) - 8)
        with self.assertRaises(FieldFormatError):
            decode_field(b'XXXX' + data[4:])
        with self.assertRaises(FieldFormatError):
            decode_field(data[:10])
        with self.assertRaises(FieldFormatError):
            decode_field(data + b'\x00' * 8)
