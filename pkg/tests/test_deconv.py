"""
Tests for the closed-form deconvolution module
"""

import numpy as np
import pytest

from iterdeconv.blur_model import make_rng, synthetic_scene
from iterdeconv.deconv import (
    HORIZONTAL_FILTER,
    VERTICAL_FILTER,
    DeconvPlan,
    ZInit,
    deconv_step,
    embed_kernel,
    grad_extract,
    grad_extract_adjoint,
    hq_objective,
    initial_deconv,
    psf2otf,
)
from iterdeconv.errors import ConfigError, KernelError, ShapeMismatchError
from iterdeconv.kernel import BlurKernel
from iterdeconv.metrics import psnr
from iterdeconv.tensor_fft import circular_convolve, fft2, ifft2


def random_kernel(rng, size: int = 3) -> BlurKernel:
    return BlurKernel.normalized(rng.random((size, size)) + 0.05)


def dense_operator(apply, height: int, width: int) -> np.ndarray:
    """Matrix of a linear map on (height, width) fields, built column by column"""
    columns = []
    for index in range(height * width):
        basis = np.zeros(height * width)
        basis[index] = 1.0
        columns.append(apply(basis.reshape(height, width)).ravel())
    return np.stack(columns, axis=1)


def test_identity_kernel_has_flat_spectrum():
    np.testing.assert_allclose(psf2otf(BlurKernel.identity(), 5, 7), np.ones((5, 7)), atol=1e-15)


def test_otf_dc_equals_tap_sum(rng):
    otf = psf2otf(random_kernel(rng, 5), 12, 9)
    assert otf[0, 0] == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("seed", range(50))
def test_psf2otf_matches_spatial_convolution(seed):
    rng = make_rng(seed)
    kernel = random_kernel(rng, 3)
    x = rng.normal(size=(6, 6))
    via_fft = ifft2(psf2otf(kernel, 6, 6) * fft2(x))
    np.testing.assert_allclose(via_fft, circular_convolve(x, embed_kernel(kernel, 6, 6)), atol=1e-10)


def test_psf2otf_rejects_oversized_kernel():
    with pytest.raises(KernelError):
        psf2otf(BlurKernel.box(7), 5, 9)


def test_gradient_filters_sum_to_zero_and_are_transposes():
    assert HORIZONTAL_FILTER.sum() == 0.0
    np.testing.assert_array_equal(VERTICAL_FILTER, HORIZONTAL_FILTER.T)


def test_grad_extract_constant_image_is_zero():
    grad_h, grad_w = grad_extract(np.full((4, 6), 0.3))
    assert not grad_h.any()
    assert not grad_w.any()


def test_grad_extract_ramp_wraps_at_last_column():
    c, width = 0.1, 5
    x = np.tile(np.arange(width) * c, (3, 1))
    grad_h, grad_w = grad_extract(x)
    np.testing.assert_allclose(grad_h[:, :-1], c, atol=1e-15)
    np.testing.assert_allclose(grad_h[:, -1], -(width - 1) * c, atol=1e-15)
    np.testing.assert_allclose(grad_w, 0.0, atol=1e-15)


def test_grad_extract_matches_filter_convolution(rng):
    x = rng.normal(size=(5, 5))
    grad_h, grad_w = grad_extract(x)
    np.testing.assert_allclose(grad_h, circular_convolve(x, embed_kernel(HORIZONTAL_FILTER, 5, 5)), atol=1e-12)
    np.testing.assert_allclose(grad_w, circular_convolve(x, embed_kernel(VERTICAL_FILTER, 5, 5)), atol=1e-12)


def test_grad_extract_adjoint_identity(rng):
    x = rng.normal(size=(6, 7))
    d_h, d_w = rng.normal(size=(6, 7)), rng.normal(size=(6, 7))
    grad_h, grad_w = grad_extract(x)
    lhs = np.sum(grad_h * d_h) + np.sum(grad_w * d_w)
    rhs = np.sum(x * grad_extract_adjoint(d_h, d_w))
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


def test_plan_spectra_invariants(rng):
    plan = DeconvPlan.build(random_kernel(rng, 5), 10, 12)
    assert np.all(plan.G >= 0)
    assert np.all(plan.H >= 0)
    assert plan.H[0, 0] == 0.0
    assert plan.G[0, 0] == pytest.approx(1.0, abs=1e-12)
    assert not plan.G.flags.writeable


def test_plan_prior_spectrum_is_the_gradient_operator(rng):
    plan = DeconvPlan.build(random_kernel(rng, 3), 8, 6)
    x = rng.random((8, 6))
    grad_h, grad_w = grad_extract(x)
    np.testing.assert_allclose(ifft2(plan.otf_h * fft2(x)), grad_h, atol=1e-12)
    np.testing.assert_allclose(ifft2(plan.otf_w * fft2(x)), grad_w, atol=1e-12)
    np.testing.assert_allclose(plan.H, np.abs(plan.otf_h) ** 2 + np.abs(plan.otf_w) ** 2, atol=1e-12)


@pytest.mark.parametrize("gamma", [1.0, 3.0, 1e3])
def test_identity_kernel_with_own_gradients_returns_input(rng, gamma):
    y = rng.random((6, 6))
    plan = DeconvPlan.build(BlurKernel.identity(), 6, 6)
    z_h, z_w = grad_extract(y)
    np.testing.assert_allclose(deconv_step(y, plan, z_h, z_w, gamma), y, atol=1e-11)


@pytest.mark.parametrize("size", [4, 5, 6])
def test_deconv_step_matches_dense_normal_equations(size):
    for seed in range(50):
        rng = make_rng(seed, size)
        plan = DeconvPlan.build(random_kernel(rng, 3), size, size)
        y = rng.random((size, size))
        z_h, z_w = rng.normal(scale=0.1, size=(2, size, size))
        gamma = float(rng.uniform(0.1, 100.0))

        K = dense_operator(plan.blur, size, size)
        P_h = dense_operator(lambda v: grad_extract(v)[0], size, size)
        P_w = dense_operator(lambda v: grad_extract(v)[1], size, size)
        system = gamma * K.T @ K + P_h.T @ P_h + P_w.T @ P_w
        rhs = gamma * K.T @ y.ravel() + P_h.T @ z_h.ravel() + P_w.T @ z_w.ravel()
        expected = np.linalg.solve(system, rhs).reshape(size, size)

        np.testing.assert_allclose(deconv_step(y, plan, z_h, z_w, gamma), expected, atol=1e-8)


def test_large_gamma_inverts_gaussian_blur():
    x0 = synthetic_scene(7, 32)
    plan = DeconvPlan.build(BlurKernel.gaussian(5, 0.7), 32, 32)
    y = plan.blur(x0)
    zeros = np.zeros_like(y)
    assert psnr(deconv_step(y, plan, zeros, zeros, 1e8), x0) > 60.0


def test_returned_image_minimizes_objective(rng):
    plan = DeconvPlan.build(random_kernel(rng, 3), 6, 6)
    y = rng.random((6, 6))
    z_h, z_w = rng.normal(scale=0.1, size=(2, 6, 6))
    gamma = 5.0
    x = deconv_step(y, plan, z_h, z_w, gamma)
    best = hq_objective(x, y, plan, z_h, z_w, gamma)
    for _ in range(20):
        direction = rng.normal(size=x.shape)
        direction *= 1e-4 / np.linalg.norm(direction)
        assert hq_objective(x + direction, y, plan, z_h, z_w, gamma) >= best - 1e-12 * max(1.0, best)


def test_deconv_step_is_linear(rng):
    plan = DeconvPlan.build(random_kernel(rng, 3), 7, 7)
    fields_a = rng.normal(size=(3, 7, 7))
    fields_b = rng.normal(size=(3, 7, 7))
    gamma = 12.0
    mixed = 2.0 * fields_a - 3.0 * fields_b
    combined = deconv_step(mixed[0], plan, mixed[1], mixed[2], gamma)
    separate = (2.0 * deconv_step(fields_a[0], plan, fields_a[1], fields_a[2], gamma)
                - 3.0 * deconv_step(fields_b[0], plan, fields_b[1], fields_b[2], gamma))
    np.testing.assert_allclose(combined, separate, atol=1e-10)


def test_dc_is_preserved(rng):
    plan = DeconvPlan.build(random_kernel(rng, 5), 9, 9)
    y = rng.random((9, 9))
    z_h, z_w = rng.normal(size=(2, 9, 9))
    z_h -= z_h.mean()
    z_w -= z_w.mean()
    assert deconv_step(y, plan, z_h, z_w, 2.0).mean() == pytest.approx(y.mean(), abs=1e-12)


def test_deconv_step_rejects_bad_arguments(rng):
    plan = DeconvPlan.build(random_kernel(rng, 3), 6, 6)
    y = rng.random((6, 6))
    zeros = np.zeros((6, 6))
    with pytest.raises(ConfigError):
        deconv_step(y, plan, zeros, zeros, 0.0)
    with pytest.raises(ConfigError):
        deconv_step(y, plan, zeros, zeros, -1.0)
    with pytest.raises(ShapeMismatchError):
        deconv_step(rng.random((6, 7)), plan, zeros, zeros, 1.0)


def test_initial_deconv_identity_kernel_large_gamma(rng):
    y = rng.random((16, 16))
    plan = DeconvPlan.build(BlurKernel.identity(), 16, 16)
    np.testing.assert_allclose(initial_deconv(y, plan, 1e8), y, atol=1e-6)


def test_initial_deconv_keeps_constant_images(rng):
    plan = DeconvPlan.build(random_kernel(rng, 5), 12, 12)
    y = np.full((12, 12), 0.42)
    np.testing.assert_allclose(initial_deconv(y, plan, 50.0), y, atol=1e-10)


def test_initial_deconv_gradient_init_uses_observation_gradients(rng):
    y = rng.random((8, 8))
    plan = DeconvPlan.build(BlurKernel.identity(), 8, 8)
    np.testing.assert_allclose(initial_deconv(y, plan, 3.0, ZInit.GRADIENT), y, atol=1e-11)
