import numpy as np
import pytest
import torch

from gdbnet.tensorops import (Adam, ConvParams, SpectralNormState,
                              apply_activation, concat_channels, conv2d,
                              conv2d_backward, conv_transpose2d, grad_check,
                              spectral_normalize)

torch.manual_seed(0)


def conv_oracle(x, w, b, stride, dilation, padding):
    """Direct six-loop cross-correlation."""
    n, cin, h, wid = x.shape
    cout, _, kh, kw = w.shape
    xp = np.zeros((n, cin, h + 2 * padding, wid + 2 * padding))
    xp[:, :, padding:padding + h, padding:padding + wid] = x
    oh = (h + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    ow = (wid + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    out = np.zeros((n, cout, oh, ow))
    for bi in range(n):
        for co in range(cout):
            for y in range(oh):
                for xx in range(ow):
                    acc = b[co]
                    for ci in range(cin):
                        for ky in range(kh):
                            for kx in range(kw):
                                acc += (w[co, ci, ky, kx]
                                        * xp[bi, ci, y * stride + ky * dilation,
                                             xx * stride + kx * dilation])
                    out[bi, co, y, xx] = acc
    return out


class TestConv2d:
    def test_1x1_identity(self):
        x = torch.rand(1, 1, 4, 4)
        params = ConvParams(weight=torch.ones(1, 1, 1, 1), bias=torch.zeros(1))
        torch.testing.assert_close(conv2d(x, params), x)

    def test_all_ones_kernel_on_constant(self):
        x = torch.full((1, 1, 5, 5), 0.5)
        params = ConvParams(weight=torch.ones(1, 1, 3, 3), bias=torch.zeros(1))
        out = conv2d(x, params)
        torch.testing.assert_close(out, torch.full((1, 1, 3, 3), 4.5))

    def test_strided_dilated_matches_loop_oracle(self):
        g = torch.Generator().manual_seed(1)
        x = torch.rand(1, 2, 5, 5, generator=g, dtype=torch.float64)
        w = torch.rand(3, 2, 3, 3, generator=g, dtype=torch.float64)
        b = torch.rand(3, generator=g, dtype=torch.float64)
        params = ConvParams(weight=w, bias=b, stride=2, dilation=2, padding=2)
        out = conv2d(x, params)
        ref = conv_oracle(x.numpy(), w.numpy(), b.numpy(), 2, 2, 2)
        np.testing.assert_allclose(out.numpy(), ref, atol=1e-12)

    def test_backward_matches_finite_differences(self):
        g = torch.Generator().manual_seed(2)
        x = torch.rand(1, 2, 6, 6, generator=g, dtype=torch.float64)
        w = torch.rand(2, 2, 3, 3, generator=g, dtype=torch.float64)
        b = torch.rand(2, generator=g, dtype=torch.float64)

        def f(xi, wi, bi):
            return conv2d(xi, ConvParams(weight=wi, bias=bi, padding=1)).pow(2).sum()

        assert grad_check(f, [x, w, b], h=1e-3) < 1e-3

    def test_zero_grad_out_gives_zero_grads(self):
        x = torch.rand(1, 1, 4, 4, requires_grad=True)
        params = ConvParams(weight=torch.rand(1, 1, 3, 3, requires_grad=True),
                            bias=torch.rand(1, requires_grad=True))
        out = conv2d(x, params)
        conv2d_backward(out, torch.zeros_like(out))
        assert x.grad.abs().sum() == 0
        assert params.weight.grad.abs().sum() == 0

    def test_bias_grad_is_spatial_batch_sum(self):
        x = torch.rand(2, 1, 4, 4)
        params = ConvParams(weight=torch.rand(3, 1, 3, 3),
                            bias=torch.zeros(3, requires_grad=True))
        out = conv2d(x, params)
        grad_out = torch.rand_like(out)
        conv2d_backward(out, grad_out)
        torch.testing.assert_close(params.bias.grad, grad_out.sum(dim=(0, 2, 3)))

    def test_backward_without_forward(self):
        with pytest.raises(RuntimeError):
            conv2d_backward(torch.zeros(1, 1, 2, 2), torch.zeros(1, 1, 2, 2))


class TestConvTranspose2d:
    def test_stride1_unit_kernel_identity(self):
        x = torch.rand(1, 1, 4, 4)
        params = ConvParams(weight=torch.ones(1, 1, 1, 1), bias=torch.zeros(1))
        torch.testing.assert_close(conv_transpose2d(x, params), x)

    def test_stride2_unit_kernel_scatter(self):
        # (h-1)*s + 1 = 3: inputs land at even coordinates, zeros between.
        x = torch.arange(1.0, 5.0).reshape(1, 1, 2, 2)
        params = ConvParams(weight=torch.ones(1, 1, 1, 1), bias=torch.zeros(1), stride=2)
        out = conv_transpose2d(x, params)
        expected = torch.tensor([[[[1.0, 0, 2], [0, 0, 0], [3, 0, 4]]]])
        torch.testing.assert_close(out, expected)

    def test_adjoint_identity(self):
        g = torch.Generator().manual_seed(3)
        w = torch.rand(2, 3, 3, 3, generator=g)
        # 7x7 input so the strided output maps back to 7x7 exactly:
        # (7+2-3)//2+1 = 4 forward, (4-1)*2-2+3 = 7 transposed.
        x = torch.rand(1, 3, 7, 7, generator=g)
        params_fwd = ConvParams(weight=w, bias=torch.zeros(2), stride=2, padding=1)
        y = torch.rand_like(conv2d(x, params_fwd))
        lhs = (conv2d(x, params_fwd) * y).sum()
        params_t = ConvParams(weight=w, bias=torch.zeros(3), stride=2, padding=1)
        rhs = (x * conv_transpose2d(y, params_t)).sum()
        torch.testing.assert_close(lhs, rhs, atol=1e-4, rtol=1e-4)


class TestActivations:
    def test_sigmoid_at_zero(self):
        assert apply_activation(torch.zeros(1), "sigmoid").item() == 0.5

    def test_leaky_relu_slope(self):
        assert apply_activation(torch.tensor([-1.0]), "leaky_relu", 0.2).item() == pytest.approx(-0.2)

    def test_concat_and_grad_split(self):
        a = torch.rand(1, 2, 3, 3, requires_grad=True)
        b = torch.rand(1, 3, 3, 3, requires_grad=True)
        out = concat_channels(a, b)
        assert out.shape == (1, 5, 3, 3)
        grad = torch.rand_like(out)
        out.backward(grad)
        torch.testing.assert_close(a.grad, grad[:, :2])
        torch.testing.assert_close(b.grad, grad[:, 2:])

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            apply_activation(torch.zeros(1), "swish")


class TestSpectralNorm:
    def test_diagonal_converges_to_top_singular_value(self):
        w = torch.diag(torch.tensor([3.0, 1.0]))
        state = SpectralNormState.for_weight(w, seed=1)
        for _ in range(10):
            normalized = spectral_normalize(w, state)
        sigma = (w / normalized)[0, 0]
        assert abs(sigma.item() - 3.0) < 1e-4
        top = torch.linalg.svdvals(normalized).max()
        assert abs(top.item() - 1.0) < 1e-4

    def test_scaled_orthogonal(self):
        c = 2.5
        q, _ = torch.linalg.qr(torch.rand(4, 4, generator=torch.Generator().manual_seed(4)))
        w = c * q
        state = SpectralNormState.for_weight(w, seed=2)
        for _ in range(20):
            normalized = spectral_normalize(w, state)
        torch.testing.assert_close(normalized, q, atol=1e-3, rtol=1e-3)

    def test_already_normalized_is_fixed_point(self):
        q, _ = torch.linalg.qr(torch.rand(3, 3, generator=torch.Generator().manual_seed(5)))
        state = SpectralNormState.for_weight(q, seed=3)
        for _ in range(20):
            normalized = spectral_normalize(q, state)
        torch.testing.assert_close(normalized, q, atol=1e-4, rtol=1e-4)

    def test_zero_matrix_guard(self):
        w = torch.zeros(3, 3)
        state = SpectralNormState.for_weight(w, seed=4)
        out = spectral_normalize(w, state)
        torch.testing.assert_close(out, w)

    def test_u_stays_unit_norm(self):
        w = torch.rand(4, 9, generator=torch.Generator().manual_seed(6))
        state = SpectralNormState.for_weight(w, seed=5)
        for _ in range(5):
            spectral_normalize(w, state)
            assert state.u.norm().item() == pytest.approx(1.0, abs=1e-6)


class TestAdam:
    def test_zero_gradient_no_update(self):
        p = torch.tensor([1.0, 2.0])
        p.grad = torch.zeros(2)
        opt = Adam([p], lr=0.1)
        opt.step()
        torch.testing.assert_close(p, torch.tensor([1.0, 2.0]))

    def test_first_step_magnitude_is_lr(self):
        # At t=1 with g=1, m_hat = 1 and v_hat = 1 so the update is
        # lr / (1 + eps) regardless of the betas.
        p = torch.tensor([0.0])
        p.grad = torch.ones(1)
        opt = Adam([p], lr=0.05)
        opt.step()
        assert p.item() == pytest.approx(-0.05, rel=1e-6)

    def test_minimizes_quadratic(self):
        p = torch.tensor([1.0])
        opt = Adam([p], lr=0.1)
        for _ in range(500):
            opt.zero_grad()
            p.grad = 2.0 * p.detach().clone()
            opt.step()
        assert abs(p.item()) < 1e-2

    def test_invalid_betas(self):
        with pytest.raises(ValueError):
            Adam([torch.zeros(1)], beta1=1.0)


class TestGradCheck:
    def test_linear_function_near_exact(self):
        x = torch.rand(2, 1, 3, 3, dtype=torch.float64)
        assert grad_check(lambda t: (3.0 * t).sum(), [x]) < 1e-9

    def test_cubic_finite_difference_error(self):
        # Central differences on x^3 at x=1 give 3 + h^2 exactly.
        h = 1e-3
        x = torch.ones(1, dtype=torch.float64)
        fd = ((1 + h) ** 3 - (1 - h) ** 3) / (2 * h)
        assert fd == pytest.approx(3.0 + h * h, rel=1e-9)
        assert grad_check(lambda t: t.pow(3).sum(), [x], h=h) < 1e-3

    def test_rejects_non_scalar(self):
        with pytest.raises(ValueError):
            grad_check(lambda t: t * 2, [torch.rand(3)])

    def test_coordinate_sampling_bounds_work(self):
        x = torch.rand(1, 1, 8, 8, dtype=torch.float64)
        err = grad_check(lambda t: t.pow(2).sum(), [x], max_coords=10)
        assert err < 1e-3
