"""Low-level tensor machinery: convolution wrappers, spectral
normalization, a bias-corrected Adam optimizer, and a finite-difference
gradient checker.

Tensors are torch CPU tensors of shape (batch, channels, height, width);
reverse-mode differentiation rides on torch autograd. Everything here is
deterministic for a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

__all__ = [
    "ConvParams",
    "conv2d",
    "conv2d_backward",
    "conv_transpose2d",
    "apply_activation",
    "concat_channels",
    "SpectralNormState",
    "spectral_normalize",
    "Adam",
    "grad_check",
]


@dataclass
class ConvParams:
    """Weights and geometry of one convolution."""

    weight: torch.Tensor  # (out_ch, in_ch, kh, kw)
    bias: torch.Tensor    # (out_ch,)
    stride: int = 1
    dilation: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.weight.ndim != 4 or self.bias.ndim != 1:
            raise ValueError("weight must be 4-D and bias 1-D")
        if self.stride < 1 or self.dilation < 1 or self.padding < 0:
            raise ValueError("invalid stride/dilation/padding")


def conv2d(input: torch.Tensor, params: ConvParams) -> torch.Tensor:
    """Strided, dilated, zero-padded cross-correlation plus bias."""
    return F.conv2d(input, params.weight, params.bias,
                    stride=params.stride, padding=params.padding,
                    dilation=params.dilation)


def conv2d_backward(output: torch.Tensor, grad_out: torch.Tensor) -> None:
    """Accumulate gradients of a recorded forward into the leaves' .grad."""
    if output.grad_fn is None:
        raise RuntimeError("no recorded forward pass to differentiate")
    output.backward(gradient=grad_out)


def conv_transpose2d(input: torch.Tensor, params: ConvParams) -> torch.Tensor:
    """Transposed convolution; stride acts as the upsampling factor."""
    return F.conv_transpose2d(input, params.weight, params.bias,
                              stride=params.stride, padding=params.padding,
                              dilation=params.dilation)


def apply_activation(x: torch.Tensor, kind: str, alpha: float = 0.2) -> torch.Tensor:
    if kind == "sigmoid":
        return torch.sigmoid(x)
    if kind == "relu":
        return F.relu(x)
    if kind == "leaky_relu":
        return F.leaky_relu(x, negative_slope=alpha)
    if kind == "identity":
        return x
    raise ValueError(f"unknown activation kind {kind!r}")


def concat_channels(*tensors: torch.Tensor) -> torch.Tensor:
    return torch.cat(tensors, dim=1)


@dataclass
class SpectralNormState:
    """Persistent left singular-vector estimate for one weight matrix."""

    u: torch.Tensor
    n_power_iterations: int = 1

    @classmethod
    def for_weight(cls, weight: torch.Tensor, seed: int = 0) -> "SpectralNormState":
        gen = torch.Generator().manual_seed(seed)
        u = torch.randn(weight.shape[0], generator=gen, dtype=weight.dtype)
        return cls(u=u / u.norm())


def spectral_normalize(weight: torch.Tensor, state: SpectralNormState,
                       update: bool = True) -> torch.Tensor:
    """Divide a weight by its estimated largest singular value.

    Runs ``state.n_power_iterations`` power-iteration steps (updating the
    persistent u when ``update`` is true), then returns weight / sigma.
    A zero weight matrix is returned unchanged.
    """
    w_mat = weight.reshape(weight.shape[0], -1)
    eps = 1e-12
    with torch.no_grad():
        u = state.u
        v = None
        for _ in range(max(state.n_power_iterations, 1)):
            v = w_mat.t() @ u
            v = v / v.norm().clamp_min(eps)
            u = w_mat @ v
            u = u / u.norm().clamp_min(eps)
        if update:
            state.u = u.detach()
    sigma = torch.dot(u, w_mat @ v)
    if float(sigma.detach().abs()) < eps:
        return weight
    return weight / sigma


class Adam:
    """Bias-corrected Adam over a list of parameter tensors."""

    def __init__(self, params, lr=2e-4, beta1=0.5, beta2=0.999, eps=1e-8):
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ValueError("betas must lie in [0, 1)")
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self._m = [torch.zeros_like(p) for p in self.params]
        self._v = [torch.zeros_like(p) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            if p.grad is not None:
                p.grad.detach_()
                p.grad.zero_()

    @torch.no_grad()
    def step(self):
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            g = p.grad
            m.mul_(self.beta1).add_(g, alpha=1.0 - self.beta1)
            v.mul_(self.beta2).addcmul_(g, g, value=1.0 - self.beta2)
            m_hat = m / bc1
            v_hat = v / bc2
            p.add_(m_hat / (v_hat.sqrt() + self.eps), alpha=-self.lr)


def grad_check(fn, inputs, h: float = 1e-3, max_coords: int | None = None,
               seed: int = 0) -> float:
    """Max relative error of autograd vs central finite differences.

    ``fn`` must return a scalar tensor of the given leaf inputs. When
    ``max_coords`` is set, a seeded random subset of coordinates per
    input is checked instead of all of them.
    """
    inputs = [t for t in inputs]
    for t in inputs:
        t.requires_grad_(True)
        if t.grad is not None:
            t.grad = None
    out = fn(*inputs)
    if out.numel() != 1:
        raise ValueError("grad_check requires a scalar-valued closure")
    analytic = torch.autograd.grad(out, inputs, allow_unused=False)

    rng = torch.Generator().manual_seed(seed)
    worst = 0.0
    for t, a in zip(inputs, analytic):
        flat = t.detach().reshape(-1)
        n = flat.numel()
        if max_coords is not None and n > max_coords:
            coords = torch.randperm(n, generator=rng)[:max_coords].tolist()
        else:
            coords = range(n)
        a_flat = a.reshape(-1)
        for i in coords:
            orig = flat[i].item()
            with torch.no_grad():
                flat[i] = orig + h
                f_plus = float(fn(*inputs))
                flat[i] = orig - h
                f_minus = float(fn(*inputs))
                flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            a_i = float(a_flat[i])
            denom = max(abs(a_i), abs(numeric), 1e-6)
            worst = max(worst, abs(a_i - numeric) / denom)
    return worst
