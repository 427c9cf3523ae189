"""Independent oracles shared by the unit and acceptance suites.

Everything here recomputes expected values through a different route
than the library code: explicit functional layer calls, quadrature,
scalar recurrences, brute-force summation.
"""

import math

import numpy as np
import torch
import torch.nn.functional as F
from scipy import integrate


# --- straight-line forward passes (no module forward() reuse) -------------------

def _conv(m, h):
    return F.conv2d(h, m.weight, m.bias, m.stride, m.padding)


def _enc_block(b, h, slope):
    inner = F.leaky_relu(_conv(b.conv1, h), slope)
    inner = _conv(b.conv2, inner)
    return F.leaky_relu(inner + _conv(b.skip, h), slope)


def straight_line_encode(encoder, x, level, alpha):
    cfg = encoder.config
    slope = cfg.leaky_slope
    if level == 0:
        h = _conv(encoder.from_rgb[0], x)
    else:
        if alpha < 1.0:
            coarse = _conv(encoder.from_rgb[level - 1], F.avg_pool2d(x, 2))
            if alpha == 0.0:
                h = coarse
            else:
                fine = _enc_block(encoder.blocks[level],
                                  _conv(encoder.from_rgb[level], x), slope)
                h = (1 - alpha) * coarse + alpha * fine
        else:
            h = _enc_block(encoder.blocks[level],
                           _conv(encoder.from_rgb[level], x), slope)
        for l in range(level - 1, 0, -1):
            h = _enc_block(encoder.blocks[l], h, slope)
    z = _conv(encoder.latent_head, h)
    if cfg.final_layer_activation:
        z = F.leaky_relu(z, slope)
    z = z.flatten(1)
    return z / z.norm(dim=1, keepdim=True)


def _dec_block(b, h, slope):
    up = F.interpolate(h, scale_factor=2, mode="nearest")
    inner = F.leaky_relu(_conv(b.conv1, up), slope)
    inner = _conv(b.conv2, inner)
    return F.leaky_relu(inner + _conv(b.skip, up), slope)


def straight_line_decode(decoder, codes, level, alpha):
    cfg = decoder.config
    slope = cfg.leaky_slope
    base = decoder.base
    h = F.conv_transpose2d(codes.unsqueeze(-1).unsqueeze(-1), base.weight,
                           base.bias, base.stride, base.padding)
    h = F.leaky_relu(h, slope)
    for l in range(1, level):
        h = _dec_block(decoder.blocks[l], h, slope)
    if level == 0:
        return _conv(decoder.to_rgb[0], h)
    if alpha < 1.0:
        coarse = F.interpolate(_conv(decoder.to_rgb[level - 1], h),
                               scale_factor=2, mode="nearest")
        if alpha == 0.0:
            return coarse
        fine = _conv(decoder.to_rgb[level], _dec_block(decoder.blocks[level], h, slope))
        return (1 - alpha) * coarse + alpha * fine
    return _conv(decoder.to_rgb[level], _dec_block(decoder.blocks[level], h, slope))


# --- loss oracles ------------------------------------------------------------------

def kl_quadrature_oracle(codes: torch.Tensor) -> float:
    """Per-dimension numerical integration of KL(N(mu, var) || N(0, 1))."""
    arr = codes.detach().double().numpy()
    mu = arr.mean(axis=0)
    var = arr.var(axis=0, ddof=0)
    var = np.maximum(var, 1e-12)
    total = 0.0
    for m, v in zip(mu, var):
        s = math.sqrt(v)

        def integrand(x, m=m, s=s):
            # p * log(p/q) with the log ratio expanded analytically so the
            # tails never divide by an underflowed q
            p = math.exp(-((x - m) ** 2) / (2 * s * s)) / (s * math.sqrt(2 * math.pi))
            log_ratio = x * x / 2 - ((x - m) ** 2) / (2 * s * s) - math.log(s)
            return p * log_ratio

        lo = m - 40 * max(s, 1.0)
        hi = m + 40 * max(s, 1.0)
        value, _ = integrate.quad(integrand, lo, hi, limit=300,
                                  points=[m - s, m, m + s])
        total += value
    return total


def l1_mean_oracle(a: torch.Tensor, b: torch.Tensor) -> float:
    """Direct elementwise-summation L1 mean, independent of torch reductions."""
    fa = a.detach().double().flatten().tolist()
    fb = b.detach().double().flatten().tolist()
    return math.fsum(abs(x - y) for x, y in zip(fa, fb)) / len(fa)


def cosine_distance_oracle(z: torch.Tensor, z_rec: torch.Tensor) -> float:
    za = z.detach().double().numpy()
    zb = z_rec.detach().double().numpy()
    return float(np.mean([1.0 - float(x @ y) for x, y in zip(za, zb)]))


# --- optimizer / EMA recurrences -----------------------------------------------------

def adam_oracle_step(theta, grad, m, v, t, lr, beta1, beta2, eps):
    """One scalar ADAM update; returns (theta', m', v')."""
    m = beta1 * m + (1 - beta1) * grad
    v = beta2 * v + (1 - beta2) * grad * grad
    m_hat = m / (1 - beta1 ** t)
    v_hat = v / (1 - beta2 ** t)
    theta = theta - lr * m_hat / (math.sqrt(v_hat) + eps)
    return theta, m, v


def ema_closed_form(initial, live_sequence, decay):
    """v_T = d^T v_0 + (1 - d) * sum_k d^(T-1-k) w_k."""
    t = len(live_sequence)
    value = (decay ** t) * initial
    for k, w in enumerate(live_sequence):
        value += (1 - decay) * (decay ** (t - 1 - k)) * w
    return value


# --- finite differences ---------------------------------------------------------------

def finite_difference_grad(f, param: torch.Tensor, indices, h: float = 1e-6):
    """Central finite differences of scalar f() wrt selected param entries."""
    grads = {}
    flat = param.data.view(-1)
    for idx in indices:
        original = flat[idx].item()
        flat[idx] = original + h
        plus = f()
        flat[idx] = original - h
        minus = f()
        flat[idx] = original
        grads[idx] = (plus - minus) / (2 * h)
    return grads


def spearman(a, b) -> float:
    """Spearman rank correlation without scipy.stats (tiny n)."""
    ar = np.argsort(np.argsort(a)).astype(float)
    br = np.argsort(np.argsort(b)).astype(float)
    ar -= ar.mean()
    br -= br.mean()
    denom = math.sqrt(float((ar ** 2).sum() * (br ** 2).sum()))
    return float((ar * br).sum() / denom) if denom else 0.0
