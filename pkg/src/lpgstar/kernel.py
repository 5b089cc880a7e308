"""Kernels s_t(x, y) with size/Hoelder certification and truncation in t.

Distances are l-infinity throughout. A kernel with ``standard_scale`` set is
``scale * t^alpha / (t + |x - y|)^(m + alpha)`` and is evaluated by the
compiled core; any other evaluator goes through a plain numpy path.
"""
from dataclasses import dataclass, replace

import numpy as np


class InvalidKernel(ValueError):
    """A kernel returned a non-finite value."""


@dataclass(frozen=True)
class KernelParams:
    m: float
    alpha: float
    lam: float
    size_constant: float = None
    holder_constant: float = None

    def __post_init__(self):
        if not self.m > 0:
            raise ValueError("m must be positive")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not self.lam > 2:
            raise ValueError("lambda must exceed 2")
        if self.alpha > self.m * (self.lam - 2) / 2:
            raise ValueError("need alpha <= m (lambda - 2) / 2")


def _linf(x, y):
    return np.max(np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float)), axis=-1)


@dataclass(frozen=True)
class Kernel:
    """``evaluator(t, x, y)`` broadcasts over leading axes of x, y (last axis = coordinates)."""

    evaluator: object
    params: KernelParams
    truncation: tuple = None
    standard_scale: float = None
    name: str = "custom"

    def in_window(self, t):
        t = np.asarray(t, dtype=float)
        if self.truncation is None:
            return np.ones(t.shape, dtype=bool)
        lo, hi = self.truncation
        return (t >= lo) & (t <= hi)

    def __call__(self, t, x, y):
        val = self.evaluator(t, np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        return np.where(self.in_window(t), val, 0.0)

    def of_distance(self, t, d):
        """Evaluate a standard kernel directly on distances."""
        if self.standard_scale is None:
            raise TypeError("only standard kernels can be evaluated on distances")
        p = self.params
        val = self.standard_scale * t**p.alpha / (t + d) ** (p.m + p.alpha)
        return np.where(self.in_window(t), val, 0.0)


def standard_kernel(params, scale=1.0):
    """s_t(x, y) = scale * t^alpha / (t + |x - y|)^(m + alpha)."""
    m, a = params.m, params.alpha

    def evaluator(t, x, y):
        return scale * t**a / (t + _linf(x, y)) ** (m + a)

    return Kernel(evaluator, params, None, float(scale), "standard" if scale != 0 else "zero")


def zero_kernel(params):
    return standard_kernel(params, scale=0.0)


def scaled(kernel, c):
    """The kernel c * s_t; stays on the fast path when the kernel is standard."""
    if kernel.standard_scale is not None and np.isrealobj(c):
        out = standard_kernel(kernel.params, kernel.standard_scale * c)
        return replace(out, truncation=kernel.truncation)
    ev = kernel.evaluator
    return replace(kernel, evaluator=lambda t, x, y: c * ev(t, x, y), standard_scale=None, name="custom")


def truncate(kernel, i):
    """s_t 1_[1/i, i](t); truncating twice with the same i changes nothing."""
    if not i > 1:
        raise ValueError("truncation parameter must exceed 1")
    lo, hi = 1.0 / i, float(i)
    if kernel.truncation is not None:
        lo, hi = max(lo, kernel.truncation[0]), min(hi, kernel.truncation[1])
    return replace(kernel, truncation=(lo, hi))


def _sample_tx(rng, budget, n, t_range):
    lo, hi = np.log(t_range[0]), np.log(t_range[1])
    t = np.exp(rng.uniform(lo, hi, budget))
    d = t * 10.0 ** rng.uniform(-3, 3, budget)
    direction = rng.uniform(-1, 1, (budget, n))
    direction /= np.max(np.abs(direction), axis=1, keepdims=True)
    x = rng.uniform(-1, 1, (budget, n))
    y = x + d[:, None] * direction
    return t, x, y


def certify_size(kernel, sample_budget=10_000, seed=0, n=1, t_range=(1e-3, 1e3)):
    """Sampled max of |s_t(x,y)| (t + |x-y|)^(m+alpha) / t^alpha."""
    if sample_budget < 1:
        raise ValueError("sample budget must be positive")
    p = kernel.params
    rng = np.random.default_rng(seed)
    t, x, y = _sample_tx(rng, sample_budget, n, t_range)
    s = np.abs(kernel(t, x, y))
    if not np.all(np.isfinite(s)):
        raise InvalidKernel("kernel produced a non-finite value")
    ratio = s * (t + _linf(x, y)) ** (p.m + p.alpha) / t**p.alpha
    return float(ratio.max())


def certify_holder(kernel, sample_budget=10_000, seed=0, n=1, t_range=(1e-3, 1e3)):
    """Sampled max of |s_t(x,y) - s_t(x,y')| (t + |x-y|)^(m+alpha) / |y-y'|^alpha, |y-y'| < t/2."""
    if sample_budget < 1:
        raise ValueError("sample budget must be positive")
    p = kernel.params
    rng = np.random.default_rng(seed)
    t, x, y = _sample_tx(rng, sample_budget, n, t_range)
    step = rng.uniform(-1, 1, (sample_budget, n))
    step /= np.max(np.abs(step), axis=1, keepdims=True)
    h = (t / 2) * rng.uniform(0, 1, sample_budget)
    y2 = y + h[:, None] * step
    diff = np.abs(kernel(t, x, y) - kernel(t, x, y2))
    if not np.all(np.isfinite(diff)):
        raise InvalidKernel("kernel produced a non-finite value")
    hy = _linf(y, y2)
    keep = hy > 0
    ratio = np.zeros_like(diff)
    ratio[keep] = diff[keep] * (t[keep] + _linf(x[keep], y[keep])) ** (p.m + p.alpha) / hy[keep] ** p.alpha
    return float(ratio.max())


def certified(kernel, sample_budget=10_000, seed=0, n=1):
    """Copy of the kernel with both certified constants stored in its params."""
    params = replace(kernel.params,
                     size_constant=certify_size(kernel, sample_budget, seed, n),
                     holder_constant=certify_holder(kernel, sample_budget, seed, n))
    return replace(kernel, params=params)


def kernel_from_args(name, m, alpha, lam, truncate_at=None, scale=1.0):
    params = KernelParams(m=m, alpha=alpha, lam=lam)
    if name == "standard":
        k = standard_kernel(params, scale)
    elif name == "zero":
        k = zero_kernel(params)
    else:
        raise ValueError(f"unknown kernel {name!r}")
    return truncate(k, truncate_at) if truncate_at else k
