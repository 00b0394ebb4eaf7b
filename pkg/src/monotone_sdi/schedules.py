"""Noise and regularization schedule descriptors.

Both carry closed forms for every integral the bound checks need, so no
quadrature of sampled values enters the theorem verdicts.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np


class StateCoupling:
    """Bounded Lipschitz state-dependent part of the diffusion.

    sigma(t, x) = s(t) * (base + amplitude * sin(<freq, x>)); the coupling
    is bounded by ||amplitude||_F with Lipschitz constant
    kappa0 = ||amplitude||_F * ||freq||.
    """

    def __init__(self, amplitude, freq):
        self.amplitude = np.atleast_2d(np.asarray(amplitude, dtype=float))
        self.freq = np.asarray(freq, dtype=float)
        self.bound = float(np.linalg.norm(self.amplitude))
        self.kappa0 = self.bound * float(np.linalg.norm(self.freq))

    def __call__(self, x):
        """Coupling matrix per state; x is (..., d) -> (..., d, l)."""
        phase = np.sin(np.asarray(x, dtype=float) @ self.freq)
        return phase[..., None, None] * self.amplitude


class NoiseModel:
    """Diffusion sigma(t, x) = s(t) * (base + coupling(x)).

    schedule is one of "power_decay" (s(t) = sigma0 (1+t)^-p), "constant"
    (s(t) = sigma0), or "zero".
    """

    def __init__(self, base, schedule="power_decay", sigma0=0.5, p=1.0,
                 coupling: Optional[StateCoupling] = None):
        self.base = np.atleast_2d(np.asarray(base, dtype=float))
        self.schedule = schedule
        self.sigma0 = float(sigma0)
        self.p = float(p)
        self.coupling = coupling
        if schedule not in ("power_decay", "constant", "zero"):
            raise ValueError(f"unknown schedule {schedule!r}")
        if self.sigma0 < 0:
            raise ValueError("sigma0 must be nonnegative")
        self.base_norm = float(np.linalg.norm(self.base))

    @property
    def dim(self):
        return self.base.shape[0]

    @property
    def wiener_dim(self):
        return self.base.shape[1]

    @property
    def is_zero(self):
        return self.schedule == "zero" or self.sigma0 == 0.0

    def scale(self, t):
        """Scalar factor s(t); accepts arrays."""
        t = np.asarray(t, dtype=float)
        if self.is_zero:
            return np.zeros_like(t)
        if self.schedule == "constant":
            return np.full_like(t, self.sigma0)
        return self.sigma0 * (1.0 + t) ** (-self.p)

    def apply(self, t, x, dB):
        """sigma(t, x) dB for a batch: x (n, d), dB (n, l) -> (n, d)."""
        s = self.scale(t)
        out = dB @ self.base.T
        if self.coupling is not None:
            out = out + np.einsum("nij,nj->ni", self.coupling(x), dB)
        return s * out

    def sup_norm(self, t):
        """sigma_inf(t) = sup_x ||sigma(t, x)|| (Frobenius), closed form."""
        bound = self.base_norm + (self.coupling.bound if self.coupling else 0.0)
        return self.scale(t) * bound

    def lipschitz(self, t):
        """kappa(t) with ||sigma(t,x) - sigma(t,y)|| <= kappa(t) ||x-y||."""
        kappa0 = self.coupling.kappa0 if self.coupling else 0.0
        return self.scale(t) * kappa0

    def sup_sq_integral(self, a, b):
        """Closed-form integral of sigma_inf(t)^2 over [a, b] (b may be inf)."""
        if self.is_zero:
            return 0.0
        bound = self.base_norm + (self.coupling.bound if self.coupling else 0.0)
        c = (self.sigma0 * bound) ** 2
        if self.schedule == "constant":
            return math.inf if math.isinf(b) else c * (b - a)
        twop = 2.0 * self.p
        if abs(twop - 1.0) < 1e-15:
            if math.isinf(b):
                return math.inf
            return c * (math.log1p(b) - math.log1p(a))
        if math.isinf(b):
            if twop < 1.0:
                return math.inf
            return c * (1.0 + a) ** (1.0 - twop) / (twop - 1.0)
        return c * ((1.0 + a) ** (1.0 - twop) - (1.0 + b) ** (1.0 - twop)) \
            / (twop - 1.0)

    @property
    def square_integrable(self):
        return self.is_zero or (self.schedule == "power_decay" and self.p > 0.5)


def zero_noise(dim, wiener_dim=None):
    return NoiseModel(np.eye(dim, wiener_dim or dim), schedule="zero", sigma0=0.0)


class TikhonovSchedule:
    """Vanishing regularization coefficient epsilon(t).

    kind "off" disables the extra drift; kind "power_eps" uses
    epsilon(t) = eps0 (1+t)^-q with 0 < q < 1, which satisfies
    epsilon -> 0, its integral diverges, and |eps'|/eps^2 -> 0.
    """

    def __init__(self, kind="off", eps0=1.0, q=0.5):
        if kind not in ("off", "power_eps"):
            raise ValueError(f"unknown tikhonov kind {kind!r}")
        self.kind = kind
        self.eps0 = float(eps0)
        self.q = float(q)
        if kind == "power_eps":
            if self.eps0 <= 0:
                raise ValueError("eps0 must be positive")
            if not 0.0 < self.q < 1.0:
                raise ValueError("q must lie in (0, 1)")

    @property
    def is_off(self):
        return self.kind == "off"

    def epsilon(self, t):
        t = np.asarray(t, dtype=float)
        if self.is_off:
            return np.zeros_like(t)
        return self.eps0 * (1.0 + t) ** (-self.q)

    def epsilon_prime(self, t):
        t = np.asarray(t, dtype=float)
        if self.is_off:
            return np.zeros_like(t)
        return -self.q * self.eps0 * (1.0 + t) ** (-self.q - 1.0)

    def drift_ratio_tail(self, t):
        """z_t = sup_{s >= t} |eps'(s)| / eps(s)^2, closed form (decreasing)."""
        t = np.asarray(t, dtype=float)
        if self.is_off:
            return np.zeros_like(t)
        return (self.q / self.eps0) * (1.0 + t) ** (self.q - 1.0)

    def epsilon_integral(self, a, b):
        """Integral of epsilon over [a, b]."""
        if self.is_off:
            return 0.0
        q1 = 1.0 - self.q
        return self.eps0 * ((1.0 + b) ** q1 - (1.0 + a) ** q1) / q1
