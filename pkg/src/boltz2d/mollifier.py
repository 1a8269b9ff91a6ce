"""Smooth cutoffs: the rate mollifier phi_eps, the angular indicators I_zeta
and U_zeta, and the localization pair (Phi_eps, Psi).

``phi_eps`` is the convolution of ``y -> (y v 2eps) ^ Gamma_eps`` with the
rescaled bump ``chi(./eps)/eps``.  Writing the clamp as
``2eps + (y - 2eps)_+ - (y - Gamma)_+`` reduces it to two copies of the
primitive ``Phi1(u) = int (u - s)_+ chi(s) ds``, which we evaluate with a
fixed 64-point Gauss-Legendre rule on ``[-1, u]``.  The rule is built once
at import; it does not depend on eps because everything is expressed in the
rescaled variable ``u``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from .errors import ConfigError, DomainError
from .kernel import KernelParams, eval_G

GL_ORDER = 64
_GL_X, _GL_W = np.polynomial.legendre.leggauss(GL_ORDER)


def _bump_raw(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 1.0
    xi = x[inside]
    out[inside] = np.exp(-1.0 / (1.0 - xi * xi))
    return out


# normalized with the half-interval rule used below, so that F(0) = 1/2 and
# F is continuous across the reflection at u = 0
_CHI_NORM = 1.0 / float(np.dot(_GL_W, _bump_raw(0.5 * (_GL_X - 1.0))))


def chi(x):
    """Even C-infinity bump with unit mass, supported in (-1, 1)."""
    out = _CHI_NORM * _bump_raw(x)
    return float(out) if out.ndim == 0 else out


def _left_integrals(u):
    """(F(u), Phi1(u)) for u in [-1, 0] by Gauss-Legendre on [-1, u]."""
    u = np.asarray(u, dtype=float)[..., None]
    half = 0.5 * (u + 1.0)
    s = half * _GL_X + (0.5 * (u - 1.0))
    w = half * _GL_W
    c = chi(s)
    return (w * c).sum(axis=-1), (w * (u - s) * c).sum(axis=-1)


def bump_cdf(u):
    """F(u) = int_{-1}^u chi."""
    u = np.asarray(u, dtype=float)
    a = -np.abs(np.clip(u, -1.0, 1.0))
    F, _ = _left_integrals(a)
    out = np.where(u > 0.0, 1.0 - F, F)
    out = np.where(u <= -1.0, 0.0, np.where(u >= 1.0, 1.0, out))
    return float(out) if out.ndim == 0 else out


def bump_primitive(u):
    """Phi1(u) = int (u - s)_+ chi(s) ds; equals 0 for u <= -1 and u for u >= 1.

    Uses Phi1(u) = u + Phi1(-u) on u > 0 so the quadrature never subtracts.
    """
    u = np.asarray(u, dtype=float)
    a = -np.abs(np.clip(u, -1.0, 1.0))
    _, P = _left_integrals(a)
    out = np.where(u > 0.0, u + P, P)
    out = np.where(u <= -1.0, 0.0, np.where(u >= 1.0, u, out))
    return float(out) if out.ndim == 0 else out


def epsilon_max(eta0: float) -> float:
    """Supremum of admissible eps: 3eps < 1 and (log 1/eps)^eta0 > 2."""
    if eta0 <= 0:
        raise ConfigError(f"eta0 must be positive, got {eta0}")
    return min(1.0 / 3.0, math.exp(-(2.0 ** (1.0 / eta0))))


@dataclass(frozen=True)
class MollifierParams:
    epsilon: float
    eta0: float

    def __post_init__(self):
        eps, eta0 = float(self.epsilon), float(self.eta0)
        object.__setattr__(self, "epsilon", eps)
        object.__setattr__(self, "eta0", eta0)
        if eta0 <= 0:
            raise ConfigError(f"eta0 must be positive, got {eta0}")
        if not 0.0 < eps < 1.0:
            raise ConfigError(f"epsilon must lie in (0,1), got {eps}")
        g = self.gamma_eps
        if not (3.0 * eps < 1.0 < g - 1.0):
            raise ConfigError(
                f"epsilon={eps} violates 3*eps < 1 < Gamma_eps - 1 (Gamma_eps={g:.6g}); "
                f"need epsilon < {epsilon_max(eta0):.6g} for eta0={eta0}")

    @property
    def gamma_eps(self) -> float:
        return math.log(1.0 / self.epsilon) ** self.eta0

    @classmethod
    def from_kernel(cls, epsilon: float, kp: KernelParams) -> "MollifierParams":
        return cls(epsilon, kp.eta0)

    def as_dict(self) -> dict:
        return {"epsilon": self.epsilon, "eta0": self.eta0, "gamma_eps": self.gamma_eps}


def _check_nonneg(x):
    x = np.asarray(x, dtype=float)
    if np.any(x < 0.0) or np.any(np.isnan(x)):
        raise DomainError("phi_eps is defined on x >= 0")
    return x


def phi_eps(x, mp: MollifierParams):
    """Mollified clamp of x to [2eps, Gamma_eps]; smooth, non-decreasing, 1-Lipschitz."""
    x = _check_nonneg(x)
    eps, g = mp.epsilon, mp.gamma_eps
    u1 = (x - 2.0 * eps) / eps
    u2 = (x - g) / eps
    out = 2.0 * eps + eps * (bump_primitive(u1) - bump_primitive(u2))
    # exact plateaus and identity band
    out = np.where(u1 <= -1.0, 2.0 * eps, out)
    out = np.where((u1 >= 1.0) & (u2 <= -1.0), x, out)
    out = np.where(u2 >= 1.0, g, out)
    return float(out) if out.ndim == 0 else out


def phi_eps_deriv(x, mp: MollifierParams, order: int = 1):
    """First or second derivative of phi_eps."""
    x = _check_nonneg(x)
    eps, g = mp.epsilon, mp.gamma_eps
    u1 = (x - 2.0 * eps) / eps
    u2 = (x - g) / eps
    if order == 1:
        out = bump_cdf(u1) - bump_cdf(u2)
    elif order == 2:
        out = (chi(u1) - chi(u2)) / eps
    else:
        raise DomainError(f"only derivative orders 1 and 2 are supported, got {order}")
    out = np.asarray(out, dtype=float)
    return float(out) if out.ndim == 0 else out


def phi_gamma(x, mp: MollifierParams, gamma: float, order: int = 0):
    """phi_eps(x)^gamma and its first two x-derivatives."""
    p = np.asarray(phi_eps(x, mp))
    if order == 0:
        out = p ** gamma
    elif order == 1:
        out = gamma * p ** (gamma - 1.0) * phi_eps_deriv(x, mp, 1)
    elif order == 2:
        d1 = phi_eps_deriv(x, mp, 1)
        d2 = phi_eps_deriv(x, mp, 2)
        out = gamma * (gamma - 1.0) * p ** (gamma - 2.0) * d1 * d1 + gamma * p ** (gamma - 1.0) * d2
    else:
        raise DomainError(f"order must be 0, 1 or 2, got {order}")
    return float(out) if out.ndim == 0 else out


# -- smoothstep cutoffs ------------------------------------------------------

def smoothstep(t):
    """Quintic 6t^5 - 15t^4 + 10t^3 clipped to [0,1]; C^2 with S(1/2) = 1/2."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    out = t * t * t * (t * (6.0 * t - 15.0) + 10.0)
    return float(out) if out.ndim == 0 else out


def smoothstep_deriv(t):
    t = np.asarray(t, dtype=float)
    tc = np.clip(t, 0.0, 1.0)
    out = 30.0 * tc * tc * (tc - 1.0) ** 2
    return float(out) if out.ndim == 0 else out


def smooth_indicator_Izeta(z, zeta: float, params: KernelParams):
    """1 on |z| <= G(zeta), 0 on |z| >= G(zeta)+1, quintic in between."""
    if not 0.0 < zeta < 1.0:
        raise DomainError(f"zeta must lie in (0,1), got {zeta}")
    Gz = eval_G(zeta, params)
    out = 1.0 - smoothstep(np.abs(np.asarray(z, dtype=float)) - Gz)
    out = np.asarray(out)
    return float(out) if out.ndim == 0 else out


def smooth_indicator_Uzeta(z, zeta: float, params: KernelParams):
    """0 on |z| <= 1/2, 1 on [1, G-1], 0 on |z| >= G-1/2 with G = G(zeta)."""
    if not 0.0 < zeta < 1.0:
        raise DomainError(f"zeta must lie in (0,1), got {zeta}")
    Gz = eval_G(zeta, params)
    if Gz <= 2.0:
        raise ConfigError(f"U_zeta degenerates: need G(zeta) > 2, got G({zeta}) = {Gz:.6g}")
    a = np.abs(np.asarray(z, dtype=float))
    out = smoothstep(2.0 * (a - 0.5)) * (1.0 - smoothstep(2.0 * (a - (Gz - 1.0))))
    out = np.asarray(out)
    return float(out) if out.ndim == 0 else out


def Phi_eps(x, mp: MollifierParams):
    """0 for x <= Gamma_eps - 1, 1 for x >= Gamma_eps."""
    out = smoothstep(np.asarray(x, dtype=float) - (mp.gamma_eps - 1.0))
    out = np.asarray(out)
    return float(out) if out.ndim == 0 else out


def Psi(x):
    """1 for x <= 1/4, 0 for x >= 3/4."""
    out = 1.0 - smoothstep((np.asarray(x, dtype=float) - 0.25) / 0.5)
    out = np.asarray(out)
    return float(out) if out.ndim == 0 else out


def localization_pair(x, mp: MollifierParams):
    """Return (Phi_eps(x), Psi)."""
    return Phi_eps(x, mp), Psi


# -- diagnostics -------------------------------------------------------------

def holder_ratio(beta: float, mp: MollifierParams, gamma: float, n_pairs: int = 20000,
                 seed: int = 0) -> float:
    """Sup of x^beta |phi^g(x) - phi^g(y)| / (Gamma^g |x-y|^beta) over sampled pairs.

    Pairs mix a uniform design on [0, Gamma+2]^2 with close pairs at
    log-spaced separations, so both the global and the local regimes count.
    """
    if not 0.0 < beta <= 1.0:
        raise DomainError(f"beta must lie in (0,1], got {beta}")
    rng = np.random.default_rng(seed)
    top = mp.gamma_eps + 2.0
    x1 = rng.uniform(0.0, top, n_pairs)
    y1 = rng.uniform(0.0, top, n_pairs)
    x2 = rng.uniform(0.0, top, n_pairs)
    y2 = np.abs(x2 + rng.choice([-1.0, 1.0], n_pairs) * 10.0 ** rng.uniform(-8, 0, n_pairs))
    x = np.concatenate([x1, x2])
    y = np.concatenate([y1, y2])
    keep = x != y
    x, y = x[keep], y[keep]
    num = x ** beta * np.abs(phi_gamma(x, mp, gamma) - phi_gamma(y, mp, gamma))
    den = mp.gamma_eps ** gamma * np.abs(x - y) ** beta
    return float(np.max(num / den))


def derivative_envelope(order: int, mp: MollifierParams, gamma: float, n: int = 4000) -> dict:
    """Compare |d^l/dx^l phi^gamma| to its support-aware envelope.

    Envelope: x^(gamma-l) on (eps, Gamma-1] and Gamma^(gamma-1) on the band
    (Gamma-1, Gamma+1); zero elsewhere.  The two regions are reported
    separately: with a bump of width eps at the ceiling, the second
    derivative in the band grows like 1/eps.
    """
    eps, g = mp.epsilon, mp.gamma_eps
    x = np.unique(np.concatenate([np.geomspace(eps * 1e-3, g + 3.0, n),
                                  np.linspace(0.0, g + 3.0, n),
                                  np.linspace(g - 1.0, g + 1.0, n)]))
    d = np.abs(phi_gamma(x, mp, gamma, order))
    inner = (x > eps) & (x <= g - 1.0)
    band = (x > g - 1.0) & (x < g + 1.0)
    off = ~(inner | band)
    return {"order": order,
            "sup_ratio_inner": float(np.max(d[inner] / x[inner] ** (gamma - order))),
            "sup_ratio_band": float(np.max(d[band] / g ** (gamma - 1.0))),
            "sup_off_support": float(np.max(d[off], initial=0.0))}
