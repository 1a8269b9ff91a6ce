"""Power-law angular kernel, angle substitution and collision geometry.

The cross section is fixed to ``b(theta) = |theta|^(-1-nu)`` on
``[-pi/2, pi/2] \\ {0}``, which gives closed forms for the tail function
``G(x) = int_x^{pi/2} b`` and for its inverse ``vartheta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np
from scipy import integrate

from .errors import ConfigError, DomainError, NumericError

HALF_PI = 0.5 * math.pi


@dataclass(frozen=True)
class KernelParams:
    """Exponents of the collision kernel and of the mollifier ceiling.

    ``delta`` and ``eta0`` default to the midpoints of their admissible
    intervals ``(gamma v nu, 1)`` and ``(1/delta, 1/(gamma v nu))``.
    """

    gamma: float
    nu: float
    eta0: Optional[float] = None
    delta: Optional[float] = None
    s: Optional[float] = field(default=None, compare=False)

    def __post_init__(self):
        g, n = float(self.gamma), float(self.nu)
        if not 0.0 < g < 1.0:
            raise ConfigError(f"gamma must lie in (0,1), got {g}")
        if not 0.0 < n < 0.5:
            raise ConfigError(f"nu must lie in (0,1/2), got {n}")
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "nu", n)
        m = max(g, n)
        delta = 0.5 * (m + 1.0) if self.delta is None else float(self.delta)
        if not m < delta < 1.0:
            raise ConfigError(f"delta must lie in (gamma v nu, 1) = ({m}, 1), got {delta}")
        eta0 = 0.5 * (1.0 / delta + 1.0 / m) if self.eta0 is None else float(self.eta0)
        if not 1.0 / delta < eta0 < 1.0 / m:
            raise ConfigError(
                f"eta0 must lie in (1/delta, 1/(gamma v nu)) = ({1.0 / delta}, {1.0 / m}), got {eta0}"
            )
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "eta0", eta0)
        if self.s is not None:
            s = self.s
            if not s > 5:
                raise ConfigError(f"inverse-power index s must exceed 5, got {s}")
            if not (math.isclose(g, (s - 5) / (s - 1), rel_tol=0, abs_tol=1e-15)
                    and math.isclose(n, 2 / (s - 1), rel_tol=0, abs_tol=1e-15)):
                raise ConfigError("gamma, nu do not match the inverse-power index s")

    @classmethod
    def from_s(cls, s, eta0=None, delta=None) -> "KernelParams":
        """Realistic family: repulsive force ``1/r^s`` gives gamma=(s-5)/(s-1), nu=2/(s-1)."""
        if not s > 5:
            raise ConfigError(f"inverse-power index s must exceed 5, got {s}")
        sf = float(s)
        return cls((sf - 5) / (sf - 1), 2 / (sf - 1), eta0=eta0, delta=delta, s=s)

    def exact_gamma_nu(self):
        """(gamma, nu) as Fractions when built from a rational s, else floats."""
        if self.s is not None:
            s = Fraction(self.s) if not isinstance(self.s, Fraction) else self.s
            return (s - 5) / (s - 1), Fraction(2) / (s - 1)
        return self.gamma, self.nu

    def as_dict(self) -> dict:
        return {"gamma": self.gamma, "nu": self.nu, "eta0": self.eta0,
                "delta": self.delta, "s": None if self.s is None else float(self.s)}


@dataclass(frozen=True)
class DeviationMatrix:
    theta: float
    matrix: np.ndarray


def eval_b(theta, params: KernelParams):
    """Angular kernel ``|theta|^(-1-nu)``; even, singular at 0."""
    th = np.asarray(theta, dtype=float)
    if np.any(th == 0.0):
        raise DomainError("b(theta) is not defined at theta = 0")
    if np.any(np.abs(th) > HALF_PI * (1 + 1e-15)):
        raise DomainError("theta must lie in [-pi/2, pi/2]")
    out = np.abs(th) ** (-1.0 - params.nu)
    return float(out) if out.ndim == 0 else out


def eval_G(x, params: KernelParams):
    """Tail integral ``G(x) = int_x^{pi/2} b = (x^-nu - (pi/2)^-nu)/nu`` on (0, pi/2]."""
    xa = np.asarray(x, dtype=float)
    if np.any(xa <= 0.0) or np.any(xa > HALF_PI):
        raise DomainError("G is defined on (0, pi/2]")
    nu = params.nu
    out = (xa ** (-nu) - HALF_PI ** (-nu)) / nu
    out = np.where(xa == HALF_PI, 0.0, out)
    return float(out) if out.ndim == 0 else out


def eval_vartheta(z, params: KernelParams):
    """Inverse of G extended oddly to the real line, with vartheta(0) = pi/2."""
    za = np.asarray(z, dtype=float)
    nu = params.nu
    mag = (nu * np.abs(za) + HALF_PI ** (-nu)) ** (-1.0 / nu)
    out = np.where(za < 0.0, -mag, np.where(za == 0.0, HALF_PI, mag))
    return float(out) if out.ndim == 0 else out


def eval_vartheta_deriv(z, order: int, params: KernelParams):
    """First or second derivative of vartheta for z > 0."""
    if order not in (1, 2):
        raise DomainError(f"only derivative orders 1 and 2 are supported, got {order}")
    za = np.asarray(z, dtype=float)
    if np.any(za <= 0.0):
        raise DomainError("vartheta derivatives are evaluated on z > 0")
    nu = params.nu
    base = nu * za + HALF_PI ** (-nu)
    if order == 1:
        out = -base ** (-1.0 / nu - 1.0)
    else:
        out = (1.0 + nu) * base ** (-1.0 / nu - 2.0)
    return float(out) if out.ndim == 0 else out


def vartheta_prime_signed(z, params: KernelParams):
    """vartheta'(z) on the whole real line (even in z, negative everywhere)."""
    za = np.abs(np.asarray(z, dtype=float))
    nu = params.nu
    out = -(nu * za + HALF_PI ** (-nu)) ** (-1.0 / nu - 1.0)
    return float(out) if out.ndim == 0 else out


def deviation_matrix(theta: float) -> DeviationMatrix:
    """``A(theta) = (R_theta - I)/2``; the jump is ``v' - v = A(theta)(v - v*)``."""
    if abs(theta) > HALF_PI * (1 + 1e-15):
        raise DomainError("theta must lie in [-pi/2, pi/2]")
    c, s = math.cos(theta), math.sin(theta)
    return DeviationMatrix(theta, 0.5 * np.array([[c - 1.0, -s], [s, c - 1.0]]))


def deviation_matrix_deriv(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return 0.5 * np.array([[-s, -c], [c, -s]])


def post_collision(v, vstar, theta):
    """Velocities after a binary collision with deviation angle theta."""
    v = np.asarray(v, dtype=float)
    vstar = np.asarray(vstar, dtype=float)
    jump = deviation_matrix(theta).matrix @ (v - vstar)
    return v + jump, vstar - jump


# -- drift of exp(|V|^kappa) -------------------------------------------------

def _log_ratio_increment(V, W, theta, kappa):
    """|V + A(theta)W|^kappa - |V|^kappa without cancellation for small theta."""
    c, s = math.cos(theta), math.sin(theta)
    aw0 = 0.5 * ((c - 1.0) * W[0] - s * W[1])
    aw1 = 0.5 * (s * W[0] + (c - 1.0) * W[1])
    nV2 = V[0] * V[0] + V[1] * V[1]
    if nV2 == 0.0:
        return (aw0 * aw0 + aw1 * aw1) ** (0.5 * kappa)
    d = 2.0 * (V[0] * aw0 + V[1] * aw1) + aw0 * aw0 + aw1 * aw1
    return nV2 ** (0.5 * kappa) * math.expm1(0.5 * kappa * math.log1p(d / nV2))


def drift_integral(V, v, kappa: float, params: KernelParams, h: float = 1e-2,
                   tol: float = 1e-9) -> float:
    """``int (exp|V + A(theta)(V-v)|^kappa - exp|V|^kappa) b(theta) dtheta``.

    The integrand is paired over +-theta, which cancels the O(theta) part;
    the inner piece [0, h] is integrated against the algebraic weight
    ``theta^(1-nu)`` and the outer piece [h, pi/2] directly.
    """
    nu = params.nu
    if not nu < kappa < 1.0:
        raise DomainError(f"kappa must lie in (nu, 1) = ({nu}, 1), got {kappa}")
    V = np.asarray(V, dtype=float)
    W = V - np.asarray(v, dtype=float)
    scale = math.exp(float(np.linalg.norm(V)) ** kappa)

    def paired(theta):
        return scale * (math.expm1(_log_ratio_increment(V, W, theta, kappa))
                        + math.expm1(_log_ratio_increment(V, W, -theta, kappa)))

    def inner(theta):
        theta = max(theta, 1e-8)
        return paired(theta) / (theta * theta)

    with np.errstate(all="ignore"):
        res_in = integrate.quad(inner, 0.0, h, weight="alg", wvar=(1.0 - nu, 0.0),
                                epsabs=tol, epsrel=1e-12, limit=200, full_output=1)
        res_out = integrate.quad(lambda th: paired(th) * th ** (-1.0 - nu), h, HALF_PI,
                                 epsabs=tol, epsrel=1e-12, limit=200, full_output=1)
    (r_in, e_in), (r_out, e_out) = res_in[:2], res_out[:2]
    flagged = len(res_in) > 3 or len(res_out) > 3
    bad = flagged and e_in + e_out > max(10 * tol, 1e-10 * (abs(r_in) + abs(r_out)))
    if bad:
        raise NumericError(f"drift quadrature did not converge: achieved error {e_in + e_out:.3e}")
    return r_in + r_out


# -- envelope diagnostics ------------------------------------------------------

def vartheta_envelope(params: KernelParams, z_grid=None, order: int = 0) -> dict:
    """Fitted constants c, C with c (1+z)^p <= |vartheta^(order)(z)| <= C (1+z)^p,
    ``p = -1/nu - order``."""
    if z_grid is None:
        z_grid = np.logspace(-3, 6, 400)
    z = np.asarray(z_grid, dtype=float)
    if order == 0:
        vals = eval_vartheta(z, params)
    else:
        vals = eval_vartheta_deriv(z, order, params)
    p = -1.0 / params.nu - order
    ratio = np.abs(vals) / (1.0 + z) ** p
    c, C = float(ratio.min()), float(ratio.max())
    return {"order": order, "exponent": p, "c": c, "C": C, "ratio": C / c}
