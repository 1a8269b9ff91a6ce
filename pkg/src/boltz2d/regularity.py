"""Exponent calculus for the smoothing estimate and empirical regularity probes.

The exponents depend on (gamma, nu) only.  Inputs built from a rational
inverse-power index ``s`` are handled with ``fractions.Fraction`` so the
classical examples come out as exact rationals; anything else is float.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence, Union

import numpy as np
from scipy import stats

from .errors import ConfigError, DomainError, NumericError
from .kernel import KernelParams

Number = Union[float, Fraction]

# realistic-family thresholds in s
S_ADMISSIBLE = 7.0
S_Q_GT_1 = 8.0 + math.sqrt(33.0)
S_Q_GT_2 = 13.0 + 2.0 * math.sqrt(31.0)


def _gn(params) -> tuple:
    if isinstance(params, KernelParams):
        return params.exact_gamma_nu()
    g, n = params
    return g, n


def admissibility_margin(params) -> Number:
    """gamma (1 - 2 nu) - nu^2, positive exactly when gamma > nu^2/(1-2nu)."""
    g, n = _gn(params)
    return g * (1 - 2 * n) - n * n


def is_admissible(params) -> bool:
    return admissibility_margin(params) > 0


def _check(params):
    g, n = _gn(params)
    if not admissibility_margin(params) > 0:
        bound = float(n) ** 2 / (1 - 2 * float(n))
        raise ConfigError(f"inadmissible exponents: need gamma > nu^2/(1-2nu) = {bound:.6g}, "
                          f"got gamma = {float(g):.6g}, nu = {float(n):.6g}")
    return g, n


def _frac_sqrt(x: Fraction) -> Optional[Fraction]:
    """Exact square root of a non-negative Fraction, or None if irrational."""
    if x < 0:
        return None
    rn, rd = math.isqrt(x.numerator), math.isqrt(x.denominator)
    if rn * rn == x.numerator and rd * rd == x.denominator:
        return Fraction(rn, rd)
    return None


def exponent_a(params) -> Number:
    """Positive root of nu a^2 + nu (gamma+nu+1) a = gamma(1-2nu) - nu^2."""
    g, n = _check(params)
    B = g + n + 1
    C = g * (1 - 2 * n) - n * n
    disc = B * B + 4 * C / n
    if isinstance(disc, Fraction):
        r = _frac_sqrt(disc)
        if r is not None:
            return (r - B) / 2
        disc, B = float(disc), float(B)
    # stable form of (sqrt(disc) - B)/2 for small C
    return 2.0 * float(C) / float(n) / (math.sqrt(disc) + B)


def p_alpha(alpha, params) -> Number:
    """p(alpha) = ((alpha+gamma)(1-2nu) - nu^2) / ((alpha+gamma+nu-1) nu + 1)."""
    g, n = _check(params)
    if isinstance(alpha, np.ndarray):
        g, n = float(g), float(n)
        if np.any(alpha < 0):
            raise DomainError("alpha must be >= 0")
    elif alpha < 0:
        raise DomainError(f"alpha must be >= 0, got {alpha}")
    if isinstance(alpha, float):
        g, n = float(g), float(n)
    return ((alpha + g) * (1 - 2 * n) - n * n) / ((alpha + g + n - 1) * n + 1)


def exponent_q(params) -> Number:
    """q = a when a <= 2, else p(2)."""
    a = exponent_a(params)
    if a <= 2:
        return a
    exact = isinstance(_gn(params)[1], Fraction)
    return p_alpha(Fraction(2) if exact else 2.0, params)


def q_gt_1_closed_form(params) -> bool:
    """nu < 1/3 and gamma > (2nu + 2nu^2)/(1 - 3nu)."""
    g, n = _gn(params)
    return bool(3 * n < 1 and g > (2 * n + 2 * n * n) / (1 - 3 * n))


def q_gt_2_closed_form(params) -> bool:
    """nu < 1/4 and gamma > (6nu + 3nu^2)/(1 - 4nu)."""
    g, n = _gn(params)
    return bool(4 * n < 1 and g > (6 * n + 3 * n * n) / (1 - 4 * n))


def family_gamma_nu(s) -> tuple:
    """(gamma, nu) of the inverse-power family; exact when s is int or Fraction."""
    if isinstance(s, (int, Fraction)):
        s = Fraction(s)
        return (s - 5) / (s - 1), Fraction(2) / (s - 1)
    s = float(s)
    return (s - 5) / (s - 1), 2 / (s - 1)


def family_predicates(s) -> dict:
    gn = family_gamma_nu(s)
    adm = is_admissible(gn)
    q = exponent_q(gn) if adm else None
    return {"admissible": adm, "q_gt_1": bool(adm and q > 1), "q_gt_2": bool(adm and q > 2)}


def locate_threshold(key: str, lo: float = 5.5, hi: float = 200.0, tol: float = 1e-9) -> float:
    """Bisection on s for the flip of one family predicate (false at lo, true at hi)."""
    f = lambda s: family_predicates(float(s))[key]
    if f(lo) or not f(hi):
        raise DomainError(f"predicate {key} does not flip on [{lo}, {hi}]")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if f(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def bootstrap_schedule(target, params, max_steps: int = 1_000_000) -> dict:
    """Increasing exponents 0 = alpha_0 < ... < alpha_n with alpha_{k+1} < p(alpha_k),
    alpha_k in [0, 2) before the last step and alpha_n >= target.
    """
    g, n = _check(params)
    gf, nf = float(g), float(n)
    pf = lambda x: ((x + gf) * (1 - 2 * nf) - nf * nf) / ((x + gf + nf - 1) * nf + 1)
    a = float(exponent_a(params))
    q = float(exponent_q(params))
    target = float(target)
    if not 0 < target < q:
        raise DomainError(f"target must lie in (0, q) = (0, {q:.12g}), got {target}")
    sched = [0.0]
    if a <= 2:
        qp = 0.5 * (target + q)
        eta = 1.0 - qp / pf(qp)
        branch = "a<=2"
        while sched[-1] < target:
            sched.append((1.0 - eta) * pf(sched[-1]))
            if len(sched) > max_steps:
                raise NumericError("bootstrap schedule did not reach the target")
        x = None
    else:
        eta = 1.0 - 2.0 / pf(2.0)
        branch = "a>2"
        # x with p(x) = target; p is increasing
        lo, hi = 0.0, 2.0
        if pf(lo) >= target:
            x = 0.0 - 1.0   # every alpha >= 0 already has p(alpha) >= target
        else:
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                if pf(mid) < target:
                    lo = mid
                else:
                    hi = mid
            x = hi
        while not sched[-1] > x:
            sched.append((1.0 - eta) * pf(sched[-1]))
            if len(sched) > max_steps:
                raise NumericError("bootstrap schedule did not pass the switching point")
        if sched[-1] < target:
            sched.append(target)
    return {"schedule": sched, "eta": eta, "branch": branch, "target": target, "switch_x": x}


def check_schedule(sched: Sequence[float], target: float, params) -> bool:
    """Mechanical check of the schedule contract."""
    s = list(sched)
    if s[0] != 0.0 or s[-1] < target:
        return False
    for k in range(len(s) - 1):
        if not (0.0 <= s[k] < 2.0):
            return False
        if not s[k + 1] < float(p_alpha(float(s[k]), params)):
            return False
    return True


@dataclass
class RegularityReport:
    gamma: Number
    nu: Number
    a: Number
    q: Number
    admissible: bool
    q_gt_1: bool
    q_gt_2: bool
    sobolev_sup: Number
    target: float
    schedule: list = field(default_factory=list)
    eta: float = float("nan")
    s: Optional[Number] = None

    def as_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("gamma", "nu", "a", "q", "admissible", "q_gt_1", "q_gt_2",
                                            "sobolev_sup", "target", "schedule", "eta", "s")}
        for k in ("gamma", "nu", "a", "q", "sobolev_sup", "s"):
            if isinstance(d[k], Fraction):
                d[k + "_float"] = float(d[k])
        d["thresholds_s"] = {"admissible": S_ADMISSIBLE, "q_gt_1": S_Q_GT_1, "q_gt_2": S_Q_GT_2}
        return d


def regularity_report(params, target: Optional[float] = None, s=None) -> RegularityReport:
    """Full exponent report; ``target`` defaults to 0.9 q."""
    g, n = _check(params)
    a = exponent_a(params)
    q = exponent_q(params)
    tgt = 0.9 * float(q) if target is None else float(target)
    bs = bootstrap_schedule(tgt, params)
    return RegularityReport(g, n, a, q, True, bool(q > 1), bool(q > 2), q - 1, tgt,
                            bs["schedule"], bs["eta"], s)


# -- empirical probes ---------------------------------------------------------------

def _velocities(ens):
    return np.asarray(getattr(ens, "velocities", ens), dtype=float)


def empirical_char_fn(ens, xi_list, chunk: int = 256) -> np.ndarray:
    """(1/N) sum_j exp(i <xi, V_j>) for each row of ``xi_list``."""
    v = _velocities(ens)
    xi = np.atleast_2d(np.asarray(xi_list, dtype=float))
    out = np.empty(xi.shape[0], dtype=complex)
    for s in range(0, xi.shape[0], chunk):
        ph = xi[s:s + chunk] @ v.T
        out[s:s + chunk] = np.cos(ph).mean(axis=1) + 1j * np.sin(ph).mean(axis=1)
    return out


def directions(n_dir: int = 16) -> np.ndarray:
    ang = 2 * np.pi * np.arange(n_dir) / n_dir
    return np.column_stack([np.cos(ang), np.sin(ang)])


def decay_fit(ens, radii=None, n_dir: int = 16, q_pred: Optional[float] = None, n_radii: int = 25) -> dict:
    """Direction-averaged |f^| per radius and the slope of log|f^| against log(1+|xi|).

    Radii default to a log grid on [1, xi_max] with (1+xi_max)^-q_pred = 3/sqrt(N);
    the regression uses only radii where the average exceeds the same floor.
    """
    v = _velocities(ens)
    N = v.shape[0]
    floor = 3.0 / math.sqrt(N)
    if radii is None:
        qq = 1.0 if q_pred is None else max(float(q_pred), 0.25)
        xi_max = max((1.0 / floor) ** (1.0 / qq) - 1.0, 2.0)
        radii = np.logspace(0.0, math.log10(xi_max), n_radii)
    radii = np.asarray(radii, dtype=float)
    e = directions(n_dir)
    mags = np.array([np.abs(empirical_char_fn(v, r * e)).mean() for r in radii])
    m = mags > floor
    slope = float("nan")
    if m.sum() >= 2:
        slope = float(np.polyfit(np.log1p(radii[m]), np.log(mags[m]), 1)[0])
    return {"radii": radii, "mean_abs_fhat": mags, "slope": slope, "noise_floor": floor,
            "n_fit": int(m.sum())}


def ball_mass(ens, v0, eps_list) -> np.ndarray:
    """Fraction of particles in the closed ball of radius eps around v0."""
    v = _velocities(ens)
    d = np.sort(np.linalg.norm(v - np.asarray(v0, dtype=float), axis=1))
    eps = np.asarray(eps_list, dtype=float)
    return np.searchsorted(d, eps, side="right") / d.size


def binomial_ci(count: int, n: int, level: float = 0.99) -> tuple:
    """Clopper-Pearson interval for a binomial proportion."""
    ci = stats.binomtest(int(count), int(n)).proportion_ci(confidence_level=level, method="exact")
    return float(ci.low), float(ci.high)


def ball_mass_fit(ens, v0, eps_list, min_count: int = 30) -> dict:
    """Log-log slope of ball mass against radius over radii holding >= min_count particles."""
    v = _velocities(ens)
    eps = np.asarray(eps_list, dtype=float)
    mass = ball_mass(v, v0, eps)
    m = (mass * v.shape[0] >= min_count) & (mass < 1.0)
    slope = float("nan")
    if m.sum() >= 2:
        slope = float(np.polyfit(np.log(eps[m]), np.log(mass[m]), 1)[0])
    return {"eps": eps, "mass": mass, "slope": slope, "n_fit": int(m.sum())}


def fourier_ball_consistency(ens, alpha: float, centers=None, eps_list=None, n_dir: int = 16,
                             tol: float = 0.25) -> dict:
    """Compare char-fn decay with ball-mass scaling.

    ``K`` is the smallest constant with |f^(xi)| <= K |xi|^-alpha on the fitted
    radii, ``C`` the smallest with mass <= C eps^alpha over centers and radii.
    The implication holds empirically when the char-fn decays at least like
    |xi|^-alpha (within ``tol``) and the ball exponent is >= alpha - tol.
    """
    if not 0 < alpha < 2:
        raise DomainError("alpha must lie in (0, 2)")
    v = _velocities(ens)
    N = v.shape[0]
    df = decay_fit(v, n_dir=n_dir, q_pred=alpha)
    r, mag = df["radii"], df["mean_abs_fhat"]
    K = float(np.max(mag * r ** alpha))
    char_exponent = -df["slope"] if math.isfinite(df["slope"]) else 0.0
    if centers is None:
        centers = v[:: max(N // 8, 1)][:8]
    if eps_list is None:
        spread = float(np.median(np.linalg.norm(v - v.mean(axis=0), axis=1))) or 1.0
        eps_list = spread * np.logspace(-1.5, -0.3, 10)
    eps = np.asarray(eps_list, dtype=float)
    fits = [ball_mass_fit(v, c, eps) for c in centers]
    C = float(max(np.max(f["mass"] / eps ** alpha) for f in fits))
    slopes = [f["slope"] for f in fits if math.isfinite(f["slope"])]
    ball_exponent = float(min(slopes)) if slopes else 0.0
    hypothesis = bool(char_exponent >= alpha - tol)
    conclusion = bool(ball_exponent >= alpha - tol)
    return {"alpha": alpha, "K": K, "C": C, "char_exponent": char_exponent,
            "ball_exponent": ball_exponent, "hypothesis_holds": hypothesis,
            "conclusion_holds": conclusion, "consistent": bool(conclusion or not hypothesis),
            "ball_exponent_ge_char": bool(ball_exponent >= min(char_exponent, 2.0) - tol)}
