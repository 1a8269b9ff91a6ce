"""First-order Malliavin objects along a tagged particle's jump chain.

For a chain of events ``(T_k, V_{T_k-}, partner_k, Z_k, accepted_k)`` the
state obeys ``V_{T_k} = V_{T_{k-1}} + A(theta_k) (V_{T_{k-1}} - partner_k) I_zeta(Z_k)``
on accepted events (``theta_k = vartheta(Z_k)``).  Differentiating in
``Z_k`` gives the tangent flow ``Y``, the jump vectors ``H_k`` and the
covariance ``sigma = Y S Y^T``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, optimize

from .errors import ConfigError, DomainError
from .kernel import KernelParams, eval_G, eval_vartheta, vartheta_prime_signed
from .mollifier import (MollifierParams, Phi_eps, Psi, chi, phi_gamma, smooth_indicator_Izeta,
                        smooth_indicator_Uzeta)
from .rng import ROLE_BOOTSTRAP, stream

EYE = np.eye(2)


def _A(theta):
    c, s = math.cos(theta), math.sin(theta)
    return 0.5 * np.array([[c - 1.0, -s], [s, c - 1.0]])


def _dA(theta):
    c, s = math.cos(theta), math.sin(theta)
    return 0.5 * np.array([[-s, -c], [c, -s]])


@dataclass
class JumpChain:
    v0: np.ndarray
    T: np.ndarray
    V_prev: np.ndarray
    partner: np.ndarray
    Z: np.ndarray
    accepted: np.ndarray
    horizon: float = math.inf

    def __post_init__(self):
        self.v0 = np.asarray(self.v0, dtype=float).reshape(2)
        self.T = np.asarray(self.T, dtype=float).reshape(-1)
        n = self.T.size
        self.V_prev = np.asarray(self.V_prev, dtype=float).reshape(n, 2)
        self.partner = np.asarray(self.partner, dtype=float).reshape(n, 2)
        self.Z = np.asarray(self.Z, dtype=float).reshape(n)
        self.accepted = np.asarray(self.accepted, dtype=bool).reshape(n)

    def __len__(self):
        return self.T.size

    @classmethod
    def empty(cls, v0, horizon=math.inf) -> "JumpChain":
        z = np.zeros(0)
        return cls(v0, z, np.zeros((0, 2)), np.zeros((0, 2)), z, np.zeros(0, bool), horizon)

    @classmethod
    def from_record(cls, v0, rec: dict, horizon=math.inf) -> "JumpChain":
        return cls(v0, rec["t"], rec["prev"], rec["partner"], rec["z"], rec["accepted"], horizon)

    def validate(self, zeta: float, params: KernelParams, tol: float = 1e-12) -> None:
        """Times strictly increasing and V_prev[k+1] equal to the post-state of event k."""
        if self.T.size and np.any(np.diff(self.T) <= 0):
            raise DomainError("chain event times must be strictly increasing")
        states = replay_chain(self, zeta, params, np.inf, start_from_records=False)
        pre = np.vstack([self.v0[None], states[:-1]]) if self.T.size else np.zeros((0, 2))
        if self.T.size:
            scale = 1.0 + np.abs(pre)
            if np.any(np.abs(pre - self.V_prev) > tol * scale):
                k = int(np.argmax(np.max(np.abs(pre - self.V_prev) / scale, axis=1)))
                raise DomainError(f"inconsistent chain: pre-state of event {k} does not match")


def _jump(v, partner, z, accepted, zeta, params):
    if not accepted:
        return v
    ind = smooth_indicator_Izeta(z, zeta, params)
    th = eval_vartheta(z, params)
    return v + ind * (_A(th) @ (v - partner))


def replay_chain(chain: JumpChain, zeta: float, params: KernelParams, t: float,
                 z_override: Optional[dict] = None, start_from_records: bool = False) -> np.ndarray:
    """Post-event states for events with T_k <= t, re-running the recursion from v0.

    Partners and acceptance marks are held fixed; ``z_override`` maps event
    indices to replacement Z values.
    """
    v = chain.v0.copy()
    out = []
    for k in range(len(chain)):
        if chain.T[k] > t:
            break
        z = chain.Z[k] if not z_override or k not in z_override else z_override[k]
        base = chain.V_prev[k] if start_from_records else v
        v = _jump(base, chain.partner[k], z, bool(chain.accepted[k]), zeta, params)
        out.append(v.copy())
    return np.array(out).reshape(-1, 2)


def state_at(chain: JumpChain, zeta: float, params: KernelParams, t: float, z_override=None) -> np.ndarray:
    states = replay_chain(chain, zeta, params, t, z_override)
    return states[-1] if len(states) else chain.v0.copy()


@dataclass
class TangentState:
    t: float
    Y: np.ndarray
    Y_inv: np.ndarray
    S: np.ndarray
    sigma: np.ndarray
    n_events: int = 0
    max_opnorm_Y: float = 1.0
    max_opnorm_Yinv: float = 1.0
    derivatives: list = field(default_factory=list)   # (k, pi_k, Y_{T_k}^{-1} H_k)

    def summary(self) -> dict:
        return {"t": self.t, "detYt": float(np.linalg.det(self.Y)),
                "opnormYinv": float(np.linalg.norm(self.Y_inv, 2)),
                "trace_sigma": float(np.trace(self.sigma)), "n_events": self.n_events}


def tangent_flow(chain: JumpChain, t: float, zeta: float, params: KernelParams,
                 keep_derivatives: bool = False) -> TangentState:
    """Y_t, Y_t^{-1}, S_t and sigma_t = Y_t S_t Y_t^T along the chain up to time t."""
    if t > chain.horizon:
        raise DomainError(f"t = {t} exceeds the chain horizon {chain.horizon}")
    Y = EYE.copy()
    Yi = EYE.copy()
    S = np.zeros((2, 2))
    v = chain.v0.copy()
    max_y, max_yi = 1.0, 1.0
    derivs = []
    n = 0
    for k in range(len(chain)):
        if chain.T[k] > t:
            break
        n += 1
        if not chain.accepted[k]:
            continue
        z = float(chain.Z[k])
        th = eval_vartheta(z, params)
        ind = smooth_indicator_Izeta(z, zeta, params)
        A = _A(th)
        w = v - chain.partner[k]
        M = EYE + ind * A
        Y = M @ Y
        # inverse of [[a, -b], [b, a]] is [[a, b], [-b, a]] / (a^2 + b^2)
        a, b = M[0, 0], M[1, 0]
        Minv = np.array([[a, b], [-b, a]]) / (a * a + b * b)
        Yi = Yi @ Minv
        pi = smooth_indicator_Uzeta(z, zeta, params)
        if pi > 0.0:
            H = vartheta_prime_signed(z, params) * (_dA(th) @ w)
            g = Yi @ H
            S += pi * pi * np.outer(g, g)
            if keep_derivatives:
                derivs.append((k, pi, g))
        v = v + ind * (A @ w)
        max_y = max(max_y, float(np.linalg.norm(Y, 2)))
        max_yi = max(max_yi, float(np.linalg.norm(Yi, 2)))
    S = 0.5 * (S + S.T)
    sigma = Y @ S @ Y.T
    sigma = 0.5 * (sigma + sigma.T)
    return TangentState(t, Y, Yi, S, sigma, n, max_y, max_yi, derivs)


def u_zeta(t: float, zeta: float, params: KernelParams) -> float:
    return t * zeta ** (4.0 + params.nu)


def regularized_det(state_or_sigma, t: float, zeta: float, params: KernelParams) -> float:
    """det(u I + sigma) with u = t zeta^(4+nu)."""
    if not t > 0:
        raise DomainError(f"t must be positive, got {t}")
    sigma = state_or_sigma.sigma if isinstance(state_or_sigma, TangentState) else np.asarray(state_or_sigma)
    u = u_zeta(t, zeta, params)
    # eigenvalue form keeps the product exact for tiny u
    lam = np.linalg.eigvalsh(0.5 * (sigma + sigma.T))
    lam = np.maximum(lam, 0.0)
    return float((u + lam[0]) * (u + lam[1]))


def inverse_det_moment(states: Sequence[TangentState], p: float, t: float, zeta: float,
                       params: KernelParams, n_boot: int = 1000, seed: int = 0, level: float = 0.95) -> dict:
    """Monte Carlo mean of det(u I + sigma)^-p with a percentile bootstrap interval."""
    if not states:
        raise DomainError("inverse_det_moment needs at least one replica")
    if p < 1:
        raise DomainError(f"p must be >= 1, got {p}")
    d = np.array([regularized_det(s, t, zeta, params) for s in states])
    # work in logs: det^-p can be as large as u^-2p
    logs = -p * np.log(d)
    shift = logs.max()
    w = np.exp(logs - shift)
    mean = float(np.exp(shift) * w.mean())
    rng = stream(seed, 0, ROLE_BOOTSTRAP)
    n = w.size
    boots = np.array([w[rng.integers(0, n, n)].mean() for _ in range(n_boot)]) * math.exp(shift)
    lo, hi = np.quantile(boots, [(1 - level) / 2, (1 + level) / 2])
    return {"mean": mean, "ci_low": float(lo), "ci_high": float(hi),
            "rel_se": float(boots.std(ddof=1) / mean) if mean > 0 else float("nan"), "n": n}


# -- Laplace transform of the covariance core ------------------------------------

def laplace_transform(states_or_S, xi_grid, n_dir: int = 16) -> np.ndarray:
    """Empirical E exp(-xi^T S xi) per |xi|, averaged over replicas and directions."""
    S = np.array([s.S if isinstance(s, TangentState) else np.asarray(s) for s in states_or_S])
    ang = np.pi * np.arange(n_dir) / n_dir          # xi and -xi give the same quadratic form
    e = np.column_stack([np.cos(ang), np.sin(ang)])
    quad = np.einsum("da,rab,db->rd", e, S, e)      # (R, n_dir)
    quad = np.maximum(quad, 0.0)
    r = np.asarray(xi_grid, dtype=float)
    return np.array([np.mean(np.exp(-(x * x) * quad)) for x in r])


def _decay_model(x, logc, k, b):
    return np.exp(logc) * x ** k - b


def fit_laplace_decay(xi, L, lower: float = 1e-3, upper: float = 0.98, xi_min: float = 1.0) -> dict:
    """Fit -log L(xi) = c |xi|^k - b on the window xi >= xi_min, lower < L < upper.

    Below ``lower`` the replica mean is dominated by the few chains with the
    smallest S and -log L stops tracking the true transform.

    The offset b absorbs the part of the z-range that contributes at every
    |xi| (where the jump weight saturates), so k is the growth exponent of
    the number of effective small-angle events.
    """
    xi = np.asarray(xi, dtype=float)
    L = np.asarray(L, dtype=float)
    m = (L > lower) & (L < upper) & (xi >= xi_min)
    if m.sum() < 4:
        return {"exponent": float("nan"), "c": float("nan"), "offset": float("nan"),
                "n_points": int(m.sum()), "window": [float("nan"), float("nan")]}
    x, y = xi[m], -np.log(L[m])
    # start from a straight log-log fit
    k0 = max(np.polyfit(np.log(x), np.log(y), 1)[0], 0.05)
    c0 = y[-1] / x[-1] ** k0
    popt, _ = optimize.curve_fit(_decay_model, x, y, p0=(math.log(c0), k0, 0.0),
                                 bounds=([-50, 1e-3, -10 * y.max()], [50, 3.0, 10 * y.max()]),
                                 maxfev=20000)
    loglog = float(np.polyfit(np.log(x), np.log(y), 1)[0])
    return {"exponent": float(popt[1]), "c": float(math.exp(popt[0])), "offset": float(popt[2]),
            "loglog_slope": loglog, "n_points": int(m.sum()), "window": [float(x[0]), float(x[-1])]}


def laplace_nondegeneracy(states, xi_grid, t: float, zeta: float, params: KernelParams,
                          n_dir: int = 16, lower: float = 1e-3, xi_min: float = 1.0) -> dict:
    """Empirical Laplace transform table plus the decay fit and predicted rates."""
    xi = np.asarray(xi_grid, dtype=float)
    L = laplace_transform(states, xi, n_dir)
    fit = fit_laplace_decay(xi, L, lower, xi_min=xi_min)
    return {"t": t, "zeta": zeta, "xi": xi.tolist(), "laplace": L.tolist(),
            "monotone": bool(np.all(np.diff(L) <= 1e-15)), "fit": fit,
            "predicted_exponent": params.nu / (2.0 + params.nu),
            "saturation_level": zeta ** (-params.nu),
            "floor": float(L[-1])}


# -- localization and the jump density ---------------------------------------------

def localization_weight(chain: JumpChain, t: float, mp: MollifierParams, zeta: float,
                        params: KernelParams) -> float:
    """Psi(Phi_eps(|V_0|) + sum over events T_k <= t of Phi_eps(|V_{T_k}|))."""
    states = replay_chain(chain, zeta, params, t)
    total = Phi_eps(float(np.linalg.norm(chain.v0)), mp)
    if len(states):
        total += float(np.sum(Phi_eps(np.linalg.norm(states, axis=1), mp)))
    return float(Psi(total))


def g_eps_zeta(w, ensemble_v, mp: MollifierParams, gamma: float) -> float:
    """1 - (1/(2 Gamma^gamma)) mean_j phi^gamma(|w - V_j|), which lies in [1/2, 1]."""
    d = np.linalg.norm(np.asarray(ensemble_v, dtype=float) - np.asarray(w, dtype=float), axis=1)
    return float(1.0 - np.mean(phi_gamma(d, mp, gamma)) / (2.0 * mp.gamma_eps ** gamma))


def eval_q_density(t: float, w, rho_partner, z: float, ensemble_v, params: KernelParams,
                   mp: MollifierParams, zeta: float) -> float:
    """Density of (partner, z) for one chain step: a rejection bump far out in z plus
    the accepted part phi^gamma(|w - v|)/lambda on |z| <= G(zeta)+1.

    ``t`` only labels the ensemble snapshot supplying the empirical law.
    """
    Gz = float(eval_G(zeta, params))
    lam = 4.0 * (Gz + 1.0) * mp.gamma_eps ** params.gamma
    g = g_eps_zeta(w, ensemble_v, mp, params.gamma)
    bump = chi(z - Gz - 3.0)
    acc = 0.0
    if abs(z) <= Gz + 1.0:
        r = float(np.linalg.norm(np.asarray(w, dtype=float) - np.asarray(rho_partner, dtype=float)))
        acc = phi_gamma(r, mp, params.gamma) / lam
    return float(g * bump + acc)


def q_density_mass(w, ensemble_v, params: KernelParams, mp: MollifierParams, zeta: float) -> float:
    """Integrate q over the partner law (empirical average) and over z (adaptive quadrature)."""
    v = np.asarray(ensemble_v, dtype=float)
    Gz = float(eval_G(zeta, params))
    lam = 4.0 * (Gz + 1.0) * mp.gamma_eps ** params.gamma
    g = g_eps_zeta(w, v, mp, params.gamma)
    bump_mass = integrate.quad(lambda z: chi(z - Gz - 3.0), Gz + 2.0, Gz + 4.0,
                               epsabs=1e-13, epsrel=1e-13)[0]
    mean_rate = float(np.mean(phi_gamma(np.linalg.norm(v - np.asarray(w, dtype=float), axis=1),
                                        mp, params.gamma)))
    acc_mass = integrate.quad(lambda z: mean_rate / lam, -(Gz + 1.0), Gz + 1.0,
                              epsabs=1e-13, epsrel=1e-13)[0]
    return g * bump_mass + acc_mass


# -- finite-difference check ------------------------------------------------------

def fd_derivative_check(chain: JumpChain, k: int, t: float, zeta: float, params: KernelParams,
                        h: float = 1e-6) -> dict:
    """Compare a central difference in Z_k of V_t with Y_t Y_{T_k}^{-1} H_k."""
    if not chain.accepted[k]:
        raise DomainError("finite-difference check needs an accepted event")
    st = tangent_flow(chain, t, zeta, params, keep_derivatives=True)
    hit = [g for (kk, _, g) in st.derivatives if kk == k]
    if not hit:
        raise DomainError("event has zero weight pi_k or lies after t")
    analytic = st.Y @ hit[0]
    z = float(chain.Z[k])
    vp = state_at(chain, zeta, params, t, {k: z + h})
    vm = state_at(chain, zeta, params, t, {k: z - h})
    fd = (vp - vm) / (2.0 * h)
    rel = float(np.linalg.norm(fd - analytic) / max(np.linalg.norm(analytic), 1e-300))
    return {"k": k, "fd": fd, "analytic": analytic, "rel_err": rel}


def chains_from_trajectory(traj, zeta: float, params: KernelParams, horizon: float) -> list:
    """Build JumpChains for every tagged particle recorded in a simulate() run."""
    if traj.tagged is None:
        raise ConfigError("trajectory has no tagged-particle records")
    return [JumpChain.from_record(traj.initial[tag], rec, horizon) for tag, rec in sorted(traj.tagged.items())]


def chains_from_event_log(initial, event_log: dict, cfg, tags) -> list:
    """Replay a full event log and extract the chains of the listed particles."""
    from .particles import Legs, _drive

    legs = Legs.build(cfg.kernel, [(cfg.zeta, cfg.mollifier)])
    V = np.asarray(initial, dtype=float)[None].copy()
    b = (np.asarray(event_log["t"], dtype=float), np.asarray(event_log["i"], dtype=np.int64),
         np.asarray(event_log["j"], dtype=np.int64), np.asarray(event_log["z"], dtype=float),
         np.asarray(event_log["u"], dtype=float))
    horizon = float(b[0][-1]) if b[0].size else 0.0
    res = _drive(V, legs, False, [horizon], 0.0, iter([b]), record_tags=tags)
    return [JumpChain.from_record(np.asarray(initial)[tag], rec, horizon) for tag, rec in sorted(res.tagged.items())]


def sample_chains(cfg, n_chains: int, tags_per_ensemble: int = 64, t: Optional[float] = None) -> list:
    """Tagged-particle chains from independent ensembles (replica r uses stream r).

    Each ensemble contributes up to ``tags_per_ensemble`` chains; particles
    0..k-1 are tagged, which is an exchangeable choice.
    """
    from .particles import init_ensemble, simulate

    if n_chains < 1:
        raise ConfigError("n_chains must be >= 1")
    if cfg.collision_style != "one-sided":
        raise ConfigError("jump chains require the one-sided collision style")
    t = cfg.horizon if t is None else float(t)
    per = min(int(tags_per_ensemble), cfg.n_particles)
    chains = []
    rep = 0
    while len(chains) < n_chains:
        k = min(per, n_chains - len(chains))
        ens = init_ensemble(cfg, rep)
        tr = simulate(ens, cfg, record_tags=range(k), output_times=(t,))
        chains.extend(chains_from_trajectory(tr, cfg.zeta, cfg.kernel, t))
        rep += 1
    return chains


def diagnostics(chains, t: float, zeta: float, params: KernelParams, mp: MollifierParams) -> dict:
    """Per-chain {t, detYt, opnormYinv, trace_sigma, det_reg, G_weight} plus aggregates."""
    rows = []
    states = []
    for ch in chains:
        st = tangent_flow(ch, t, zeta, params)
        states.append(st)
        d = st.summary()
        d["det_reg"] = regularized_det(st, t, zeta, params)
        d["G_weight"] = localization_weight(ch, t, mp, zeta, params)
        d["max_opnormY"] = st.max_opnorm_Y
        rows.append(d)
    dets = np.array([r["det_reg"] for r in rows])
    u = u_zeta(t, zeta, params)
    agg = {"n_replicas": len(rows), "u_zeta": u,
           "max_opnormY": float(max(r["max_opnormY"] for r in rows)) if rows else 1.0,
           "min_det_over_u2": float(dets.min() / u ** 2) if rows else float("nan"),
           "mean_G_weight": float(np.mean([r["G_weight"] for r in rows])) if rows else float("nan")}
    if rows:
        agg["inverse_det_moment_p1"] = inverse_det_moment(states, 1.0, t, zeta, params, n_boot=200)
    return {"replicas": rows, "aggregate": agg}, states
