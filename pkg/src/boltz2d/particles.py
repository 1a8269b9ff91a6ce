"""Mean-field particle system for the mollified, angle-truncated jump SDE.

Each particle jumps at the events of a Poisson clock of rate
``lambda = 2 Zmax * Umax`` (``Zmax = G(zeta)+1``, ``Umax = 2 Gamma_eps^gamma``);
at an event it picks a partner uniformly among the others, draws
``z ~ U[-Zmax, Zmax]`` and ``u ~ U[0, Umax]`` and accepts when
``u <= phi_eps^gamma(|V_i - V_j|)``.  Coupled runs drive several parameter
levels ("legs") with one shared event stream and a common majorant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from . import _engine
from .errors import ConfigError, DomainError, NumericError
from .kernel import KernelParams, eval_G
from .mollifier import MollifierParams, phi_gamma
from .rng import ROLE_BOOTSTRAP, ROLE_EVENTS, ROLE_INIT, check_seed, stream

COLLISION_STYLES = ("one-sided", "symmetric")
INITIAL_LAWS = ("gaussian", "two_point", "uniform_disk")
BATCH = 1 << 16


@dataclass(frozen=True)
class SimulationConfig:
    kernel: KernelParams
    mollifier: MollifierParams
    zeta: float = 0.05
    n_particles: int = 10_000
    horizon: float = 1.0
    collision_style: str = "one-sided"
    initial_law: str = "gaussian"
    law_params: dict = field(default_factory=lambda: {"e0": 2.0})
    seed: int = 0
    output_times: tuple = (0.25, 0.5, 1.0)

    def __post_init__(self):
        if not 0.0 < self.zeta < 1.0:
            raise ConfigError(f"zeta must lie in (0,1), got {self.zeta}")
        if int(self.n_particles) != self.n_particles or self.n_particles < 2:
            raise ConfigError(f"n_particles must be an integer >= 2, got {self.n_particles}")
        object.__setattr__(self, "n_particles", int(self.n_particles))
        if not self.horizon > 0:
            raise ConfigError(f"horizon must be positive, got {self.horizon}")
        if self.collision_style not in COLLISION_STYLES:
            raise ConfigError(f"collision_style must be one of {COLLISION_STYLES}, got {self.collision_style!r}")
        if self.initial_law not in INITIAL_LAWS:
            raise ConfigError(f"initial_law must be one of {INITIAL_LAWS}, got {self.initial_law!r}")
        check_seed(self.seed)
        ts = tuple(float(t) for t in self.output_times)
        if any(b <= a for a, b in zip(ts, ts[1:])) or (ts and (ts[0] < 0 or ts[-1] > self.horizon)):
            raise ConfigError(f"output_times must be increasing within [0, horizon], got {ts}")
        object.__setattr__(self, "output_times", ts)
        lam = self.rate
        if not math.isfinite(lam) or lam <= 0 or not math.isfinite(lam * self.n_particles * self.horizon):
            raise ConfigError(f"jump rate is not finite: lambda = {lam}")

    @property
    def g_zeta(self) -> float:
        return float(eval_G(self.zeta, self.kernel))

    @property
    def rate(self) -> float:
        """Per-particle majorant rate 4 (G(zeta)+1) Gamma_eps^gamma."""
        return 4.0 * (self.g_zeta + 1.0) * self.mollifier.gamma_eps ** self.kernel.gamma

    def as_dict(self) -> dict:
        return {"kernel": self.kernel.as_dict(), "mollifier": self.mollifier.as_dict(),
                "zeta": self.zeta, "n_particles": self.n_particles, "horizon": self.horizon,
                "collision_style": self.collision_style, "initial_law": self.initial_law,
                "law_params": dict(self.law_params), "seed": self.seed,
                "output_times": list(self.output_times)}


@dataclass
class Ensemble:
    velocities: np.ndarray
    time: float
    rng: np.random.Generator
    replica: int = 0

    @property
    def rng_state(self) -> dict:
        return self.rng.bit_generator.state

    @property
    def n(self) -> int:
        return self.velocities.shape[0]

    def energy(self) -> float:
        return float(np.mean(np.sum(self.velocities ** 2, axis=1)))

    def momentum(self) -> np.ndarray:
        return self.velocities.mean(axis=0)


def _draw_initial(cfg: SimulationConfig, rng: np.random.Generator) -> np.ndarray:
    n, p = cfg.n_particles, dict(cfg.law_params)
    if cfg.initial_law == "gaussian":
        e0 = float(p.get("e0", 2.0))
        if not e0 > 0:
            raise ConfigError("gaussian law needs e0 > 0 (e0 = 0 is a point mass)")
        v = rng.normal(0.0, math.sqrt(e0 / 2.0), size=(n, 2))
    elif cfg.initial_law == "two_point":
        w = np.asarray(p.get("w", (1.0, 0.0)), dtype=float)
        if w.shape != (2,) or not np.any(w != 0):
            raise ConfigError("two_point law needs a nonzero w (w = 0 is a point mass)")
        if n % 2:
            raise ConfigError("two_point law needs an even number of particles")
        v = np.empty((n, 2))
        v[: n // 2] = w
        v[n // 2:] = -w
        v = v[rng.permutation(n)]
    else:
        R = float(p.get("R", 1.0))
        if not R > 0:
            raise ConfigError("uniform_disk law needs R > 0 (R = 0 is a point mass)")
        r = R * np.sqrt(rng.uniform(size=n))
        a = rng.uniform(0.0, 2.0 * math.pi, size=n)
        v = np.column_stack([r * np.cos(a), r * np.sin(a)])
    v = v - v.mean(axis=0)
    if not np.any(np.sum(v * v, axis=1) > 0):
        raise ConfigError("initial sample is a point mass")
    return v


def init_ensemble(cfg: SimulationConfig, replica: int = 0) -> Ensemble:
    """N draws from the initial law, recentred to zero sample mean."""
    v = _draw_initial(cfg, stream(cfg.seed, replica, ROLE_INIT))
    return Ensemble(v, 0.0, stream(cfg.seed, replica, ROLE_EVENTS), replica)


# -- driver ---------------------------------------------------------------------

@dataclass
class Legs:
    """Per-leg (G(zeta), eps, Gamma_eps) arrays plus the shared majorant."""
    gz: np.ndarray
    eps: np.ndarray
    gam: np.ndarray
    gamma: float
    nu: float

    @classmethod
    def build(cls, kernel: KernelParams, pairs: Sequence[tuple]) -> "Legs":
        gz = np.array([eval_G(z, kernel) for z, _ in pairs], dtype=float)
        eps = np.array([m.epsilon for _, m in pairs], dtype=float)
        gam = np.array([m.gamma_eps for _, m in pairs], dtype=float)
        return cls(gz, eps, gam, kernel.gamma, kernel.nu)

    @property
    def zmax(self) -> float:
        return float(self.gz.max()) + 1.0

    @property
    def umax(self) -> float:
        return 2.0 * float(self.gam.max()) ** self.gamma


@dataclass
class RunResult:
    times: np.ndarray
    snapshots: np.ndarray            # (n_times, L, N, 2)
    n_events: int
    n_accepted: np.ndarray           # per leg
    conservation: tuple              # max per-event (momentum, energy) relative error
    event_log: Optional[dict] = None
    tagged: Optional[dict] = None


def _event_batch(rng, n, t0, total_rate, zmax, umax, size=BATCH):
    gaps = rng.exponential(1.0 / total_rate, size)
    tt = t0 + np.cumsum(gaps)
    ii = rng.integers(0, n, size)
    jj = rng.integers(0, n - 1, size)
    jj = jj + (jj >= ii)
    zz = rng.uniform(-zmax, zmax, size)
    uu = rng.uniform(0.0, umax, size)
    return tt, ii.astype(np.int64), jj.astype(np.int64), zz, uu


def _drive(V, legs: Legs, symmetric: bool, stop_times, t_start, batches, record_tags=None,
           log_events=False, partner_leg: int = -1) -> RunResult:
    """Advance V (L, N, 2) in place through ``stop_times``; ``batches`` yields event arrays."""
    L, N = V.shape[:2]
    cons = np.zeros(2)
    acc_total = np.zeros(L, dtype=np.int64)
    snaps = []
    logs = {k: [] for k in ("t", "i", "j", "z", "u", "accepted")} if log_events else None
    tag_set = None if record_tags is None else np.asarray(sorted(set(int(t) for t in record_tags)))
    tag_rows = {k: [] for k in ("t", "i", "j", "z", "u", "accepted", "prev", "partner")} \
        if tag_set is not None else None
    record = tag_set is not None
    n_events = 0
    batch = None
    k = 0

    def take(b, k0, k1):
        tt, ii, jj, zz, uu, acc, prev, partner = b
        if logs is not None:
            logs["t"].append(tt[k0:k1])
            logs["i"].append(ii[k0:k1])
            logs["j"].append(jj[k0:k1])
            logs["z"].append(zz[k0:k1])
            logs["u"].append(uu[k0:k1])
            logs["accepted"].append(acc[0, k0:k1].copy())
        if tag_rows is not None:
            sel = np.nonzero(np.isin(ii[k0:k1], tag_set))[0] + k0
            for key, arr in (("t", tt), ("i", ii), ("j", jj), ("z", zz), ("u", uu), ("prev", prev),
                             ("partner", partner)):
                tag_rows[key].append(arr[sel].copy())
            tag_rows["accepted"].append(acc[0, sel].copy())

    for ts in stop_times:
        if ts < t_start:
            raise DomainError(f"output time {ts} precedes the ensemble clock {t_start}")
        while True:
            if batch is None:
                try:
                    tt, ii, jj, zz, uu = next(batches)
                except StopIteration:
                    break
                B = tt.shape[0]
                acc = np.zeros((L, B), dtype=np.int8)
                prev = np.zeros((B, 2)) if record else np.zeros((1, 2))
                partner = np.zeros((B, 2)) if record else np.zeros((1, 2))
                batch = (tt, ii, jj, zz, uu, acc, prev, partner)
                k = 0
            tt, ii, jj, zz, uu, acc, prev, partner = batch
            k1 = _engine.advance(V, tt, ii, jj, zz, uu, k, float(ts), legs.gz, legs.eps, legs.gam,
                                 legs.gamma, legs.nu, symmetric, acc, record, prev, partner, cons,
                                 partner_leg)
            acc_total += acc[:, k:k1].sum(axis=1)
            take(batch, k, k1)
            n_events += k1 - k
            k = k1
            if k < tt.shape[0]:
                break
            batch = None
        snaps.append(V.copy())
    if not np.all(np.isfinite(V)):
        raise NumericError("non-finite velocities encountered")
    event_log = None
    if logs is not None:
        event_log = {key: (np.concatenate(v) if v else np.zeros(0)) for key, v in logs.items()}
    tagged = None
    if tag_rows is not None:
        flat = {key: (np.concatenate(v) if v else np.zeros((0, 2) if key in ("prev", "partner") else 0))
                for key, v in tag_rows.items()}
        tagged = {}
        for tag in tag_set:
            m = flat["i"] == tag
            tagged[int(tag)] = {key: arr[m] for key, arr in flat.items()}
    return RunResult(np.asarray(stop_times, dtype=float), np.stack(snaps) if snaps else np.zeros((0, L, N, 2)),
                     n_events, acc_total, (float(cons[0]), float(cons[1])), event_log, tagged)


def _generated_batches(rng, n, t_start, total_rate, zmax, umax):
    t = t_start
    while True:
        b = _event_batch(rng, n, t, total_rate, zmax, umax)
        t = b[0][-1]
        yield b


def total_event_rate(cfg: SimulationConfig, legs: Legs) -> float:
    lam = 2.0 * legs.zmax * legs.umax
    # a symmetric event moves two particles, so pairs are drawn at half the rate
    return cfg.n_particles * lam * (0.5 if cfg.collision_style == "symmetric" else 1.0)


@dataclass
class Trajectory:
    times: np.ndarray
    snapshots: np.ndarray            # (n_times, N, 2)
    n_events: int
    n_accepted: int
    conservation: tuple
    event_log: Optional[dict] = None
    tagged: Optional[dict] = None
    initial: Optional[np.ndarray] = None


def simulate(ens: Ensemble, cfg: SimulationConfig, record_tags=None, log_events: bool = False,
             output_times=None) -> Trajectory:
    """Advance ``ens`` in place to the last output time; return the snapshots.

    ``record_tags`` collects, for the listed particle ids, every event in
    which that particle was the one to (possibly) jump, together with its
    pre-event velocity and the partner velocity.  ``log_events`` keeps the
    full ``(t, i, j, z, u, accepted)`` log.
    """
    times = cfg.output_times if output_times is None else tuple(float(t) for t in output_times)
    if ens.n != cfg.n_particles:
        raise ConfigError("ensemble size does not match the configuration")
    if record_tags is not None and cfg.collision_style != "one-sided":
        raise ConfigError("tagged-particle chains require the one-sided collision style")
    legs = Legs.build(cfg.kernel, [(cfg.zeta, cfg.mollifier)])
    V = ens.velocities[None].copy()
    initial = ens.velocities.copy()
    batches = _generated_batches(ens.rng, cfg.n_particles, ens.time, total_event_rate(cfg, legs),
                                 legs.zmax, legs.umax)
    res = _drive(V, legs, cfg.collision_style == "symmetric", times, ens.time, batches,
                 record_tags, log_events)
    ens.velocities = V[0]
    if times:
        ens.time = float(times[-1])
    return Trajectory(res.times, res.snapshots[:, 0], res.n_events, int(res.n_accepted[0]),
                      res.conservation, res.event_log, res.tagged, initial)


def replay_events(initial: np.ndarray, event_log: dict, cfg: SimulationConfig, output_times=None):
    """Re-run a logged event sequence from the initial velocities; returns snapshots."""
    times = cfg.output_times if output_times is None else tuple(float(t) for t in output_times)
    legs = Legs.build(cfg.kernel, [(cfg.zeta, cfg.mollifier)])
    V = np.asarray(initial, dtype=float)[None].copy()
    b = (np.asarray(event_log["t"], dtype=float), np.asarray(event_log["i"], dtype=np.int64),
         np.asarray(event_log["j"], dtype=np.int64), np.asarray(event_log["z"], dtype=float),
         np.asarray(event_log["u"], dtype=float))
    res = _drive(V, legs, cfg.collision_style == "symmetric", times, 0.0, iter([b]), log_events=True)
    return res.times, res.snapshots[:, 0], res.event_log


# -- estimators -----------------------------------------------------------------

def estimate_exponential_moment(ens_or_v, kappa: float, kernel: Optional[KernelParams] = None) -> float:
    """(1/N) sum exp(|V_i|^kappa), computed in log-sum-exp form."""
    v = ens_or_v.velocities if isinstance(ens_or_v, Ensemble) else np.asarray(ens_or_v, dtype=float)
    if kernel is not None and not kernel.nu < kappa < kernel.delta:
        raise DomainError(f"kappa must lie in (nu, delta) = ({kernel.nu}, {kernel.delta}), got {kappa}")
    a = np.sqrt(np.sum(v * v, axis=1)) ** kappa
    log_mean = logsumexp(a) - math.log(a.size)
    if log_mean > 709.0:
        raise NumericError(f"exponential moment overflows: log value {log_mean:.3f}")
    return math.exp(log_mean)


def exponential_moment_ci(v, kappa: float, n_boot: int = 400, seed: int = 0, level: float = 0.95):
    """Point estimate with a percentile bootstrap interval."""
    v = np.asarray(v, dtype=float)
    a = np.sqrt(np.sum(v * v, axis=1)) ** kappa
    rng = stream(seed, 0, ROLE_BOOTSTRAP)
    n = a.size
    boots = np.empty(n_boot)
    for b in range(n_boot):
        s = a[rng.integers(0, n, n)]
        boots[b] = math.exp(logsumexp(s) - math.log(n))
    lo, hi = np.quantile(boots, [(1 - level) / 2, (1 + level) / 2])
    return estimate_exponential_moment(v, kappa), float(lo), float(hi), float(boots.std(ddof=1))


def acceptance_fraction_prediction(v, mp: MollifierParams, gamma: float, n_pairs: int = 200_000,
                                   seed: int = 0) -> float:
    """(1/(2 Gamma^gamma)) E phi^gamma(|V_i - V_j|) over random ordered pairs i != j."""
    v = np.asarray(v, dtype=float)
    rng = stream(seed, 0, ROLE_BOOTSTRAP)
    n = v.shape[0]
    i = rng.integers(0, n, n_pairs)
    j = rng.integers(0, n - 1, n_pairs)
    j = j + (j >= i)
    r = np.linalg.norm(v[i] - v[j], axis=1)
    return float(np.mean(phi_gamma(r, mp, gamma)) / (2.0 * mp.gamma_eps ** gamma))


def mass_lower_bound_curve(v, r_grid, n_grid: int = 41) -> tuple:
    """For each r: min over centers w of the fraction of particles with |V_i - w| >= r.

    Centers: a square grid (containing the origin) restricted to the ball of
    radius a = sqrt(2 e0) + 1.  For |w| >= a the fraction is bounded below
    by the fraction with |V_i| <= a - r, which is at least 1/2 when r <= 1
    by Chebyshev.  Returns (q per r, a).
    """
    v = np.asarray(v, dtype=float)
    r = np.sort(np.asarray(r_grid, dtype=float))
    e0 = float(np.mean(np.sum(v * v, axis=1)))
    a = math.sqrt(2.0 * e0) + 1.0
    if n_grid % 2 == 0:
        n_grid += 1
    g = np.linspace(-a, a, n_grid)
    cx, cy = np.meshgrid(g, g)
    centers = np.column_stack([cx.ravel(), cy.ravel()])
    centers = centers[np.sum(centers ** 2, axis=1) <= a * a]
    counts = _engine.far_counts(v, centers, r * r)
    near = counts.min(axis=0) / v.shape[0]
    speed = np.sqrt(np.sum(v * v, axis=1))
    far = np.array([np.mean(speed <= a - ri) for ri in r])
    return np.minimum(near, far), a


def estimate_mass_lower_bound(ens_or_v, r_grid, n_grid: int = 41) -> tuple:
    """Best (r0, q0): the largest certified q0, ties broken by the larger r0."""
    v = ens_or_v.velocities if isinstance(ens_or_v, Ensemble) else np.asarray(ens_or_v, dtype=float)
    r = np.sort(np.asarray(r_grid, dtype=float))
    q, _ = mass_lower_bound_curve(v, r, n_grid)
    best = np.max(q)
    idx = np.nonzero(q >= best - 1e-15)[0][-1]
    return float(r[idx]), float(q[idx])


# -- coupling -------------------------------------------------------------------

@dataclass
class CouplingTable:
    kind: str
    reference: float
    levels: list
    beta: float
    times: list
    gap: np.ndarray                  # (n_levels, n_times) replicate mean of mean_i |dV_i|^beta
    stderr: np.ndarray
    slopes: list                     # fitted log-gap vs log-level slope per time

    def rows(self):
        for a, lev in enumerate(self.levels):
            for b, t in enumerate(self.times):
                yield (lev, self.reference, t, self.beta, self.gap[a, b], self.stderr[a, b])


def _fit_slope(levels, gaps) -> float:
    x = np.log(np.asarray(levels, dtype=float))
    y = np.log(np.asarray(gaps, dtype=float))
    if not np.all(np.isfinite(y)) or len(x) < 2:
        return float("nan")
    return float(np.polyfit(x, y, 1)[0])


def run_coupling(cfg: SimulationConfig, levels, kind: str = "zeta", beta: float = 1.0,
                 replicas: int = 32, reference: Optional[float] = None) -> CouplingTable:
    """Coupled runs at several zeta (or eps) levels against a finer reference level.

    All legs consume the same event stream (times, particle, partner index,
    z, u); a jump that only the finer leg sees (small angles, or a thinning
    mark between the two rates) is applied in that leg only.  The reference
    leg is a genuine particle system and serves as the partner population
    for every leg, so all legs sample partners from one common law, as the
    linear SDEs being compared do.  The default reference is min(levels)/16
    for zeta and min(levels)/4 for eps.  Dynamics are one-sided.
    """
    if cfg.collision_style != "one-sided":
        raise ConfigError("coupled runs use the one-sided collision style")
    if kind not in ("zeta", "epsilon"):
        raise ConfigError(f"kind must be 'zeta' or 'epsilon', got {kind!r}")
    if not cfg.kernel.nu < beta <= 1.0:
        raise DomainError(f"beta must lie in (nu, 1], got {beta}")
    levels = [float(x) for x in levels]
    if not levels or any(b >= a for a, b in zip(levels, levels[1:])):
        raise ConfigError("levels must be distinct and sorted in decreasing order")
    if reference is None:
        reference = min(levels) / (16.0 if kind == "zeta" else 4.0)
    if reference > min(levels):
        raise ConfigError("the reference level must not exceed the smallest level")
    if kind == "zeta":
        for z in levels + [reference]:
            if not 0 < z < 1:
                raise ConfigError(f"zeta level {z} outside (0,1)")
        pairs = [(z, cfg.mollifier) for z in levels + [reference]]
    else:
        pairs = [(cfg.zeta, MollifierParams(e, cfg.mollifier.eta0)) for e in levels + [reference]]
    legs = Legs.build(cfg.kernel, pairs)
    L = len(pairs)
    times = list(cfg.output_times)
    per_rep = np.zeros((replicas, L - 1, len(times)))
    for r in range(replicas):
        ens = init_ensemble(cfg, r)
        V = np.repeat(ens.velocities[None], L, axis=0)
        batches = _generated_batches(ens.rng, cfg.n_particles, 0.0, total_event_rate(cfg, legs),
                                     legs.zmax, legs.umax)
        res = _drive(V, legs, False, times, 0.0, batches, partner_leg=L - 1)
        diff = res.snapshots[:, :-1] - res.snapshots[:, -1:]
        per_rep[r] = np.mean(np.sqrt(np.sum(diff * diff, axis=-1)) ** beta, axis=-1).T
    gap = per_rep.mean(axis=0)
    se = per_rep.std(axis=0, ddof=1) / math.sqrt(replicas) if replicas > 1 else np.zeros_like(gap)
    slopes = [_fit_slope(levels, gap[:, b]) if len(levels) > 1 else float("nan") for b in range(len(times))]
    return CouplingTable(kind, reference, levels, beta, times, gap, se, slopes)
