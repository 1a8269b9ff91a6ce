"""Command-line entry point: ``boltz2d <subcommand> [flags]``.

Settings are resolved in three layers: built-in defaults, then an optional
YAML file given by ``--config``, then explicit flags.  Every artifact embeds
the resolved settings, and all files are written atomically.

Exit codes: 0 success, 2 invalid configuration, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import math
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .errors import ConfigError, DomainError, NumericError
from .io import dumps, write_csv, write_json, write_snapshots_binary, write_snapshots_csv
from .kernel import KernelParams, drift_integral
from .mollifier import MollifierParams
from .rng import check_seed

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
COMMANDS = ("analyze", "simulate", "couple", "malliavin", "spectrum", "drift-check")

# (key, default, unit / meaning)
DEFAULTS = [
    ("gamma", 0.75, "kinetic exponent, (0,1)"),
    ("nu", 0.25, "angular singularity exponent, (0,1/2)"),
    ("s", None, "inverse-power index; overrides gamma and nu when set"),
    ("delta", None, "in (gamma v nu, 1); null = midpoint"),
    ("eta0", None, "mollifier ceiling exponent; null = midpoint of (1/delta, 1/(gamma v nu))"),
    ("epsilon", 0.01, "mollifier scale, velocity units"),
    ("zeta", 0.05, "angle cutoff, radians"),
    ("n_particles", 10000, "particles per ensemble"),
    ("replicas", 32, "independent replicas (chains for malliavin)"),
    ("horizon", 1.0, "final time"),
    ("output_times", [0.25, 0.5, 1.0], "snapshot times within [0, horizon]"),
    ("seed", 0, "64-bit master seed"),
    ("collision_style", "one-sided", "one-sided | symmetric"),
    ("initial_law", "gaussian", "gaussian | two_point | uniform_disk"),
    ("law_params", {"e0": 2.0}, "gaussian: e0 = mean energy; two_point: w; uniform_disk: R"),
    ("out", "out", "output directory"),
    ("target", None, "analyze: bootstrap target in (0, q); null = 0.9 q"),
    ("levels", [0.2, 0.1, 0.05, 0.025], "couple: decreasing zeta (or epsilon) levels"),
    ("kind", "zeta", "couple: zeta | epsilon"),
    ("beta", 1.0, "couple: gap exponent in (nu, 1]"),
    ("reference", None, "couple: reference level; null = min(levels)/16 (zeta) or /4 (epsilon)"),
    ("xi_min", 0.1, "malliavin: smallest |xi|"),
    ("xi_max", 1000.0, "malliavin: largest |xi|"),
    ("xi_num", 41, "malliavin: log-spaced |xi| points"),
    ("tags_per_ensemble", 64, "malliavin: chains taken from each ensemble"),
    ("kappa", 0.5, "drift-check: exponent in (nu, 1)"),
    ("drift_radii", [1.0, 2.0, 5.0, 10.0, 20.0, 40.0, 80.0], "drift-check: |V| values"),
    ("format", "csv", "simulate: csv | binary snapshots"),
]


def default_config() -> dict:
    return {k: copy.deepcopy(v) for k, v, _ in DEFAULTS}


def defaults_yaml() -> str:
    lines = [f"# boltz2d {__version__} defaults"]
    for k, v, doc in DEFAULTS:
        lines.append(f"# {doc}")
        lines.append(yaml.safe_dump({k: v}, default_flow_style=True, sort_keys=False).strip())
    return "\n".join(lines) + "\n"


def _float_list(text):
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("configuration")
    g.add_argument("--config", type=Path, help="YAML file with any of the keys shown by --print-defaults")
    g.add_argument("--gamma", type=float)
    g.add_argument("--nu", type=float)
    g.add_argument("--s", type=float)
    g.add_argument("--delta", type=float)
    g.add_argument("--eta0", type=float)
    g.add_argument("--epsilon", type=float)
    g.add_argument("--zeta", type=float)
    g.add_argument("--n-particles", dest="n_particles", type=int)
    g.add_argument("--replicas", type=int)
    g.add_argument("--horizon", type=float)
    g.add_argument("--output-times", dest="output_times", type=_float_list)
    g.add_argument("--seed", type=int)
    g.add_argument("--collision-style", dest="collision_style", choices=["one-sided", "symmetric"])
    g.add_argument("--initial-law", dest="initial_law", choices=["gaussian", "two_point", "uniform_disk"])
    g.add_argument("--out", type=str)
    g.add_argument("--target", type=float)
    g.add_argument("--levels", type=_float_list)
    g.add_argument("--kind", choices=["zeta", "epsilon"])
    g.add_argument("--beta", type=float)
    g.add_argument("--reference", type=float)
    g.add_argument("--xi-min", dest="xi_min", type=float)
    g.add_argument("--xi-max", dest="xi_max", type=float)
    g.add_argument("--xi-num", dest="xi_num", type=int)
    g.add_argument("--tags-per-ensemble", dest="tags_per_ensemble", type=int)
    g.add_argument("--kappa", type=float)
    g.add_argument("--format", choices=["csv", "binary"])
    g.add_argument("--print-defaults", action="store_true", default=argparse.SUPPRESS,
                   help="print the default configuration and exit")

    # flags live on the subcommands only: argparse lets subparser defaults
    # overwrite values parsed by the top-level parser
    p = argparse.ArgumentParser(prog="boltz2d", description="Jump-SDE particle simulator and exponent calculus.")
    p.add_argument("--print-defaults", action="store_true", help="print the default configuration and exit")
    p.add_argument("--version", action="version", version=f"boltz2d {__version__}")
    sub = p.add_subparsers(dest="command")
    helps = {"analyze": "exponent report (a, q, thresholds, bootstrap schedule)",
             "simulate": "particle snapshots and conservation report",
             "couple": "coupled runs across cutoff levels; gap table and slopes",
             "malliavin": "tangent-flow diagnostics along tagged-particle chains",
             "spectrum": "characteristic-function decay of the final snapshot",
             "drift-check": "sign table of the exponential drift integral"}
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return p


def resolve_config(ns: argparse.Namespace) -> dict:
    cfg = default_config()
    if getattr(ns, "config", None) is not None:
        try:
            loaded = yaml.safe_load(Path(ns.config).read_text()) or {}
        except OSError as e:
            raise ConfigError(f"cannot read config file: {e}") from None
        except yaml.YAMLError as e:
            raise ConfigError(f"config file is not valid YAML: {e}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a mapping of keys to values")
        unknown = sorted(set(loaded) - set(cfg))
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        cfg.update(loaded)
    for k in cfg:
        v = getattr(ns, k, None)
        if v is not None:
            cfg[k] = v
    if getattr(ns, "s", None) is not None and (ns.gamma is not None or ns.nu is not None):
        raise ConfigError("give either --s or --gamma/--nu, not both")
    return _coerce(cfg)


_FLOATS = ("gamma", "nu", "s", "delta", "eta0", "epsilon", "zeta", "horizon", "target", "beta",
           "reference", "xi_min", "xi_max", "kappa")
_INTS = ("n_particles", "replicas", "seed", "xi_num", "tags_per_ensemble")
_LISTS = ("output_times", "levels", "drift_radii")


def _coerce(cfg: dict) -> dict:
    """Type-check values coming from YAML (which reads e.g. 1.0e7 as a string)."""
    def num(k, v, kind):
        if v is None and kind is float and k not in ("gamma", "nu", "epsilon", "zeta", "horizon", "beta",
                                                     "xi_min", "xi_max", "kappa"):
            return None
        try:
            x = float(v)
        except (TypeError, ValueError):
            raise ConfigError(f"{k} must be a number, got {v!r}") from None
        if kind is int:
            if x != int(x):
                raise ConfigError(f"{k} must be an integer, got {v!r}")
            return int(x)
        if not math.isfinite(x):
            raise ConfigError(f"{k} must be finite, got {v!r}")
        return x

    out = dict(cfg)
    for k in _FLOATS:
        out[k] = num(k, out[k], float)
    for k in _INTS:
        out[k] = num(k, out[k], int)
    for k in _LISTS:
        if not isinstance(out[k], (list, tuple)):
            raise ConfigError(f"{k} must be a list of numbers, got {out[k]!r}")
        out[k] = [num(k, x, float) for x in out[k]]
    if not isinstance(out["law_params"], dict):
        raise ConfigError(f"law_params must be a mapping, got {out['law_params']!r}")
    for k in ("collision_style", "initial_law", "kind", "format", "out"):
        if not isinstance(out[k], str):
            raise ConfigError(f"{k} must be a string, got {out[k]!r}")
    return out


def kernel_from(cfg: dict) -> KernelParams:
    if cfg["s"] is not None:
        return KernelParams.from_s(cfg["s"], eta0=cfg["eta0"], delta=cfg["delta"])
    return KernelParams(cfg["gamma"], cfg["nu"], eta0=cfg["eta0"], delta=cfg["delta"])


def build_all(cfg: dict):
    """Validate every parameter block; returns (kernel, mollifier, SimulationConfig)."""
    from .particles import SimulationConfig
    from .regularity import exponent_a

    kp = kernel_from(cfg)
    exponent_a(kp)                      # raises on gamma <= nu^2/(1-2nu)
    mp = MollifierParams(cfg["epsilon"], kp.eta0)
    check_seed(cfg["seed"])
    if int(cfg["replicas"]) < 1:
        raise ConfigError("replicas must be >= 1")
    sim = SimulationConfig(kp, mp, zeta=float(cfg["zeta"]), n_particles=cfg["n_particles"],
                           horizon=float(cfg["horizon"]), collision_style=cfg["collision_style"],
                           initial_law=cfg["initial_law"], law_params=dict(cfg["law_params"] or {}),
                           seed=int(cfg["seed"]), output_times=tuple(cfg["output_times"]))
    return kp, mp, sim


def _meta(command: str, cfg: dict, sim=None) -> dict:
    # the output directory is left out so reruns elsewhere stay byte-identical
    m = {"command": command, "version": __version__, "config": {k: v for k, v in cfg.items() if k != "out"}}
    if sim is not None:
        m["resolved"] = sim.as_dict()
    return m


# -- subcommands ------------------------------------------------------------------

def cmd_analyze(cfg, out: Path) -> dict:
    from .regularity import regularity_report

    kp, _, sim = build_all(cfg)
    rep = regularity_report(kp, cfg["target"], s=None if cfg["s"] is None else Fraction(cfg["s"]))
    d = rep.as_dict()
    d["meta"] = _meta("analyze", cfg, sim)
    write_json(out / "analyze.json", d)
    return d


def cmd_simulate(cfg, out: Path) -> dict:
    from .particles import init_ensemble, simulate

    _, _, sim = build_all(cfg)
    R = int(cfg["replicas"])
    times = list(sim.output_times)
    mom = np.zeros((R, len(times), 2))
    en = np.zeros((R, len(times)))
    cons = [0.0, 0.0]
    events = 0
    for r in range(R):
        ens = init_ensemble(sim, r)
        p0, e0 = ens.momentum(), ens.energy()
        tr = simulate(ens, sim)
        for b, snap in enumerate(tr.snapshots):
            mom[r, b] = snap.mean(axis=0) - p0
            en[r, b] = np.mean(np.sum(snap * snap, axis=1)) - e0
        cons = [max(cons[0], tr.conservation[0]), max(cons[1], tr.conservation[1])]
        events += tr.n_events
        if r == 0:
            meta = _meta("simulate", cfg, sim)
            if cfg["format"] == "binary":
                write_snapshots_binary(out / "snapshots.bin", tr.times, tr.snapshots, meta)
            else:
                write_snapshots_csv(out / "snapshots.csv", tr.times, tr.snapshots, meta)

    def zscores(x):
        mean = x.mean(axis=0)
        se = x.std(axis=0, ddof=1) / math.sqrt(R) if R > 1 else np.full_like(mean, np.nan)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(se > 0, mean / se, 0.0)
        return mean, se, z

    pm, ps, pz = zscores(mom)
    em, es, ez = zscores(en)
    report = {"times": times, "replicas": R, "n_events_total": events,
              "momentum_drift_mean": pm, "momentum_drift_se": ps, "momentum_z": pz,
              "energy_drift_mean": em, "energy_drift_se": es, "energy_z": ez,
              "max_event_rel_error": {"momentum": cons[0], "energy": cons[1]},
              "within_5_se": bool(np.all(np.abs(pz) <= 5) and np.all(np.abs(ez) <= 5)),
              "meta": _meta("simulate", cfg, sim)}
    write_json(out / "conservation.json", report)
    return report


def cmd_couple(cfg, out: Path) -> dict:
    from .particles import run_coupling

    _, _, sim = build_all(cfg)
    tab = run_coupling(sim, cfg["levels"], kind=cfg["kind"], beta=float(cfg["beta"]),
                       replicas=int(cfg["replicas"]), reference=cfg["reference"])
    meta = _meta("couple", cfg, sim)
    write_csv(out / "couple.csv", ["level", "reference", "t", "beta", "gap", "stderr"], tab.rows(), meta)
    d = {"kind": tab.kind, "reference": tab.reference, "levels": tab.levels, "times": tab.times,
         "beta": tab.beta, "slopes": tab.slopes, "required_slope": tab.beta - sim.kernel.nu - 0.15,
         "meta": meta}
    write_json(out / "couple_slopes.json", d)
    return d


def cmd_malliavin(cfg, out: Path) -> dict:
    from .malliavin import diagnostics, laplace_nondegeneracy, sample_chains

    kp, mp, sim = build_all(cfg)
    if sim.collision_style != "one-sided":
        raise ConfigError("malliavin diagnostics use the one-sided collision style")
    t = sim.horizon
    chains = sample_chains(sim, int(cfg["replicas"]), int(cfg["tags_per_ensemble"]), t)
    diag, states = diagnostics(chains, t, sim.zeta, kp, mp)
    xi = np.logspace(math.log10(cfg["xi_min"]), math.log10(cfg["xi_max"]), int(cfg["xi_num"]))
    diag["laplace"] = laplace_nondegeneracy(states, xi, t, sim.zeta, kp)
    diag["meta"] = _meta("malliavin", cfg, sim)
    write_json(out / "malliavin.json", diag)
    return diag


def cmd_spectrum(cfg, out: Path) -> dict:
    from .particles import init_ensemble, simulate
    from .regularity import decay_fit, exponent_q

    kp, _, sim = build_all(cfg)
    ens = init_ensemble(sim, 0)
    simulate(ens, sim)
    fit = decay_fit(ens, q_pred=float(exponent_q(kp)))
    meta = _meta("spectrum", cfg, sim)
    meta["t"] = ens.time
    rows = [(r, m, fit["slope"]) for r, m in zip(fit["radii"], fit["mean_abs_fhat"])]
    write_csv(out / "spectrum.csv", ["|xi|", "mean_abs_fhat", "fit_slope"], rows, meta)
    return {"slope": fit["slope"], "predicted_q": float(exponent_q(kp)), "n_fit": fit["n_fit"]}


def cmd_drift_check(cfg, out: Path) -> dict:
    kp, _, sim = build_all(cfg)
    kappa = float(cfg["kappa"])
    rows = []
    for R in cfg["drift_radii"]:
        V = np.array([float(R), 0.0])
        for name, v in (("zero", [0.0, 0.0]), ("parallel", [R / 130, 0.0]),
                        ("orthogonal", [0.0, R / 130]), ("antiparallel", [-R / 130, 0.0])):
            d = drift_integral(V, v, kappa, kp)
            rows.append((float(R), float(np.linalg.norm(v)), name, d, int(d < 0)))
    meta = _meta("drift-check", cfg, sim)
    write_csv(out / "drift_check.csv", ["V_norm", "v_norm", "v_direction", "delta", "negative"], rows, meta)
    neg = [r for r in rows if r[4]]
    return {"rows": len(rows), "negative": len(neg)}


HANDLERS = {"analyze": cmd_analyze, "simulate": cmd_simulate, "couple": cmd_couple,
            "malliavin": cmd_malliavin, "spectrum": cmd_spectrum, "drift-check": cmd_drift_check}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_OK
    if getattr(ns, "print_defaults", False):
        sys.stdout.write(defaults_yaml())
        return EXIT_OK
    if ns.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = resolve_config(ns)
        out = Path(cfg["out"])
        res = HANDLERS[ns.command](cfg, out)
    except (ConfigError, DomainError) as e:
        print(f"boltz2d: configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, FloatingPointError, OverflowError) as e:
        print(f"boltz2d: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    summary = {k: v for k, v in res.items() if k not in ("meta", "replicas", "laplace")} \
        if isinstance(res, dict) else res
    print(dumps(summary))
    return EXIT_OK


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":  # pragma: no cover
    main()
