"""
Command-line runner: analytic sweeps, Monte Carlo ensembles and the acceptance suite.

    freqjump analytic --config exp.json --out results/
    freqjump ensemble --config exp.json --out results/ --seed 7 --threads 4
    freqjump verify
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import os
import sys

import numpy as np

from . import analytic, dynamics, floquet
from .config import ConfigError, ExperimentConfig
from .phys import frequency_ratio


def analytic_curves(cfg: ExperimentConfig, t_d):
    """Dict of model columns (m) over ``t_d`` according to the model flags."""
    particle, optical, paul, init, _, _ = cfg.build()
    t_d = np.asarray(t_d, dtype=float)
    cols = {}
    if cfg.models.simple:
        cols["du_simple"] = np.sqrt(analytic.total_variance_simple(t_d, init, particle, paul))
        r = frequency_ratio(optical, paul)
        omega_o = optical.omega_u_eff
        cols["du_heating_simple"] = np.sqrt(analytic.heating_variance(
            t_d, r, particle.heating_rate(omega_o), particle.mass, omega_o, paul.omega_p))
    if cfg.models.full:
        sol = floquet.solution_for_trap(paul, cfg.n_max)
        cov0 = init.uv_state().cov[np.ix_([0, 2], [0, 2])]
        coh = floquet.coherent_variance_from_cov(t_d, cov0, sol)
        heat = floquet.full_heating_variance(t_d, particle.gamma, particle.T_bath, particle.mass,
                                             optical.omega_u_eff, sol)
        cols["du_full"] = np.sqrt(coh + heat)
    return cols


def _header(cfg: ExperimentConfig, kind):
    return [
        f"# freqjump {kind}",
        f"# config_hash={cfg.hash()} base_seed={cfg.base_seed}",
        "# units: SI (t_d in s, lengths in m, velocities in m/s)",
    ]


def _write_csv(path, header_lines, columns: dict):
    buf = io.StringIO()
    for line in header_lines:
        buf.write(line + "\n")
    w = csv.writer(buf, lineterminator="\n")
    names = list(columns)
    w.writerow(names)
    n = len(next(iter(columns.values())))
    for i in range(n):
        w.writerow([_fmt(columns[k][i]) for k in names])
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


_ORDER = ("t_d", "du_simple", "du_full", "du_mc", "du_mc_err", "du_heating_simple", "excluded_shots")


def cmd_analytic(cfg: ExperimentConfig, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    t_d = cfg.sweep.values()
    cols = {"t_d": t_d, **analytic_curves(cfg, t_d)}
    cols = {k: cols[k] for k in _ORDER if k in cols}
    path = os.path.join(out_dir, "sweep_analytic.csv")
    _write_csv(path, _header(cfg, "analytic"), cols)
    return path


def cmd_ensemble(cfg: ExperimentConfig, out_dir, threads=1):
    os.makedirs(out_dir, exist_ok=True)
    particle, optical, paul, init, sched, pipe = cfg.build()
    t_d = cfg.sweep.values()
    stats = dynamics.run_ensemble(t_d, cfg.n_shots, particle, optical, paul, init, sched, pipe,
                                  base_seed=cfg.base_seed, threads=threads)
    cols = {"t_d": t_d, **analytic_curves(cfg, t_d)}
    cols["du_mc"] = [s.du if s.n_shots >= 2 else math.nan for s in stats]
    cols["du_mc_err"] = [s.bootstrap_err for s in stats]
    cols["excluded_shots"] = [s.excluded for s in stats]
    cols = {k: cols[k] for k in _ORDER if k in cols}
    head = _header(cfg, "ensemble") + [f"# n_shots={cfg.n_shots}"]
    path = os.path.join(out_dir, "sweep_ensemble.csv")
    _write_csv(path, head, cols)
    for i, s in enumerate(stats):
        _write_csv(
            os.path.join(out_dir, f"points_{i:04d}.csv"),
            head + [f"# t_d={s.t_d!r} noise_var={s.noise_var!r} excluded={s.excluded} clamped={s.clamped}"],
            {"u_m": s.u, "u_dot_m_s": s.u_dot, "u_dot_over_omega_m": s.u_dot / s.omega_o},
        )
        if s.excluded:
            print(f"t_d={s.t_d:.6g} s: {s.excluded} shot(s) escaped and were excluded", file=sys.stderr)
    return path


def cmd_verify(stream=None):
    from .acceptance import run_all

    results = run_all(stream=stream or sys.stdout)
    return 0 if all(r.passed for r in results) else 1


def _load(args):
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg.base_seed = args.seed
    return cfg


def main(argv=None):
    ap = argparse.ArgumentParser(prog="freqjump", description=__doc__.strip().splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("analytic", "ensemble", "verify"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON experiment file (defaults: reported operating point)")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, help="overrides base_seed")
        p.add_argument("--threads", type=int, default=1, help="worker threads across t_d points")
    args = ap.parse_args(argv)
    if args.threads < 1:
        ap.error("--threads must be >= 1")
    try:
        if args.command == "verify":
            return cmd_verify()
        cfg = _load(args)
        if args.command == "analytic":
            print(cmd_analytic(cfg, args.out))
        else:
            print(cmd_ensemble(cfg, args.out, args.threads))
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
