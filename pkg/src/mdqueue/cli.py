"""Batch command-line front end: JSON config in, JSON summary + CSV artifacts out.

Exit codes: 0 success, 1 numerical failure (residuals/tolerances), 2 config
error.  Config errors are detected before any artifact is written; numerical
failures still produce a summary.json describing the failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dist import ServiceDist
from .fredholm import FredholmError, evaluate_rate, lln_path
from .grids import GridField2D, GridPath
from .oracle import build_qp, solve_min_norm
from .paths import ModelParams, forward_q, kiefer_energy, kiefer_from_sheet
from .renewal import RenewalConvergenceError
from .sim import ScalingRegime, decomposition, flow_balance_residuals, lln_check, mc_tail, simulate, spawn_streams

log = logging.getLogger(__name__)

COMMANDS = ("rate", "controls", "oracle-check", "simulate", "identity-check", "kiefer-check", "dist-info")

NUMERICAL_ERRORS = (FredholmError, RenewalConvergenceError, np.linalg.LinAlgError, FloatingPointError, AssertionError)


class ConfigError(Exception):
    """Anything wrong with the config file or referenced inputs."""


def _version_string() -> str:
    return f"mdqueue-v{__version__}"


def _expect(block: dict, where: str, required: tuple = (), optional: tuple = ()) -> dict:
    if not isinstance(block, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = set(block) - set(required) - set(optional)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    missing = set(required) - set(block)
    if missing:
        raise ConfigError(f"{where}: missing keys {sorted(missing)}")
    return block


def _number(block: dict, key: str, where: str, default=None):
    v = block.get(key, default)
    if not isinstance(v, (int, float)) or isinstance(v, bool):
        raise ConfigError(f"{where}.{key}: expected a number, got {v!r}")
    return v


class Run:
    """Validated config plus loaded inputs; all ConfigError checks happen here."""

    def __init__(self, cfg: dict, cfg_dir: Path, seed_override: int | None):
        _expect(
            cfg,
            "config",
            required=("command",),
            optional=("model", "dist", "grid", "tolerances", "io", "sim", "kiefer", "seed"),
        )
        self.command = cfg["command"]
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}; expected one of {COMMANDS}")

        self.cfg_dir = cfg_dir
        self.seed = seed_override if seed_override is not None else cfg.get("seed", 0)
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a nonnegative integer")

        try:
            self.dist = ServiceDist.from_spec(cfg["dist"]) if "dist" in cfg else None
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"dist: {exc}") from exc

        tol = _expect(cfg.get("tolerances", {}), "tolerances", optional=("fredholm", "renewal"))
        self.tol_fredholm = float(_number(tol, "fredholm", "tolerances", 1e-12))
        self.tol_renewal = float(_number(tol, "renewal", "tolerances", 1e-10))

        self.model = None
        if "model" in cfg:
            if self.dist is None:
                raise ConfigError("model block requires a dist block (mu is the reciprocal mean)")
            m = _expect(cfg["model"], "model", required=("sigma", "beta", "q0"))
            try:
                self.model = ModelParams(
                    mu=self.dist.mu,
                    sigma=float(_number(m, "sigma", "model")),
                    beta=float(_number(m, "beta", "model")),
                    q0=float(_number(m, "q0", "model")),
                )
            except ValueError as exc:
                raise ConfigError(f"model: {exc}") from exc

        self.grid = None
        if "grid" in cfg:
            g = _expect(cfg["grid"], "grid", required=("horizon", "n_steps"), optional=("n_x",))
            horizon = float(_number(g, "horizon", "grid"))
            n_steps = _number(g, "n_steps", "grid")
            n_x = _number(g, "n_x", "grid", 32)
            if horizon <= 0 or n_steps != int(n_steps) or n_steps < 2 or n_x != int(n_x) or n_x < 1:
                raise ConfigError("grid: horizon > 0, integer n_steps >= 2, integer n_x >= 1 required")
            self.grid = {"horizon": horizon, "n_steps": int(n_steps), "n_x": int(n_x)}

        io = _expect(cfg.get("io", {}), "io", optional=("q_csv", "sheet_csv"))
        self.q_path = None
        if "q_csv" in io:
            p = (cfg_dir / io["q_csv"]).resolve()
            if not p.is_file():
                raise ConfigError(f"io.q_csv: file not found: {p}")
            try:
                self.q_path = GridPath.from_csv(p)
            except (ValueError, IndexError) as exc:
                raise ConfigError(f"io.q_csv: {exc}") from exc
        self.sheet = None
        if "sheet_csv" in io:
            p = (cfg_dir / io["sheet_csv"]).resolve()
            if not p.is_file():
                raise ConfigError(f"io.sheet_csv: file not found: {p}")
            try:
                self.sheet = GridField2D.from_csv(p)
            except (ValueError, IndexError) as exc:
                raise ConfigError(f"io.sheet_csv: {exc}") from exc

        self.sim = None
        if "sim" in cfg:
            s = _expect(
                cfg["sim"],
                "sim",
                required=("ladder", "b_rule", "reps", "horizon"),
                optional=("arrival", "event", "lln_t", "decomposition_steps"),
            )
            ladder = s["ladder"]
            if not (isinstance(ladder, list) and ladder and all(isinstance(n, int) and n >= 1 for n in ladder)):
                raise ConfigError("sim.ladder: expected a nonempty list of positive integers")
            rule = _expect(s["b_rule"], "sim.b_rule", required=("kind", "value"))
            reps = s["reps"]
            if not isinstance(reps, int) or reps < 1:
                raise ConfigError("sim.reps must be a positive integer")
            arrival = _expect(s.get("arrival", {}), "sim.arrival", optional=("family", "shape"))
            event = None
            if "event" in s:
                e = _expect(s["event"], "sim.event", required=("kind", "t", "a"))
                if e["kind"] not in ("sup", "terminal"):
                    raise ConfigError("sim.event.kind must be 'sup' or 'terminal'")
                event = {"kind": e["kind"], "t": float(_number(e, "t", "sim.event")), "a": float(_number(e, "a", "sim.event"))}
            if self.model is None:
                raise ConfigError("sim block requires model and dist blocks")
            try:
                regimes = [ScalingRegime(n=n, rule=(rule["kind"], float(rule["value"])), beta=self.model.beta) for n in ladder]
                for sr in regimes:
                    sr.rho  # validates positivity eagerly
            except ValueError as exc:
                raise ConfigError(f"sim.b_rule: {exc}") from exc
            self.sim = {
                "regimes": regimes,
                "reps": reps,
                "horizon": float(_number(s, "horizon", "sim")),
                "arrival_family": arrival.get("family", "exponential"),
                "arrival_shape": int(arrival.get("shape", 1)),
                "event": event,
                "lln_t": float(_number(s, "lln_t", "sim", s["horizon"])),
                "decomposition_steps": int(_number(s, "decomposition_steps", "sim", 200)),
            }
            if self.sim["arrival_family"] not in ("exponential", "erlang"):
                raise ConfigError("sim.arrival.family must be 'exponential' or 'erlang'")

        self.kiefer = None
        if "kiefer" in cfg:
            k = _expect(cfg["kiefer"], "kiefer", optional=("m", "n", "t_horizon", "value"))
            self.kiefer = {
                "m": int(_number(k, "m", "kiefer", 512)),
                "n": int(_number(k, "n", "kiefer", 512)),
                "t_horizon": float(_number(k, "t_horizon", "kiefer", 1.0)),
                "value": float(_number(k, "value", "kiefer", 1.0)),
            }
            if self.kiefer["m"] < 2 or self.kiefer["n"] < 2 or self.kiefer["t_horizon"] <= 0:
                raise ConfigError("kiefer: m, n >= 2 and t_horizon > 0 required")

    # -- per-command requirements -----------------------------------------

    def require(self, **blocks):
        for name, ok in blocks.items():
            if not ok:
                raise ConfigError(f"command {self.command!r} requires the {name} block")


# -- command implementations ----------------------------------------------


def _rate_artifacts(run: Run, out: Path) -> dict:
    q = run.q_path
    res = evaluate_rate(q, run.model, run.dist, n_x=run.grid["n_x"] if run.grid else 32, tol=run.tol_fredholm)
    res.adjoint.to_csv(out / "pbar.csv")
    res.forcing.to_csv(out / "h.csv")
    res.controls.w0dot.to_csv(out / "w0dot.csv")
    res.controls.wdot.to_csv(out / "wdot.csv")
    res.controls.kdot.to_csv(out / "kdot.csv")
    summary = {
        "rate": res.rate,
        "dual": res.dual,
        "duality_gap": res.duality_gap,
        "primal_energy": res.primal_energy,
        "horizon": q.horizon,
        "n_steps": q.n_steps,
        "truncation_tail_mass": res.diagnostics["truncation_tail_mass"],
        "solver": {k: res.diagnostics[k] for k in ("method", "iterations", "residual")},
    }
    return summary, res


def cmd_rate(run: Run, out: Path) -> dict:
    run.require(model=run.model is not None, io_q_csv=run.q_path is not None)
    summary, _ = _rate_artifacts(run, out)
    return summary


def cmd_controls(run: Run, out: Path) -> dict:
    run.require(model=run.model is not None, io_q_csv=run.q_path is not None)
    summary, res = _rate_artifacts(run, out)
    q_rt = forward_q(res.controls, run.model, run.dist, tol=run.tol_renewal)
    q_rt.to_csv(out / "q_roundtrip.csv")
    scale = max(1.0, float(np.max(np.abs(run.q_path.values))))
    summary["roundtrip_sup_error"] = float(np.max(np.abs(q_rt.values - run.q_path.values)))
    summary["roundtrip_rel_error"] = summary["roundtrip_sup_error"] / scale
    return summary


def cmd_oracle_check(run: Run, out: Path) -> dict:
    run.require(model=run.model is not None, io_q_csv=run.q_path is not None, grid=run.grid is not None)
    n_x = run.grid["n_x"]
    res = evaluate_rate(run.q_path, run.model, run.dist, n_x=n_x, tol=run.tol_fredholm)
    _, val_off = solve_min_norm(build_qp(run.q_path, run.model, run.dist, n_x=n_x, zero_mean=False))
    _, val_on = solve_min_norm(build_qp(run.q_path, run.model, run.dist, n_x=n_x, zero_mean=True))
    denom = max(res.rate, 1e-12)
    summary = {
        "value": val_off,
        "flagsOn": val_on,
        "flagsOff": val_off,
        "fredholmValue": res.rate,
        "relGap": abs(val_off - res.rate) / denom,
        "N": run.q_path.n_steps,
        "M": n_x,
    }
    (out / "oracle.csv").write_text(
        "quantity,value\n"
        + "\n".join(f"{k},{v!r}" for k, v in summary.items() if isinstance(v, float))
        + "\n"
    )
    return summary


def _trace_csv(trace, path: Path) -> None:
    names = {0: "arrival", 1: "departure"}
    with open(path, "w", newline="") as fh:
        fh.write("time,type,customer\n")
        for t, ty, cid in zip(trace.event_times, trace.event_types, trace.event_ids):
            fh.write(f"{float(t)!r},{names[int(ty)]},{int(cid)}\n")


def cmd_simulate(run: Run, out: Path) -> dict:
    run.require(model=run.model is not None, sim=run.sim is not None)
    s = run.sim
    traces_by_n = {}
    for ridx, sr in enumerate(s["regimes"]):
        streams = spawn_streams(run.seed + ridx, s["reps"])
        traces_by_n[sr.n] = [
            simulate(
                run.model, run.dist, sr, s["horizon"], rng,
                arrival_family=s["arrival_family"], arrival_shape=s["arrival_shape"],
                seed_key=(run.seed + ridx, rep),
            )
            for rep, rng in enumerate(streams)
        ]
        _trace_csv(traces_by_n[sr.n][0], out / f"trace_n{sr.n}.csv")

    report = lln_check(traces_by_n, run.model.mu, s["lln_t"])
    pct = report.percentiles()

    ladder = []
    for sr in s["regimes"]:
        ladder.append(
            {
                "n": sr.n,
                "b": sr.b,
                "rho": sr.rho,
                "condition_value": sr.condition_value,
                "lln_percentile": pct[sr.n],
            }
        )
    summary = {
        "reps": s["reps"],
        "horizon": s["horizon"],
        "lln_t": s["lln_t"],
        "lln_percentile_level": report.percentile,
        "lln_monotone_decreasing": report.monotone_decreasing,
        "ladder": ladder,
    }
    if s["event"] is not None:
        rows = mc_tail(
            run.model, run.dist, s["regimes"], s["event"], s["reps"], run.seed + 10_000, s["horizon"],
            arrival_family=s["arrival_family"], arrival_shape=s["arrival_shape"],
        )
        summary["tail"] = [
            {
                "n": r.n, "b": r.b, "reps": r.reps, "hits": r.hits, "p_hat": r.p_hat,
                "wilson": list(r.wilson) if r.wilson else None, "slope": r.slope, "censored": r.censored,
            }
            for r in rows
        ]
        summary["tail_note"] = (
            "trend diagnostic only: moderate-deviations probabilities at realistic "
            "(n, a) are far below Monte Carlo resolution, so no estimate here is "
            "compared against the rate function"
        )

    with open(out / "ladder.csv", "w", newline="") as fh:
        fh.write("n,b,rho,condition_value,lln_percentile\n")
        for row in ladder:
            fh.write(
                f"{row['n']},{row['b']!r},{row['rho']!r},{row['condition_value']!r},{row['lln_percentile']!r}\n"
            )
    return summary


def cmd_identity_check(run: Run, out: Path) -> dict:
    run.require(model=run.model is not None, sim=run.sim is not None)
    s = run.sim
    steps = s["decomposition_steps"]
    rows = []
    for ridx, sr in enumerate(s["regimes"]):
        streams = spawn_streams(run.seed + ridx, s["reps"])
        for rep, rng in enumerate(streams):
            tr = simulate(
                run.model, run.dist, sr, s["horizon"], rng,
                arrival_family=s["arrival_family"], arrival_shape=s["arrival_shape"],
                seed_key=(run.seed + ridx, rep),
            )
            fb = flow_balance_residuals(tr)
            dec = decomposition(tr, run.dist, steps)
            dec2 = decomposition(tr, run.dist, 2 * steps)
            rows.append(
                {
                    "n": sr.n,
                    "rep": rep,
                    "flow_balance_max": int(np.max(np.abs(fb))) if len(fb) else 0,
                    "residual_sup": dec.sup_residual,
                    "residual_sup_refined": dec2.sup_residual,
                    "quadrature_bound": dec.quadrature_bound,
                }
            )
    with open(out / "identity.csv", "w", newline="") as fh:
        fh.write("n,rep,flow_balance_max,residual_sup,residual_sup_refined,quadrature_bound\n")
        for r in rows:
            fh.write(
                f"{r['n']},{r['rep']},{r['flow_balance_max']},{r['residual_sup']!r},"
                f"{r['residual_sup_refined']!r},{r['quadrature_bound']!r}\n"
            )
    summary = {
        "traces": len(rows),
        "decomposition_steps": steps,
        "flow_balance_max": max(r["flow_balance_max"] for r in rows),
        "residual_sup_max": max(r["residual_sup"] for r in rows),
        "all_within_bound": all(
            r["residual_sup"] <= 1e-8 + r["quadrature_bound"] for r in rows
        ),
        "ladder": [
            {"n": sr.n, "b": sr.b, "condition_value": sr.condition_value} for sr in s["regimes"]
        ],
    }
    return summary


def cmd_kiefer_check(run: Run, out: Path) -> dict:
    if run.sheet is not None:
        b = run.sheet
    else:
        k = run.kiefer or {"m": 512, "n": 512, "t_horizon": 1.0, "value": 1.0}
        b = GridField2D(k["t_horizon"], np.full((k["m"] + 1, k["n"] + 1), k["value"]))
    kfield = kiefer_from_sheet(b)
    e_k, e_b = kiefer_energy(b)
    kfield.to_csv(out / "kiefer.csv")
    ix = kfield.values.shape[0] // 2
    summary = {
        "sheet_shape": list(b.values.shape),
        "t_horizon": b.t_horizon,
        "energy_kdot": e_k,
        "energy_bdot": e_b,
        "energy_rel_gap": abs(e_k - e_b) / max(e_b, 1e-300),
        "k_half_T": float(kfield.values[ix, -1]),
    }
    return summary


def cmd_dist_info(run: Run, out: Path) -> dict:
    run.require(dist=run.dist is not None)
    d = run.dist
    T = run.grid["horizon"] if run.grid else d.horizon_for_tail(1e-6)
    n = run.grid["n_steps"] if run.grid else 200
    t = np.linspace(0.0, T, n + 1)
    with open(out / "dist.csv", "w", newline="") as fh:
        fh.write("t,cdf,pdf,eq_cdf,eq_pdf\n")
        for ti, c, p, c0, p0 in zip(t, d.cdf(t), d.pdf(t), d.eq_cdf(t), d.eq_pdf(t)):
            fh.write(f"{float(ti)!r},{float(c)!r},{float(p)!r},{float(c0)!r},{float(p0)!r}\n")
    return {
        "family": d.family,
        "mean": d.mean,
        "mu": d.mu,
        "horizon_tail_1e-6": d.horizon_for_tail(1e-6),
        "table_horizon": T,
    }


DISPATCH = {
    "rate": cmd_rate,
    "controls": cmd_controls,
    "oracle-check": cmd_oracle_check,
    "simulate": cmd_simulate,
    "identity-check": cmd_identity_check,
    "kiefer-check": cmd_kiefer_check,
    "dist-info": cmd_dist_info,
}


def _write_summary(out: Path, summary: dict, quiet: bool) -> None:
    text = json.dumps(summary, indent=2, sort_keys=True) + "\n"
    (out / "summary.json").write_text(text)
    if not quiet:
        sys.stdout.write(text)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="mdqueue", description=__doc__)
    parser.add_argument("--config", required=True, help="JSON config file")
    parser.add_argument("--out", required=True, help="output directory (created if missing)")
    parser.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    parser.add_argument("--quiet", action="store_true", help="suppress the summary on stdout")
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")

    cfg_path = Path(args.config)
    try:
        if not cfg_path.is_file():
            raise ConfigError(f"config file not found: {cfg_path}")
        try:
            cfg = json.loads(cfg_path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON in {cfg_path}: {exc}") from exc
        run = Run(cfg, cfg_path.parent, args.seed)
        out = Path(args.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
        if not (out.is_dir()):
            raise ConfigError(f"output path is not a directory: {out}")
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return 2

    base = {"command": run.command, "version": _version_string(), "seed": run.seed}
    try:
        summary = DISPATCH[run.command](run, out)
    except NUMERICAL_ERRORS as exc:
        _write_summary(out, dict(base, status="numerical-failure", error=f"{type(exc).__name__}: {exc}"), args.quiet)
        return 1
    except (ConfigError, ValueError) as exc:
        # ValueError from the numerics means inconsistent inputs (e.g. a q path
        # whose q(0) does not match the configured q0): a config problem
        sys.stderr.write(f"config error: {exc}\n")
        return 2
    _write_summary(out, dict(base, status="ok", **summary), args.quiet)
    return 0


if __name__ == "__main__":
    sys.exit(main())
