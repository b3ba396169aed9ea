"""Command-line entry point.

Subcommands: ``simulate`` (trajectory CSV plus events sidecar),
``equilibria`` (stationary-point table), ``sweep`` (friction diagram plus
thresholds sidecar), ``streamfield`` (difference-plane field grid for
three-seller markets), and ``verify`` (the check suite).

A run is configured by a JSON file (``--config``) and/or flags; flags win.
Unknown config keys are rejected.  All outputs are deterministic given the
configuration and seed, and files are written atomically (temp file plus
rename).  Exit codes: 0 success, 1 runtime error or failed check, 2
configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .bifurcation import make_gamma_grid, sweep
from .equilibria import ClusterSpec, solve_general, solve_homogeneous, \
    solve_two_cluster, solve_two_seller
from .integrator import IntegrationOptions, integrate
from .model import DeltaState, MarketParams, delta_field, simplex_residual
from .verify import CHECKS, run_suite

__all__ = ["main", "SCHEMAS"]

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


class ConfigError(ValueError):
    pass


#: shipped schema descriptions for every output format (CSV header contracts
#: and JSON Schema documents for the JSON payloads)
SCHEMAS = {
    "trajectory_csv": {
        "header": "t,J_1..J_N,residual",
        "notes": "one row per recorded sample; J columns in the caller's seller order",
    },
    "events_json": {
        "type": "object",
        "properties": {
            "events": {
                "type": "array",
                "items": {
                    "type": "object",
                    "properties": {
                        "time": {"type": "number"},
                        "kind": {"enum": ["ordering_flip", "entered_trapping_set",
                                          "converged"]},
                        "i": {"type": ["integer", "null"]},
                        "j": {"type": ["integer", "null"]},
                        "top": {"type": ["integer", "null"]},
                    },
                    "required": ["time", "kind"],
                },
            },
            "converged": {"type": "boolean"},
        },
        "required": ["events", "converged"],
    },
    "equilibria_csv": {
        "header": "point,provenance,branch,stability,cluster_stability,"
                  "J_1..J_N,residual,eig_re_max,eig_re_min",
    },
    "equilibria_json": {
        "type": "object",
        "properties": {
            "points": {
                "type": "array",
                "items": {
                    "type": "object",
                    "properties": {
                        "state": {"type": "array", "items": {"type": "number"}},
                        "residual": {"type": "number"},
                        "stability": {"enum": ["stable", "unstable", "marginal"]},
                        "provenance": {"type": "string"},
                        "eigenvalues_re": {"type": "array", "items": {"type": "number"}},
                        "eigenvalues_im": {"type": "array", "items": {"type": "number"}},
                    },
                    "required": ["state", "residual", "stability", "provenance"],
                },
            },
        },
        "required": ["points"],
    },
    "sweep_csv": {"header": "gamma,branch,delta1,stability"},
    "thresholds_json": {
        "type": "object",
        "properties": {
            "regime": {"type": "string"},
            "regime_string": {"type": "string"},
            "thresholds": {
                "type": "array",
                "items": {
                    "type": "object",
                    "properties": {
                        "value": {"type": "number"},
                        "kind": {"enum": ["saddle_node", "symmetry_breaking"]},
                    },
                    "required": ["value", "kind"],
                },
            },
        },
        "required": ["regime", "regime_string", "thresholds"],
    },
    "streamfield_csv": {"header": "delta1,delta2,g1,g2"},
    "verify_json": {
        "type": "object",
        "properties": {
            "reports": {
                "type": "array",
                "items": {
                    "type": "object",
                    "properties": {
                        "check": {"type": "string"},
                        "verdict": {"enum": ["pass", "fail"]},
                        "params": {"type": "object"},
                        "details": {"type": "object"},
                    },
                    "required": ["check", "verdict", "params", "details"],
                },
            },
            "all_passed": {"type": "boolean"},
        },
        "required": ["reports", "all_passed"],
    },
}


def _fmt(x: float) -> str:
    """17 significant digits: lossless double round-trip."""
    return format(float(x), ".17g")


def _write_atomic(path: str, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_csv(path: str, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(cell if isinstance(cell, str) else _fmt(cell)
                              for cell in row))
    _write_atomic(path, "\n".join(lines) + "\n")


def _write_json(path: str, payload) -> None:
    _write_atomic(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _parse_floats(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(tok) for tok in str(text).split(",") if tok.strip()]


def _load_config(args, allowed: set[str]) -> dict:
    """Merge the JSON config (if any) with explicitly supplied flags; flags
    win.  Rejects unknown config keys."""
    cfg = {}
    if args.config is not None:
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(cfg, dict):
            raise ConfigError("config file must contain a JSON object")
        unknown = sorted(set(cfg) - allowed)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    for key in allowed:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def _require(cfg: dict, key: str):
    if key not in cfg or cfg[key] is None:
        raise ConfigError(f"missing required field: {key}")
    return cfg[key]


def _market_params(cfg: dict) -> MarketParams:
    gamma = float(_require(cfg, "gamma"))
    if gamma <= 0:
        raise ConfigError(f"field 'gamma' must be positive, got {gamma}")
    attractiveness = _parse_floats(_require(cfg, "attractiveness"))
    try:
        return MarketParams(gamma, tuple(attractiveness))
    except ValueError as exc:
        raise ConfigError(f"field 'attractiveness' invalid: {exc}") from exc


def _integration_options(cfg: dict) -> IntegrationOptions:
    kwargs = {}
    for key in ("scheme", "dt_init", "rel_tol", "abs_tol", "t_max",
                "convergence_tol", "record_every", "max_step"):
        if cfg.get(key) is not None:
            kwargs[key] = cfg[key]
    try:
        return IntegrationOptions(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"integration options invalid: {exc}") from exc


def _event_payload(p: MarketParams, event) -> dict:
    """Events in the caller's 1-based seller labels, like the CSV headers."""
    out = {"time": event.time, "kind": event.kind, "i": None, "j": None, "top": None}
    if event.i is not None:
        out["i"] = int(p.order[event.i]) + 1
    if event.j is not None:
        out["j"] = int(p.order[event.j]) + 1
    if event.top is not None:
        out["top"] = int(p.order[event.top]) + 1
    return out


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

SIMULATE_KEYS = {"gamma", "attractiveness", "j0", "scheme", "dt_init", "rel_tol",
                 "abs_tol", "t_max", "convergence_tol", "record_every", "max_step"}


def cmd_simulate(args) -> int:
    cfg = _load_config(args, SIMULATE_KEYS)
    p = _market_params(cfg)
    j0 = _parse_floats(_require(cfg, "j0"))
    if len(j0) != p.n:
        raise ConfigError(f"field 'j0' must have {p.n} entries, got {len(j0)}")
    opts = _integration_options(cfg)
    traj = integrate(p, p.to_sorted(j0), opts)

    header = ["t"] + [f"J_{i + 1}" for i in range(p.n)] + ["residual"]
    rows = []
    for t, s in zip(traj.times, traj.states):
        rows.append([t, *p.to_original(s), simplex_residual(p, s)])
    if args.format == "json":
        payload = {
            "columns": header,
            "rows": [[float(v) for v in row] for row in rows],
            "events": [_event_payload(p, e) for e in traj.events],
            "converged": traj.converged,
        }
        _write_json(args.out, payload)
    else:
        _write_csv(args.out, header, rows)
        _write_json(args.out + ".events.json",
                    {"events": [_event_payload(p, e) for e in traj.events],
                     "converged": traj.converged})
    return EXIT_OK


EQUILIBRIA_KEYS = {"gamma", "attractiveness", "solver", "starts", "seed", "cluster_k"}


def _pick_solver(cfg: dict, p: MarketParams) -> str:
    solver = cfg.get("solver", "auto")
    if solver == "auto":
        if p.homogeneous:
            return "homogeneous"
        if p.n == 2:
            return "two_seller"
        return "general"
    if solver not in ("homogeneous", "two_seller", "two_cluster", "general"):
        raise ConfigError(f"field 'solver' must be auto|homogeneous|two_seller|"
                          f"two_cluster|general, got {solver!r}")
    return solver


def cmd_equilibria(args) -> int:
    cfg = _load_config(args, EQUILIBRIA_KEYS)
    p = _market_params(cfg)
    solver = _pick_solver(cfg, p)
    if solver == "homogeneous":
        points = solve_homogeneous(p).points
    elif solver == "two_seller":
        points = solve_two_seller(p)
    elif solver == "two_cluster":
        k = int(_require(cfg, "cluster_k"))
        a = p.attractiveness
        if not (1 <= k <= p.n - 1 and a[0] == a[k - 1] and a[k] == a[-1]):
            raise ConfigError("field 'cluster_k' does not match a two-level "
                              "attractiveness structure")
        points = solve_two_cluster(ClusterSpec(p.n, k, a[0], a[-1]), p.gamma)
    else:
        starts = int(cfg.get("starts", 500))
        seed = int(cfg.get("seed", 0))
        points = solve_general(p, starts, seed).points

    header = (["point", "provenance", "branch", "stability", "cluster_stability"]
              + [f"J_{i + 1}" for i in range(p.n)]
              + ["residual", "eig_re_max", "eig_re_min"])
    rows = []
    json_points = []
    for m, pt in enumerate(points):
        state = p.to_original(pt.state)
        rows.append([str(m), pt.provenance, pt.branch or "", pt.stability,
                     pt.cluster_stability or "", *state, pt.residual,
                     float(pt.eigenvalues.real.max()),
                     float(pt.eigenvalues.real.min())])
        json_points.append({
            "point": m,
            "state": [float(v) for v in state],
            "residual": pt.residual,
            "stability": pt.stability,
            "cluster_stability": pt.cluster_stability,
            "provenance": pt.provenance,
            "branch": pt.branch,
            "delta": pt.delta,
            "eigenvalues_re": [float(v) for v in pt.eigenvalues.real],
            "eigenvalues_im": [float(v) for v in pt.eigenvalues.imag],
        })
    if args.format == "json":
        _write_json(args.out, {"solver": solver, "points": json_points})
    else:
        _write_csv(args.out, header, rows)
    return EXIT_OK


SWEEP_KEYS = {"regime", "attractiveness", "gamma_min", "gamma_max", "grid_points",
              "spacing", "cluster_k"}


def cmd_sweep(args) -> int:
    cfg = _load_config(args, SWEEP_KEYS)
    regime = _require(cfg, "regime")
    attractiveness = _parse_floats(_require(cfg, "attractiveness"))
    grid = make_gamma_grid(float(_require(cfg, "gamma_min")),
                           float(_require(cfg, "gamma_max")),
                           int(cfg.get("grid_points", 60)),
                           cfg.get("spacing", "geometric"))
    params = None
    cluster = None
    if regime == "two_cluster":
        k = int(_require(cfg, "cluster_k"))
        a = sorted(attractiveness)
        if not (1 <= k <= len(a) - 1 and a[0] == a[k - 1] and a[k] == a[-1]):
            raise ConfigError("field 'cluster_k' does not match a two-level "
                              "attractiveness structure")
        cluster = ClusterSpec(len(a), k, a[0], a[-1])
    else:
        params = MarketParams(float(grid[0]), tuple(attractiveness))
    try:
        diagram = sweep(grid, regime, params=params, cluster=cluster)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    rows = []
    for g, branch_points in zip(diagram.gammas, diagram.points):
        for bp in branch_points:
            rows.append([float(g), bp.branch, bp.delta, bp.stability])
    thresholds_payload = {
        "regime": diagram.regime,
        "regime_string": diagram.regime_string,
        "thresholds": [{"value": t.value, "kind": t.kind} for t in diagram.thresholds],
    }
    if args.format == "json":
        _write_json(args.out, {
            **thresholds_payload,
            "rows": [{"gamma": r[0], "branch": r[1], "delta1": r[2], "stability": r[3]}
                     for r in rows],
        })
    else:
        _write_csv(args.out, ["gamma", "branch", "delta1", "stability"], rows)
        _write_json(args.out + ".thresholds.json", thresholds_payload)
    return EXIT_OK


STREAMFIELD_KEYS = {"gamma", "attractiveness", "delta_min", "delta_max", "resolution"}


def cmd_streamfield(args) -> int:
    cfg = _load_config(args, STREAMFIELD_KEYS)
    p = _market_params(cfg)
    if p.n != 3:
        raise ConfigError("streamfield requires exactly three sellers")
    d_min = float(cfg.get("delta_min", -3.0))
    d_max = float(cfg.get("delta_max", 3.0))
    resolution = int(cfg.get("resolution", 201))
    if not (d_min < d_max and resolution >= 2):
        raise ConfigError("need delta_min < delta_max and resolution >= 2")
    axis = np.linspace(d_min, d_max, resolution)
    rows = []
    for d1 in axis:
        for d2 in axis:
            g = delta_field(p, DeltaState(base=2, deltas=np.array([d1, d2])))
            rows.append([float(d1), float(d2), float(g[0]), float(g[1])])
    if args.format == "json":
        _write_json(args.out, {
            "columns": ["delta1", "delta2", "g1", "g2"],
            "rows": [[float(v) for v in row] for row in rows],
        })
    else:
        _write_csv(args.out, ["delta1", "delta2", "g1", "g2"], rows)
    return EXIT_OK


VERIFY_KEYS = {"gamma", "attractiveness", "checks", "seed", "trials", "cluster_k",
               "corrupt_field", "t_max"}


def cmd_verify(args) -> int:
    cfg = _load_config(args, VERIFY_KEYS)
    p = _market_params(cfg)
    checks = cfg.get("checks")
    if isinstance(checks, str):
        checks = [tok.strip() for tok in checks.split(",") if tok.strip()]
    if checks is not None:
        unknown = sorted(set(checks) - set(CHECKS))
        if unknown:
            raise ConfigError(f"unknown check name(s): {', '.join(unknown)}")
    cluster = None
    if cfg.get("cluster_k") is not None:
        k = int(cfg["cluster_k"])
        a = p.attractiveness
        if not (1 <= k <= p.n - 1 and a[0] == a[k - 1] and a[k] == a[-1]):
            raise ConfigError("field 'cluster_k' does not match a two-level "
                              "attractiveness structure")
        cluster = ClusterSpec(p.n, k, a[0], a[-1])
    opts = IntegrationOptions(t_max=cfg["t_max"]) if cfg.get("t_max") else None
    reports = run_suite(p, seed=int(cfg.get("seed", 0)),
                        trials=int(cfg.get("trials", 20)), opts=opts,
                        cluster=cluster, checks=checks,
                        corrupt=bool(cfg.get("corrupt_field", False)),
                        threads=args.threads or 1)
    all_passed = all(r.passed for r in reports)
    _write_json(args.out, {"reports": [r.to_dict() for r in reports],
                           "all_passed": all_passed})
    return EXIT_OK if all_passed else EXIT_RUNTIME


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def _add_common(sub):
    sub.add_argument("--config", help="JSON config file")
    sub.add_argument("--out", required=True, help="output file path")
    sub.add_argument("--format", choices=("csv", "json"), default="csv",
                     help="tabular output format (default csv)")
    sub.add_argument("--seed", type=int, default=None, help="random seed")
    sub.add_argument("--threads", type=int, default=None,
                     help="worker threads for independent sub-tasks")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prefdyn",
        description="Simulate, enumerate equilibria, sweep friction thresholds, "
                    "export field grids, and run structural checks for the "
                    "softmax preference market dynamics.")
    commands = parser.add_subparsers(dest="command", required=True)

    sim = commands.add_parser("simulate", help="integrate one trajectory")
    _add_common(sim)
    sim.add_argument("--gamma", type=float)
    sim.add_argument("--attractiveness")
    sim.add_argument("--j0", help="comma-separated initial preferences")
    sim.add_argument("--scheme", choices=("rk45", "rk4"))
    sim.add_argument("--t-max", dest="t_max", type=float)
    sim.add_argument("--record-every", dest="record_every", type=float)
    sim.add_argument("--rel-tol", dest="rel_tol", type=float)
    sim.add_argument("--abs-tol", dest="abs_tol", type=float)
    sim.add_argument("--dt-init", dest="dt_init", type=float)
    sim.add_argument("--convergence-tol", dest="convergence_tol", type=float)
    sim.add_argument("--max-step", dest="max_step", type=float)
    sim.set_defaults(func=cmd_simulate)

    eq = commands.add_parser("equilibria", help="enumerate stationary points")
    _add_common(eq)
    eq.add_argument("--gamma", type=float)
    eq.add_argument("--attractiveness")
    eq.add_argument("--solver",
                    choices=("auto", "homogeneous", "two_seller", "two_cluster",
                             "general"))
    eq.add_argument("--starts", type=int)
    eq.add_argument("--cluster-k", dest="cluster_k", type=int)
    eq.set_defaults(func=cmd_equilibria)

    sw = commands.add_parser("sweep", help="friction sweep with thresholds")
    _add_common(sw)
    sw.add_argument("--regime", choices=("homogeneous", "two_seller", "two_cluster"))
    sw.add_argument("--attractiveness")
    sw.add_argument("--gamma-min", dest="gamma_min", type=float)
    sw.add_argument("--gamma-max", dest="gamma_max", type=float)
    sw.add_argument("--grid-points", dest="grid_points", type=int)
    sw.add_argument("--spacing", choices=("geometric", "linear"))
    sw.add_argument("--cluster-k", dest="cluster_k", type=int)
    sw.set_defaults(func=cmd_sweep)

    sf = commands.add_parser("streamfield",
                             help="difference-plane field grid (three sellers)")
    _add_common(sf)
    sf.add_argument("--gamma", type=float)
    sf.add_argument("--attractiveness")
    sf.add_argument("--delta-min", dest="delta_min", type=float)
    sf.add_argument("--delta-max", dest="delta_max", type=float)
    sf.add_argument("--resolution", type=int)
    sf.set_defaults(func=cmd_streamfield)

    vf = commands.add_parser("verify", help="run the structural check suite")
    _add_common(vf)
    vf.add_argument("--gamma", type=float)
    vf.add_argument("--attractiveness")
    vf.add_argument("--checks", help="comma-separated subset of check names")
    vf.add_argument("--trials", type=int)
    vf.add_argument("--cluster-k", dest="cluster_k", type=int)
    vf.add_argument("--t-max", dest="t_max", type=float)
    vf.add_argument("--corrupt-field", dest="corrupt_field", action="store_const",
                    const=True, default=None,
                    help="test hook: inject a field fault (negative control)")
    vf.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"prefdyn: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"prefdyn: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
