"""Command-line front end.

Configuration files are JSON objects with the keys below; every key is
optional when a preset supplies it, and ``--set key.sub=value`` overrides a
single field (value parsed as JSON, falling back to a string).

    map         {"kind": "tent2" | "logistic4" | "piecewise_linear", ...}
    potential   {"kind": "geometric", "t": 1.0} or {"kind": "holder", "name": ..., ...}
    hole        {"z": z, "eps": eps} or {"intervals": [[a, b], ...]} or {}
    solver      {"N": int, "tol": float, "max_iter": int}
    experiment  command-specific parameters (see PRESETS)
    seed        integer, default 0
    out         output directory, default "out"
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import os
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from . import experiments as ex
from . import hofbauer as hb
from .maps import map_from_config
from .openmap import acip_sampler_logistic4, hole_from_config, lebesgue_sampler, monte_carlo_escape
from .potentials import ConfigurationError, normalize, potential_from_config
from .ulam import accim_density, conditional_evolve, escape_rate_spectral

EXIT_OK, EXIT_GATE, EXIT_USAGE = 0, 1, 2

DEFAULTS = {
    "map": {"kind": "tent2"},
    "potential": {"kind": "geometric", "t": 1.0},
    "hole": {},
    "solver": {"N": 2 ** 14, "tol": 1e-10, "max_iter": 100_000},
    "experiment": {},
    "seed": 0,
    "out": "out",
}

_EPS_LIST = [2.0 ** -k for k in range(6, 13)]

PRESETS = {
    "escape": {
        "tent2-markov": {"map": {"kind": "tent2"}, "hole": {"intervals": [[0.25, 0.5]]},
                         "solver": {"N": 1024}, "experiment": {"n_samples": 1_000_000}},
        "empty": {"map": {"kind": "tent2"}, "hole": {}, "solver": {"N": 1024},
                  "experiment": {"n_samples": 10_000, "n_steps": 40}},
        "logistic4-fixed-point": {"map": {"kind": "logistic4"}, "hole": {"z": 0.0, "eps": 2.0 ** -6},
                                  "experiment": {"n_samples": 1_000_000}},
    },
    "scaling": {
        "tent2-z2/3": {"map": {"kind": "tent2"}, "experiment": {"z": 2 / 3, "eps_list": _EPS_LIST, "gate_tol": 0.05}},
        "tent2-z2/5": {"map": {"kind": "tent2"}, "experiment": {"z": 0.4, "eps_list": _EPS_LIST, "gate_tol": 0.05}},
        "logistic4-z3/4": {"map": {"kind": "logistic4"},
                           "experiment": {"z": 0.75, "eps_list": _EPS_LIST, "gate_tol": 0.08}},
        "logistic4-z0": {"map": {"kind": "logistic4"},
                         "experiment": {"z": 0.0, "eps_list": _EPS_LIST, "gate_tol": 0.05}},
        "tent2-aperiodic": {"map": {"kind": "tent2"}, "potential": {"kind": "holder", "name": "constant", "c": 0.0},
                            "experiment": {"z": 1 / math.sqrt(2), "eps_list": _EPS_LIST, "gate_tol": 0.07}},
    },
    "staircase": {
        "tent2-z2/3": {"map": {"kind": "tent2"},
                       "experiment": {"z": 2 / 3, "eps_grid": {"lo": 2.0 ** -10, "hi": 2.0 ** -4, "n": 400},
                                      "plateau_threshold": 0.2}},
    },
    "hofbauer": {
        "tent2": {"map": {"kind": "tent2"},
                  "experiment": {"cuts": {}, "L_max": 5, "L": 2, "T_max": 20, "mode": "full"}},
        "logistic4-z3/4": {"map": {"kind": "logistic4"},
                           "experiment": {"cuts": {"z": 0.75}, "L_max": 4, "L": 1, "T_max": 20, "mode": "first"}},
    },
    "counterexample": {
        "default": {"solver": {"N": 2 ** 14},
                    "experiment": {"eps_list": _EPS_LIST, "mc_samples": 200_000, "mc_steps": 60}},
    },
    "accim": {
        "tent2-markov": {"map": {"kind": "tent2"}, "hole": {"intervals": [[0.0, 0.25]]}, "solver": {"N": 64},
                         "experiment": {"n_iter": 60}},
    },
}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# configuration

# specs whose fields depend on their "kind" are replaced whole, never merged
_ATOMIC = ("map", "potential", "hole")


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and v and k not in _ATOMIC:
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if args.preset:
        presets = PRESETS.get(command, {})
        if args.preset not in presets:
            raise UsageError(f"unknown preset {args.preset!r} for {command}; known: {sorted(presets)}")
        cfg = _merge(cfg, presets[args.preset])
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise UsageError("config must be a JSON object")
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg = _merge(cfg, loaded)
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        node = cfg
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = _parse_value(value)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.out is not None:
        cfg["out"] = args.out
    cfg["threads"] = args.threads if args.threads is not None else (os.cpu_count() or 1)
    return cfg


def _setup(cfg: dict):
    try:
        fmap = map_from_config(cfg["map"])
        pot = potential_from_config(cfg["potential"])
        hole = hole_from_config(cfg["hole"])
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"invalid map/potential/hole: {exc}") from exc
    return fmap, pot, hole


def _need(d: dict, key: str, where: str = "experiment"):
    if key not in d:
        raise UsageError(f"missing {where}.{key}")
    return d[key]


# ---------------------------------------------------------------------------
# output

def _header(cfg: dict, command: str) -> dict:
    return {"artifact_version": __version__, "command": command, "config": cfg}


def _write_json(path: Path, payload: dict, cfg: dict, command: str) -> None:
    ex.write_json({**_header(cfg, command), **payload}, path)


def _stamp(path: Path, cfg: dict, command: str) -> None:
    body = path.read_text()
    line = "# " + json.dumps(_header(cfg, command), sort_keys=True, default=ex._json_default)
    path.write_text(line + "\n" + body)


def _outdir(cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# commands

def cmd_escape(cfg: dict) -> int:
    fmap, pot, hole = _setup(cfg)
    solver, exp = cfg["solver"], cfg["experiment"]
    pot = normalize(pot, fmap)
    out = _outdir(cfg)
    if hole.is_empty:
        spectral = 0.0
        lam = 1.0
        chain = 1
    else:
        spectral, res, _ = escape_rate_spectral(fmap, pot, hole, int(solver["N"]), tol=float(solver["tol"]))
        lam = res.lam
        chain = res.dominant_chain
    summary = {"spectral_rate": spectral, "lambda": lam, "dominant_chain": chain}
    gate = True
    n_samples = int(exp.get("n_samples", 100_000))
    if n_samples > 0:
        sampler = acip_sampler_logistic4() if fmap.kind == "logistic4" else lebesgue_sampler
        n_steps = exp.get("n_steps")
        if n_steps is None:
            n_steps = 40 if hole.is_empty else int(min(4000, max(40, math.ceil(6.0 / max(spectral, 1e-6)))))
        series = monte_carlo_escape(fmap, hole, sampler, n_samples, int(n_steps), seed=int(cfg["seed"]),
                                    poly_degree=chain - 1)
        fit = series.fit
        agree = abs(fit.rate - spectral) <= 3 * fit.stderr or (hole.is_empty and fit.rate == 0.0)
        summary.update({"monte_carlo_rate": fit.rate, "monte_carlo_stderr": fit.stderr, "fit_r2": fit.r2,
                        "agreement_within_3_stderr": agree})
        series.to_csv(out / "survival.csv")
        _stamp(out / "survival.csv", cfg, "escape")
        (out / "survival.json").unlink(missing_ok=True)
        gate = agree
    summary["gate_pass"] = gate
    _write_json(out / "escape.json", summary, cfg, "escape")
    print(json.dumps(summary, default=ex._json_default))
    return EXIT_OK if gate else EXIT_GATE


def cmd_scaling(cfg: dict) -> int:
    fmap, pot, _ = _setup(cfg)
    solver, exp = cfg["solver"], cfg["experiment"]
    z = float(_need(exp, "z"))
    eps_list = _need(exp, "eps_list")
    pot = normalize(pot, fmap)
    series = ex.scaling_limit(fmap, pot, z, eps_list, int(solver["N"]), float(solver["tol"]),
                              mu_source=exp.get("mu_source", "auto"))
    slow = ex.slow_approach_check(fmap, z)
    growth = ex.Dn_growth_check(fmap, float(exp.get("q_min", 1.0)))
    tol = float(exp.get("gate_tol", 0.05))
    summary = series.summary()
    summary["slow_approach"] = slow
    summary["Dn_growth_pass"] = growth["pass"]
    if slow["pass"]:
        gate = abs(series.extrapolated_limit - series.predicted_limit) <= tol
        summary["gate"] = {"applied": True, "tolerance": tol, "pass": gate}
    else:
        gate = True
        summary["gate"] = {"applied": False, "reason": "slow-approach condition fails at z", "pass": True}
    out = _outdir(cfg)
    series.to_csv(out / "scaling.csv")
    _stamp(out / "scaling.csv", cfg, "scaling")
    _write_json(out / "scaling.json", summary, cfg, "scaling")
    print(json.dumps({k: summary[k] for k in ("predicted_limit", "extrapolated_limit", "gate")},
                     default=ex._json_default))
    return EXIT_OK if gate else EXIT_GATE


def _grid(spec) -> list[float]:
    if isinstance(spec, list):
        return [float(e) for e in spec]
    n = int(spec["n"])
    if spec.get("spacing", "geometric") == "geometric":
        return np.geomspace(float(spec["lo"]), float(spec["hi"]), n).tolist()
    return np.linspace(float(spec["lo"]), float(spec["hi"]), n).tolist()


def cmd_staircase(cfg: dict) -> int:
    fmap, pot, _ = _setup(cfg)
    solver, exp = cfg["solver"], cfg["experiment"]
    z = float(_need(exp, "z"))
    grid = _grid(_need(exp, "eps_grid"))
    if len(grid) < 200:
        raise UsageError(f"eps_grid has {len(grid)} points; at least 200 are required")
    pot = normalize(pot, fmap)
    sample = ex.devil_staircase(fmap, pot, z, grid, int(solver["N"]), float(solver["tol"]))
    threshold = float(exp.get("plateau_threshold", 0.2))
    gate = sample.monotone and sample.plateau_fraction >= threshold and not sample.failures
    summary = {"plateau_fraction": sample.plateau_fraction,
               "nontrivial_plateau_fraction": sample.nontrivial_plateau_fraction,
               "plateaus": len(sample.plateaus), "monotone": sample.monotone,
               "hole_changes_without_rate_change": sample.hole_changes_without_rate_change,
               "plateau_threshold": threshold, "gate_pass": gate, **sample.meta}
    out = _outdir(cfg)
    sample.to_csv(out / "staircase.csv")
    _stamp(out / "staircase.csv", cfg, "staircase")
    _write_json(out / "staircase.json", summary, cfg, "staircase")
    print(json.dumps(summary, default=ex._json_default))
    return EXIT_OK if gate else EXIT_GATE


def cmd_hofbauer(cfg: dict) -> int:
    fmap, _, _ = _setup(cfg)
    exp = cfg["experiment"]
    cut_spec = exp.get("cuts", {})
    L_max, L, T_max = int(exp.get("L_max", 5)), int(exp.get("L", 1)), int(exp.get("T_max", 20))
    cuts = hb.make_cutset(fmap, cut_spec.get("z"), cut_spec.get("eps0"), cut_spec.get("eps"),
                          L=L if cut_spec.get("eps0") is not None else None)
    ext = hb.build_extension(fmap, cuts, L_max, max_domains=int(exp.get("max_domains", 100_000)))
    out = _outdir(cfg)
    ext.export(out / "extension.graph")
    _stamp(out / "extension.graph", cfg, "hofbauer")
    comp = hb.transitive_component(ext)
    levels = ext.recomputed_levels()
    level_ok = all(levels.get(d.id) == d.level for d in ext.domains.values())
    bad_edges = hb.check_edges(ext)
    semi = hb.check_semiconjugacy(ext, int(exp.get("n_samples", 10_000)), seed=int(cfg["seed"]))
    Y = hb.trim(comp, L)
    summary = {"domains": len(ext.domains), "edges": len(ext.edges), "transitive_domains": len(comp.domains),
               "levels_consistent": level_ok, "bad_edges": len(bad_edges), "semiconjugacy": semi,
               "windows": [[w.domain_id, w.lo, w.hi] for w in Y]}
    gate = level_ok and not bad_edges and semi["failures"] == 0
    if Y:
        scheme = hb.first_return_scheme(comp, Y, T_max, mode=exp.get("mode", "first"), strict=False)
        scheme.export(out / "scheme.csv")
        _stamp(out / "scheme.csv", cfg, "hofbauer")
        summary.update({"cylinders": len(scheme.cylinders), "markov_violations": len(scheme.violations),
                        "uncovered_mass": scheme.uncovered_mass, "tail_fit": hb.fit_tail(scheme),
                        "kac": hb.kac_check(scheme), "expansion": hb.expansion_diagnostic(scheme, fmap),
                        "mode": scheme.mode})
        gate = gate and not scheme.violations
    summary["gate_pass"] = gate
    _write_json(out / "hofbauer.json", summary, cfg, "hofbauer")
    print(json.dumps({k: summary[k] for k in ("domains", "edges", "gate_pass")}))
    return EXIT_OK if gate else EXIT_GATE


def cmd_counterexample(cfg: dict) -> int:
    exp = cfg["experiment"]
    eps_list = exp.get("eps_list", _EPS_LIST)
    report = ex.counterexample_ex(int(cfg["solver"]["N"]), eps_list, int(exp.get("mc_samples", 200_000)),
                                  int(exp.get("mc_steps", 60)), seed=int(cfg["seed"]), tol=float(cfg["solver"]["tol"]))
    gate = (abs(report["tent_limit"] - 0.5) <= 0.05 and abs(report["logistic_limit"] - 0.5) <= 0.08
            and report["naive_outside_interval"] and report["conjugacy_mc"]["pass"])
    report["gate_pass"] = gate
    out = _outdir(cfg)
    _write_json(out / "counterexample.json", report, cfg, "counterexample")
    print(json.dumps({k: report[k] for k in ("tent_limit", "logistic_limit", "naive", "alternate", "gate_pass")}))
    return EXIT_OK if gate else EXIT_GATE


def cmd_accim(cfg: dict) -> int:
    fmap, pot, hole = _setup(cfg)
    solver, exp = cfg["solver"], cfg["experiment"]
    pot = normalize(pot, fmap)
    rate, res, op = escape_rate_spectral(fmap, pot, hole, int(solver["N"]), tol=float(solver["tol"]))
    g = accim_density(res, op)
    n_iter = int(exp.get("n_iter", 60))
    evo = conditional_evolve(op, np.ones(op.N), n_iter, g)
    positive = bool(np.all(g[~op.hole_mask] > 0))
    gate = res.residual < 1e-9 and positive and evo.distances[-1] < 1e-8 and evo.theta < 1.0
    summary = {"rate": rate, "lambda": res.lam, "residual": res.residual, "positive_off_hole": positive,
               "final_distance": float(evo.distances[-1]), "theta_hat": evo.theta, "degenerate": res.degenerate,
               "gate_pass": gate}
    out = _outdir(cfg)
    path = out / "accim.csv"
    with path.open("w") as fh:
        fh.write("bin,density,distance_step,distance\n")
        for i in range(op.N):
            d = repr(float(evo.distances[i])) if i < evo.distances.size else ""
            s = str(i) if i < evo.distances.size else ""
            fh.write(f"{i},{float(g[i])!r},{s},{d}\n")
    _stamp(path, cfg, "accim")
    _write_json(out / "accim.json", summary, cfg, "accim")
    print(json.dumps(summary, default=ex._json_default))
    return EXIT_OK if gate else EXIT_GATE


COMMANDS = {"escape": cmd_escape, "scaling": cmd_scaling, "staircase": cmd_staircase, "hofbauer": cmd_hofbauer,
            "counterexample": cmd_counterexample, "accim": cmd_accim}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="openmaps", description="Escape rates and induced schemes for interval maps with holes.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name, help=(COMMANDS[name].__doc__ or name).strip().splitlines()[0])
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--preset", help=f"built-in configuration: {', '.join(sorted(PRESETS.get(name, {})))}")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--seed", type=int, help="random seed (overrides config)")
        p.add_argument("--threads", type=int, help="thread count recorded in outputs; default: available cores")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config field")
    return parser


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = resolve_config(args.command, args)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigurationError, ValueError, KeyError, TypeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
