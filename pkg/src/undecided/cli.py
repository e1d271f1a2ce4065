"""Command-line experiment runner.

Subcommands: ``simulate-complete``, ``simulate-expander``, ``oracle``,
``sweep``, ``phases`` (plus ``run``, which dispatches on the file's mode).
Parameters resolve with precedence flags > ``--config`` file > defaults, and
every resolved value, with its source, lands in ``manifest.json``.
"""
from __future__ import annotations

import argparse
import copy
import json
import os
import shutil
import sys
import tempfile
from importlib import metadata
from pathlib import Path

import numpy as np

from . import analysis, complete, expander, oracle
from .config import ColorConfiguration, InitSpec, generate_initial, oligarchic_family
from .errors import UndecidedError, ValidationError

MODES = ("complete", "expander", "oracle", "sweep", "phases")
SUBCOMMANDS = {
    "simulate-complete": "complete",
    "simulate-expander": "expander",
    "oracle": "oracle",
    "sweep": "sweep",
    "phases": "phases",
}

DEFAULTS = {
    "mode": "complete",
    "seed": 0,
    "seeds": None,
    "out": "out",
    "init": {"kind": "uniform", "n": 10_000, "k": 4, "alpha": 0.2, "elite": None, "counts": None},
    "run": {"max_rounds": 100_000, "record_every": 1, "alpha_hint": 0.2},
    "expander": {"d": 8, "alpha": 4.0, "c": 3.0, "laziness": 0.5, "eps": None, "t_bar": None, "tau": None},
    "oracle": {"absorption": True, "horizon": None, "q": 0},
    "analysis": {"gamma": analysis.DEFAULT_GAMMA, "eps_tilde": analysis.DEFAULT_EPS_TILDE,
                 "lambda_threshold": 10.0, "kappa": 10.0},
    "sweep": {"targets": [2, 4, 8, 16, 32], "k": 46, "workers": 1, "specs": None},
}


def tool_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def resolve(file_cfg: dict, flags: dict) -> tuple[dict, dict]:
    """Merge defaults, file and flags; return (resolved, source of each leaf)."""
    unknown = set(file_cfg) - set(DEFAULTS)
    if unknown:
        raise ValidationError(f"unknown experiment fields: {sorted(unknown)}")
    resolved, sources = {}, {}
    for key, default in DEFAULTS.items():
        if isinstance(default, dict):
            section = file_cfg.get(key) or {}
            if not isinstance(section, dict):
                raise ValidationError(f"field {key!r} must be an object")
            bad = set(section) - set(default)
            if bad:
                raise ValidationError(f"unknown fields in {key!r}: {sorted(bad)}")
            resolved[key], sources[key] = {}, {}
            for leaf, value in default.items():
                resolved[key][leaf], sources[key][leaf] = copy.deepcopy(value), "default"
                if leaf in section:
                    resolved[key][leaf], sources[key][leaf] = section[leaf], "file"
                flag = flags.get(f"{key}.{leaf}")
                if flag is not None:
                    resolved[key][leaf], sources[key][leaf] = flag, "flag"
        else:
            resolved[key], sources[key] = copy.deepcopy(default), "default"
            if key in file_cfg:
                resolved[key], sources[key] = file_cfg[key], "file"
            if flags.get(key) is not None:
                resolved[key], sources[key] = flags[key], "flag"
    init, init_src = resolved["init"], sources["init"]
    if init["counts"] is not None:
        if not isinstance(init["counts"], list) or not init["counts"]:
            raise ValidationError("init.counts must be a non-empty list")
        derived = {"kind": "custom", "n": sum(init["counts"]), "k": len(init["counts"]), "alpha": 0.0}
        for leaf, value in derived.items():
            if init_src[leaf] == "default":
                init[leaf], init_src[leaf] = value, "derived"
    if resolved["mode"] not in MODES:
        raise ValidationError(f"mode must be one of {MODES}, got {resolved['mode']!r}")
    seeds = resolved["seeds"]
    if seeds is not None and (not isinstance(seeds, list) or not seeds):
        raise ValidationError("seeds must be a non-empty list")
    return resolved, sources


def _seeds(cfg: dict) -> list[int]:
    return [int(s) for s in cfg["seeds"]] if cfg["seeds"] else [int(cfg["seed"])]


def _init_spec(cfg: dict) -> InitSpec:
    init = {k: v for k, v in cfg["init"].items() if v is not None}
    return InitSpec.from_dict(init)


def _run_params(cfg: dict, seed: int) -> complete.RunParams:
    r = cfg["run"]
    return complete.RunParams(int(r["max_rounds"]), int(r["record_every"]), float(r["alpha_hint"]), seed)


class _Writer:
    """Collects artifacts in a scratch directory, moved into place only on success."""

    def __init__(self, out: Path):
        self.out = out
        self.created = not out.exists()
        out.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(prefix=".partial-", dir=out))
        self.names: list[str] = []

    def text(self, name: str, content: str) -> None:
        path = self.tmp / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(content)
        self.names.append(name)

    def json(self, name: str, obj) -> None:
        self.text(name, json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def commit(self) -> None:
        for name in self.names:
            dest = self.out / name
            dest.parent.mkdir(parents=True, exist_ok=True)
            os.replace(self.tmp / name, dest)
        shutil.rmtree(self.tmp, ignore_errors=True)

    def abort(self) -> None:
        shutil.rmtree(self.tmp, ignore_errors=True)
        if self.created and not any(self.out.iterdir()):
            self.out.rmdir()


def _prefix(seeds: list[int], seed: int) -> str:
    return "" if len(seeds) == 1 else f"seed_{seed}/"


def _do_complete(cfg, w: _Writer, with_phases: bool = False) -> None:
    spec = _init_spec(cfg)
    seeds = _seeds(cfg)
    config = generate_initial(spec)
    if with_phases:
        cfg["run"]["record_every"] = 1
    a = cfg["analysis"]
    for seed in seeds:
        trace = complete.run(config, _run_params(cfg, seed))
        pre = _prefix(seeds, seed)
        w.text(pre + "trace.csv", trace.to_csv())
        w.json(pre + "summary.json", trace.summary())
        if with_phases:
            b = analysis.detect_phases(trace, a["gamma"], a["eps_tilde"])
            mono = analysis.check_monotonicity(trace, a["lambda_threshold"], a["kappa"])
            w.json(pre + "phases.json", {
                **b.to_dict(),
                "plateau_persistence": analysis.plateau_persistence(trace, a["gamma"], a["eps_tilde"]),
                "plateau_target": analysis.plateau_target(b.md0, a["gamma"]),
                "monotonicity": {"eligible": mono.eligible, "violations": mono.violations,
                                 "locations": list(mono.locations), "insufficient_data": mono.insufficient_data},
            })


def _do_expander(cfg, w: _Writer) -> None:
    e = cfg["expander"]
    spec = _init_spec(cfg)
    config = generate_initial(spec)
    seeds = _seeds(cfg)
    for seed in seeds:
        rng = np.random.default_rng(seed)
        graph = expander.gen_regular_graph(config.n, int(e["d"]), rng)
        if e["t_bar"] is None or e["tau"] is None:
            auto = expander.PhaseParams.for_graph(graph, e["alpha"], e["c"], e["laziness"], e["eps"])
            t_bar = auto.t_bar if e["t_bar"] is None else int(e["t_bar"])
            tau = auto.tau if e["tau"] is None else int(e["tau"])
        else:
            t_bar, tau = int(e["t_bar"]), int(e["tau"])
        pp = expander.PhaseParams(t_bar, tau, e["alpha"], e["c"], e["laziness"])
        if e["eps"] is None:
            e["eps"] = 1 / config.n**2
        e["t_bar"], e["tau"] = t_bar, tau
        states = complete.AgentStates.from_config(config, rng)
        trace = expander.run_expander(graph, states, _run_params(cfg, seed), pp, rng)
        pre = _prefix(seeds, seed)
        w.text(pre + "graph.txt", graph.to_edge_list())
        w.text(pre + "trace.csv", trace.to_csv())
        w.json(pre + "summary.json", {**trace.summary(), "phase_params": pp.to_dict(),
                                      "rounds_per_phase": 2 * tau, "phases": trace.extra["phases"]})


def _do_oracle(cfg, w: _Writer) -> None:
    init = cfg["init"]
    if init["counts"] is not None:
        config = ColorConfiguration.from_dict({"counts": init["counts"], "q": cfg["oracle"]["q"]})
    else:
        config = generate_initial(_init_spec(cfg))
    dist = oracle.exact_step_distribution(config)
    w.text("distribution.json", dist.to_json() + "\n")
    if cfg["oracle"]["absorption"]:
        report = oracle.exact_absorption(config, cfg["oracle"]["horizon"])
        w.text("absorption.json", report.to_json() + "\n")


def _do_sweep(cfg, w: _Writer) -> None:
    s, init = cfg["sweep"], cfg["init"]
    if s["specs"]:
        specs = [InitSpec.from_dict(x) for x in s["specs"]]
    else:
        specs = oligarchic_family(int(init["n"]), int(s["k"]), float(init["alpha"]), s["targets"])
    result = analysis.sweep_md(specs, _seeds(cfg), _run_params(cfg, 0), cfg["analysis"]["gamma"],
                               cfg["analysis"]["eps_tilde"], int(s["workers"]))
    s["specs"] = [sp.to_dict() for sp in specs]
    w.text("sweep.csv", result.to_csv())
    w.json("fit.json", result.fit())


def run_experiment(file_cfg: dict, flags: dict | None = None) -> Path:
    """Resolve parameters, run the experiment and write its artifacts.

    Returns the output directory.  On failure no artifact is left behind.
    """
    cfg, sources = resolve(file_cfg, flags or {})
    out = Path(cfg["out"])
    w = _Writer(out)
    try:
        mode = cfg["mode"]
        if mode == "complete":
            _do_complete(cfg, w)
        elif mode == "phases":
            _do_complete(cfg, w, with_phases=True)
        elif mode == "expander":
            _do_expander(cfg, w)
        elif mode == "oracle":
            _do_oracle(cfg, w)
        else:
            _do_sweep(cfg, w)
        w.json("manifest.json", {
            "tool": "undecided",
            "version": tool_version(),
            "resolved": cfg,
            "sources": sources,
            "artifacts": sorted(w.names),
        })
    except BaseException:
        w.abort()
        raise
    w.commit()
    return out


def _csv_ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="undecided", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in [*SUBCOMMANDS, "run"]:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON experiment file")
        p.add_argument("--seed", type=int)
        p.add_argument("--seeds", type=_csv_ints, help="comma-separated seed list")
        p.add_argument("--out")
        p.add_argument("--kind", dest="init.kind", choices=["uniform", "oligarchic", "figure2", "custom"])
        p.add_argument("--n", dest="init.n", type=int)
        p.add_argument("--k", dest="init.k", type=int)
        p.add_argument("--alpha", dest="init.alpha", type=float)
        p.add_argument("--elite", dest="init.elite", type=int)
        p.add_argument("--counts", dest="init.counts", type=_csv_ints)
        p.add_argument("--max-rounds", dest="run.max_rounds", type=int)
        p.add_argument("--record-every", dest="run.record_every", type=int)
        p.add_argument("--alpha-hint", dest="run.alpha_hint", type=float)
        p.add_argument("--degree", dest="expander.d", type=int)
        p.add_argument("--t-bar", dest="expander.t_bar", type=int)
        p.add_argument("--tau", dest="expander.tau", type=int)
        p.add_argument("--q", dest="oracle.q", type=int, help="undecided agents in the oracle start state")
        p.add_argument("--horizon", dest="oracle.horizon", type=int)
        p.add_argument("--gamma", dest="analysis.gamma", type=float)
        p.add_argument("--eps-tilde", dest="analysis.eps_tilde", type=float)
        p.add_argument("--workers", dest="sweep.workers", type=int)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config") and v is not None}
    if args.command != "run":
        flags["mode"] = SUBCOMMANDS[args.command]
    try:
        file_cfg = json.loads(args.config.read_text()) if args.config else {}
        if not isinstance(file_cfg, dict):
            raise ValidationError("experiment file must hold a JSON object")
        out = run_experiment(file_cfg, flags)
    except json.JSONDecodeError as exc:
        return _fail(ValidationError(f"experiment file is not valid JSON: {exc}"))
    except OSError as exc:
        return _fail(exc, code=2)
    except UndecidedError as exc:
        return _fail(exc)
    print(out)
    return 0


def _fail(exc: Exception, code: int | None = None) -> int:
    code = code if code is not None else getattr(exc, "exit_code", 2)
    print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
