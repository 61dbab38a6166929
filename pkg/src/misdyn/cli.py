"""Command-line front end.

Every subcommand takes ``--scenario`` (a JSON file, or the name of a
built-in scenario) and writes its outputs plus a ``manifest.json`` into
``--output-dir``. ``misdyn replay manifest.json`` re-runs a recorded command
with the recorded configuration.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import bench
from .design import (DesignProblem, exhaustive_design, greedy_design, lazy_greedy_design,
                     partition_matroid_greedy, validate_bound)
from .dynamics import integrate_batch
from .errors import IllConditionedError, IntegrationError
from .rff import emulate_trajectory, fit_ridge, sample_features

log = logging.getLogger("misdyn")

BUILTIN = {"linear_quadratic": bench.scenario_linear_quadratic, "gravity": bench.scenario_gravity}


NUMERICAL = (IllConditionedError, IntegrationError, np.linalg.LinAlgError, FloatingPointError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def load_scenario(source) -> bench.ScenarioConfig:
    """Load a scenario from a JSON file, a built-in name, or a dict."""
    if isinstance(source, dict):
        data = source
    elif source in BUILTIN and not os.path.exists(source):
        return BUILTIN[source]()[1]
    else:
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise UsageError(f"cannot read scenario {source}: {exc}") from exc
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{source}: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise UsageError("scenario file must contain a JSON object")
    try:
        return bench.ScenarioConfig.from_dict(data)
    except (KeyError, TypeError) as exc:
        raise UsageError(f"{source if not isinstance(source, dict) else 'scenario'}: {exc.args[0] if exc.args else exc}") from exc


def config_hash(cfg: bench.ScenarioConfig) -> str:
    return hashlib.sha256(json.dumps(cfg.to_dict(), sort_keys=True).encode()).hexdigest()


def _write(outdir: Path, name: str, text: str) -> Path:
    path = outdir / name
    path.write_text(text)
    return path


def _write_manifest(outdir: Path, command: str, args: dict, cfg: bench.ScenarioConfig, outputs: list,
                    runtimes: dict):
    manifest = {
        "command": command,
        "args": args,
        "scenario": cfg.to_dict(),
        "config_sha256": config_hash(cfg),
        "seed": cfg.seed,
        "outputs": [p.name for p in outputs],
        "runtimes": runtimes,
        "versions": {"misdyn": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
    }
    _write(outdir, "manifest.json", json.dumps(manifest, indent=2))


def _apply_overrides(cfg: bench.ScenarioConfig, args) -> bench.ScenarioConfig:
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "budget", None) is not None:
        cfg.design_budget = args.budget
    if getattr(args, "D", None) is not None:
        cfg.rff_features = args.D
    if getattr(args, "algorithm", None) in ("greedy", "lazy", "exhaustive"):
        cfg.algorithm = args.algorithm
    if getattr(args, "realizations", None) is not None:
        cfg.realizations = args.realizations
    return cfg


def _trajectories_csv(trajs, label: str) -> str:
    lines = []
    d = trajs[0].states.shape[1]
    lines.append(",".join(["model", "k", "i", "t"] + [f"y_{j + 1}" for j in range(d)]))
    for k, tr in enumerate(trajs):
        for i, (t, y) in enumerate(zip(tr.grid.points, tr.states)):
            lines.append(",".join([label, str(k), str(i), repr(float(t))] + [repr(float(v)) for v in y]))
    return "\n".join(lines) + "\n"


def _random_seeds(cfg, system, n, seed):
    rng = np.random.default_rng(seed)
    lo, hi = system.domain_bounds[:, 0], system.domain_bounds[:, 1]
    if cfg.scenario == bench.GRAVITY:
        cands = bench.candidate_seeds(cfg)
        return cands[np.sort(rng.choice(len(cands), size=n, replace=False))]
    return rng.uniform(lo, hi, (n, system.dim))


# -- subcommands ----------------------------------------------------------

def cmd_simulate(cfg, args, outdir):
    system = bench.build_system(cfg)
    n = args.n_seeds if args.n_seeds is not None else cfg.random_budget
    seeds = _random_seeds(cfg, system, n, cfg.seed)
    trajs = integrate_batch(system, args.model == "true", seeds, cfg.grid, cfg.substeps)
    return [_write(outdir, "trajectories.csv", _trajectories_csv(trajs, args.model))]


def _design(cfg, args):
    system = bench.build_system(cfg)
    cands = bench.candidate_seeds(cfg)
    problem = bench.design_problem(cfg, system, cands, cfg.design_budget)
    alg = args.algorithm or cfg.algorithm
    if alg == "greedy":
        return greedy_design(problem)
    if alg == "lazy":
        return lazy_greedy_design(problem)
    if alg == "exhaustive":
        return exhaustive_design(problem)
    groups, limit = args.groups, args.group_limit
    coord = cands[:, args.partition_axis]
    edges = np.linspace(coord.min(), coord.max(), groups + 1)
    part = np.clip(np.searchsorted(edges, coord, side="right") - 1, 0, groups - 1).tolist()
    return partition_matroid_greedy(problem, part, {g: limit for g in range(groups)})


def cmd_design(cfg, args, outdir):
    result = _design(cfg, args)
    return [_write(outdir, "design.json", result.to_json())]


def _training_seeds(cfg, args, system):
    if args.design:
        d = json.loads(Path(args.design).read_text())
        return np.asarray(d["selected"], dtype=float), [int(i) for i in d["indices"]]
    n = cfg.design_budget if args.budget is not None else cfg.random_budget
    return _random_seeds(cfg, system, n, cfg.seed), list(range(n))


def cmd_fit(cfg, args, outdir):
    system = bench.build_system(cfg)
    seeds, ids = _training_seeds(cfg, args, system)
    obs = bench.observe(cfg, system, seeds, ids, cfg.seed)
    gp = bench.fit_correction(cfg, system, obs)
    return [_write(outdir, "observations.csv", obs.to_csv()), _write(outdir, "gp.json", gp.to_json())]


def cmd_emulate(cfg, args, outdir):
    system = bench.build_system(cfg)
    seeds, ids = _training_seeds(cfg, args, system)
    obs = bench.observe(cfg, system, seeds, ids, cfg.seed)
    fmap = sample_features(cfg.kernel_config, len(system.input_dims), cfg.rff_features, cfg.seed)
    model = fit_ridge(obs, fmap, input_dims=system.input_dims, output_dims=system.output_dims)
    test = _random_seeds(cfg, system, args.n_test, cfg.seed + 1)
    trajs = emulate_trajectory(system, model, test, cfg.grid, cfg.substeps)
    return [_write(outdir, "rff.json", model.to_json()),
            _write(outdir, "emulated.csv", _trajectories_csv(trajs, "corrected_model"))]


def cmd_benchmark(cfg, args, outdir):
    methods = args.methods.split(",") if args.methods else list(bench.METHODS)
    budgets = [int(b) for b in args.budgets.split(",")] if args.budgets else None
    report = bench.run_comparison(cfg, methods, cfg.realizations, budgets, threads=args.threads)
    for row in report.summary():
        log.info("%-8s K=%-3d mean error %.5g", row["method"], row["budget"], row["mean_error"])
    args._runtimes = report.runtimes
    # wall-clock times go to the manifest so that the report itself is reproducible byte for byte
    body = report.to_dict()
    del body["runtimes"]
    return [_write(outdir, "report.json", json.dumps(body, indent=2)), _write(outdir, "report.csv", report.to_csv())]


def cmd_validate_bounds(cfg, args, outdir):
    system = bench.build_system(cfg)
    cands = bench.candidate_seeds(cfg)
    problem = bench.design_problem(cfg, system, cands, cfg.design_budget)
    rng = np.random.default_rng(cfg.seed)
    seeds = np.sort(rng.choice(len(cands), size=args.n_seeds, replace=False))
    report = validate_bound(problem, seeds, args.delta, args.trials, rng)
    out = report.to_dict()
    out["seeds"] = seeds.tolist()
    return [_write(outdir, "bounds.json", json.dumps(out, indent=2))]


COMMANDS = {
    "simulate": cmd_simulate,
    "design": cmd_design,
    "fit": cmd_fit,
    "emulate": cmd_emulate,
    "benchmark": cmd_benchmark,
    "validate-bounds": cmd_validate_bounds,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="misdyn", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp):
        sp.add_argument("--scenario", required=True, help="scenario JSON file or built-in name")
        sp.add_argument("--seed", type=int, help="master seed (overrides the scenario)")
        sp.add_argument("--output-dir", default=".", help="directory for outputs and manifest")
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("-v", "--verbose", action="count", default=0)

    sp = sub.add_parser("simulate", help="integrate trajectories to CSV")
    common(sp)
    sp.add_argument("--model", choices=["true", "proxy"], default="true")
    sp.add_argument("--n-seeds", type=int)

    sp = sub.add_parser("design", help="select initial conditions")
    common(sp)
    sp.add_argument("--algorithm", choices=["greedy", "lazy", "exhaustive", "matroid"],
                    help="defaults to the scenario's algorithm")
    sp.add_argument("--budget", type=int)
    sp.add_argument("--groups", type=int, default=3, help="matroid: number of bins along --partition-axis")
    sp.add_argument("--group-limit", type=int, default=1, help="matroid: seeds allowed per bin")
    sp.add_argument("--partition-axis", type=int, default=0)

    for name, helptext in (("fit", "fit the GP correction"), ("emulate", "fit random features and emulate")):
        sp = sub.add_parser(name, help=helptext)
        common(sp)
        sp.add_argument("--design", help="design.json whose seeds are used for training")
        sp.add_argument("--budget", type=int)
        if name == "emulate":
            sp.add_argument("--D", type=int, help="number of random features")
            sp.add_argument("--n-test", type=int, default=20)

    sp = sub.add_parser("benchmark", help="compare design, random and agnostic training sets")
    common(sp)
    sp.add_argument("--realizations", type=int)
    sp.add_argument("--algorithm", choices=["greedy", "lazy", "exhaustive"], help="design algorithm")
    sp.add_argument("--methods", help="comma-separated subset of design,random,agnostic")
    sp.add_argument("--budgets", help="comma-separated budgets")

    sp = sub.add_parser("validate-bounds", help="check the proxy discrepancy bound numerically")
    common(sp)
    sp.add_argument("--delta", type=float, default=0.01)
    sp.add_argument("--trials", type=int, default=50)
    sp.add_argument("--n-seeds", type=int, default=1)

    sp = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    sp.add_argument("manifest")
    sp.add_argument("--output-dir")
    return p


def _run(command: str, args, cfg) -> None:
    outdir = Path(args.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    outputs = COMMANDS[command](cfg, args, outdir)
    runtimes = {"total_s": time.perf_counter() - t0, **getattr(args, "_runtimes", {})}
    recorded = {k: v for k, v in vars(args).items() if k not in ("command", "scenario", "output_dir", "_runtimes")}
    _write_manifest(outdir, command, recorded, cfg, outputs, runtimes)
    for path in outputs:
        log.info("wrote %s", path)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required")
        if args.command == "replay":
            manifest = json.loads(Path(args.manifest).read_text())
            ns = argparse.Namespace(**manifest["args"])
            ns.output_dir = args.output_dir or str(Path(args.manifest).parent)
            logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(message)s")
            cfg = load_scenario(manifest["scenario"])
            _run(manifest["command"], ns, cfg)
            return 0
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        cfg = _apply_overrides(load_scenario(args.scenario), args)
        _run(args.command, args, cfg)
        return 0
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NUMERICAL as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        # benchmark workers wrap failures with the realization that raised them
        if isinstance(exc.__cause__, NUMERICAL):
            print(f"numerical failure: {exc}", file=sys.stderr)
            return 2
        raise
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
