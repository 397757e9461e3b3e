"""Command line front end.

    ffsim run [--config FILE] [--scenario TAG] [--occupancy LIST]
              [--reps K] [--seed U64] [--out DIR]
    ffsim analyze --in DIR
    ffsim snapshot [--config FILE] --at SECONDS [--scenario TAG]
                   [--occupancy N] [--seed U64] [--out FILE]

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

import argparse
import random
import sys
from pathlib import Path

from .dynamics import Simulation, place_agents
from .harness import (ConfigError, EmptyResultsError, ExperimentConfig,
                      analyze_directory, apply_overrides, emit_outputs,
                      parse_config, run_experiment)
from .population import sample_population, scenario_groups


def _load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    return parse_config(Path(path).read_text())


def _occupancy_list(raw: str) -> tuple[int, ...]:
    try:
        return tuple(int(tok) for tok in raw.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"--occupancy {raw!r} is not an integer list") from None


def _cmd_run(args) -> int:
    config = _load_config(args.config)
    config = apply_overrides(
        config,
        scenario=args.scenario,
        occupancy=_occupancy_list(args.occupancy) if args.occupancy else None,
        repetitions=args.reps,
        seed=args.seed,
        output_dir=args.out,
    )
    results = run_experiment(config)
    for r in results:
        if not r.ok:
            print(f"run {r.scenario} N={r.n} rep={r.rep} failed: {r.error}",
                  file=sys.stderr)
    out = emit_outputs(results, config)
    n_ok = sum(1 for r in results if r.ok)
    print(f"{n_ok}/{len(results)} runs ok, outputs in {out}")
    return 0


def _cmd_analyze(args) -> int:
    analyze_directory(args.indir)
    print(f"derived tables rebuilt in {args.indir}")
    return 0


def _cmd_snapshot(args) -> int:
    config = _load_config(args.config)
    config = apply_overrides(
        config,
        scenario=args.scenario,
        occupancy=(args.occupancy,) if args.occupancy is not None else None,
        seed=args.seed,
    )
    tag = config.scenario_tags()[0]
    n = config.occupancy[0]
    room = config.build_room()
    rng = random.Random(config.seed_base)
    agents = sample_population(scenario_groups(tag), n, rng)
    place_agents(room, agents, rng)
    sim = Simulation(room, agents, k_s=config.field_sensitivity_per_cell,
                     k_d=config.k_d, mu=config.mu, h=config.h, rng=rng)
    sim.run_until_time(args.at)
    grid = sim.render_grid()
    header = f"# scenario={tag} N={n} t={sim.time:g}s seed={config.seed_base}"
    text = header + "\n" + grid + "\n"
    if args.out:
        Path(args.out).write_text(text)
        print(f"snapshot written to {args.out}")
    else:
        print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ffsim", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment grid and emit outputs")
    p_run.add_argument("--config", help="key = value config file")
    p_run.add_argument("--scenario", help="hom|tau|agr|obs|agr,obs|agr+obs|1..6|all")
    p_run.add_argument("--occupancy", help="comma separated occupancy list")
    p_run.add_argument("--reps", type=int, help="repetitions per occupancy")
    p_run.add_argument("--seed", type=int, help="seed base")
    p_run.add_argument("--out", help="output directory")
    p_run.set_defaults(func=_cmd_run)

    p_an = sub.add_parser("analyze", help="recompute derived tables of a run directory")
    p_an.add_argument("--in", dest="indir", required=True, help="output directory")
    p_an.set_defaults(func=_cmd_analyze)

    p_snap = sub.add_parser("snapshot", help="dump the room grid of a single run")
    p_snap.add_argument("--config", help="key = value config file")
    p_snap.add_argument("--at", type=float, required=True, help="simulated seconds")
    p_snap.add_argument("--scenario", help="scenario tag override")
    p_snap.add_argument("--occupancy", type=int, help="occupancy override")
    p_snap.add_argument("--seed", type=int, help="seed override")
    p_snap.add_argument("--out", help="write to file instead of stdout")
    p_snap.set_defaults(func=_cmd_snapshot)
    return parser


def cli(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 1
    except (EmptyResultsError, OSError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def main():
    sys.exit(cli())


if __name__ == "__main__":
    main()
