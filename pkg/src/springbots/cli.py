"""Command line entry point: evolve, train, simulate, terrain, stats.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical
instability, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import analysis, evolution
from .config import ConfigError, RunConfig, load_config
from .controller import ControllerParams
from .lattice import EmptyMorphology, Genome, decode
from .learning import train
from .simulator import export_trajectory, rollout
from .terrain import generate_rugged

EXIT_OK, EXIT_USAGE, EXIT_UNSTABLE, EXIT_IO = 0, 1, 2, 3
OUTPUT_ENV = "SPRINGBOTS_OUTPUT_DIR"

log = logging.getLogger("springbots")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep or "." not in key:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        overrides[key.strip()] = value
    return cfg.with_overrides(overrides).validate()


def _output_dir(args, cfg: RunConfig) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    return Path(os.environ.get(OUTPUT_ENV) or cfg.run.output_dir)


def read_genome(path) -> Genome:
    """First non-comment line of the file is a genome record."""
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                try:
                    return Genome.from_record(line)
                except ValueError as exc:
                    raise CliError(f"{path}: {exc}", EXIT_USAGE) from None
    raise CliError(f"{path}: no genome record found", EXIT_USAGE)


def write_genome(path, genome: Genome, header: str) -> None:
    Path(path).write_text(f"# {header}\n{genome.to_record()}\n")


def cmd_evolve(args) -> int:
    cfg = _config(args)
    if args.workers:
        cfg = cfg.with_overrides({"run.workers": str(args.workers)})
    if args.checkpoint_every:
        cfg = cfg.with_overrides({"run.checkpoint_every": str(args.checkpoint_every)})
    out = _output_dir(args, cfg)
    ckpt_dir = out / "checkpoints"
    resume = None
    if args.resume is not None:
        resume = Path(args.resume) if args.resume else evolution.latest_checkpoint(ckpt_dir)
        if resume is None:
            raise CliError(f"no checkpoint to resume in {ckpt_dir}", EXIT_IO)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(f"# config_hash={cfg.hash}\n{cfg.to_text()}")
    problem = cfg.problem()
    evo = cfg.evolution_config()
    run_log = evolution.evolve(
        evo,
        problem,
        workers=cfg.run.workers,
        checkpoint_dir=ckpt_dir,
        checkpoint_every=cfg.run.checkpoint_every,
        config_hash=cfg.hash,
        resume=resume,
    )
    analysis.export_run_csv(run_log, out / "run.csv")
    best = run_log.population[0]
    header = f"config_hash={cfg.hash} generation={best.birth_generation} slot={best.slot}"
    write_genome(out / "best.genome", best.genome, header)
    # retraining replays the individual's own random stream, so this reproduces its fitness
    best = evolution.evaluate(best, problem, evo.seed, evo.loss_delta_threshold)
    if best.train_result.best_params is not None:
        best.train_result.best_params.save(out / "best.params", header=header)
    print(f"run directory: {out}")
    print(f"best fitness: {best.fitness!r} (initial {best.initial_performance!r})")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    genome = read_genome(args.genome)
    morph = decode(genome, cfg.lattice.side_length)
    rng = evolution.stream(cfg.run.seed, 0, 0, evolution.TRAIN)
    result = train(morph, cfg.build_terrain(), cfg.sim, cfg.learn, rng, cfg.friction_mode)
    out = _output_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    header = f"config_hash={cfg.hash}"
    result.write_log(out / "train_log.csv", header=header)
    if result.best_params is not None:
        result.best_params.save(out / "params.txt", header=header)
    print(f"fitness: {result.fitness!r}")
    print(f"initial: {result.initial_performance!r}")
    if not result.valid:
        print("training stopped: unstable rollout", file=sys.stderr)
        return EXIT_UNSTABLE
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _config(args)
    genome = read_genome(args.genome)
    morph = decode(genome, cfg.lattice.side_length)
    try:
        params = ControllerParams.load(args.params)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None
    try:
        result = rollout(morph, params, cfg.build_terrain(), cfg.sim, cfg.friction_mode, keep_positions=args.per_mass)
    except ValueError as exc:
        raise CliError(f"shape mismatch: {exc}", EXIT_USAGE) from None
    out = Path(args.out) if args.out else _output_dir(args, cfg) / "trajectory.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    export_trajectory(result, out, per_mass=args.per_mass, header=f"config_hash={cfg.hash}")
    print(f"loss: {result.loss!r}")
    print(f"displacement: {result.displacement!r}")
    if result.unstable:
        print("rollout unstable", file=sys.stderr)
        return EXIT_UNSTABLE
    return EXIT_OK


def cmd_terrain(args) -> int:
    try:
        terrain = generate_rugged(
            evolution.stream(args.seed), (args.slope_min, args.slope_max), (args.length_min, args.length_max), args.span
        )
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None
    terrain.save(args.out)
    print(f"{len(terrain.segments)} segments, span {terrain.span!r} -> {args.out}")
    return EXIT_OK


def cmd_stats(args) -> int:
    path = Path(args.path)
    if not path.exists():
        raise CliError(f"{path}: no such file", EXIT_IO)
    with open(path) as fh:
        first = fh.readline().strip()
    if first == evolution.CHECKPOINT_MAGIC:
        ckpt = evolution.read_checkpoint(path)
        stats = analysis.generation_stats(ckpt.population, ckpt.generation)
        print(f"config_hash={ckpt.config_hash} generation={ckpt.generation} individuals={len(ckpt.population)}")
        for name in analysis.STATS_COLUMNS:
            print(f"{name}: {getattr(stats, name)}")
        try:
            rho = analysis.size_fitness_correlation(ckpt.population)
            print(f"spearman_size_fitness: {rho!r}")
        except (analysis.ZeroVariance, ValueError) as exc:
            print(f"spearman_size_fitness: undefined ({exc})")
        return EXIT_OK
    try:
        run_log = analysis.read_run_csv(path)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None
    print(f"config_hash={run_log.config_hash} generations={len(run_log.generations)}")
    print(f"{'gen':>5} {'best':>10} {'best_init':>10} {'mean':>10} {'sd':>10} {'size':>8} {'invalid':>7}")
    for g in run_log.generations:
        print(
            f"{g.generation:>5} {g.best_trained:>10.4f} {g.best_initial:>10.4f} {g.mean_trained:>10.4f} "
            f"{g.sd_trained:>10.4f} {g.mean_size:>8.2f} {g.invalid_count:>7}"
        )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="springbots", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help="output directory (overrides the config and $" + OUTPUT_ENV + ")"):
        p.add_argument("-c", "--config", help="config file with [run], [lattice], [sim], ... sections")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one setting")
        p.add_argument("-o", "--out", help=out_help)

    p = sub.add_parser("evolve", help="run the evolutionary loop")
    common(p)
    p.add_argument("--workers", type=int, help="evaluation threads")
    p.add_argument("--checkpoint-every", type=int, help="write a checkpoint every N generations")
    p.add_argument("--resume", nargs="?", const="", default=None, metavar="CHECKPOINT",
                   help="continue from a checkpoint (default: latest in the run directory)")
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("train", help="train a controller for one genome")
    common(p)
    p.add_argument("genome", help="genome file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("simulate", help="roll out a genome with a trained controller")
    common(p, out_help="trajectory CSV path")
    p.add_argument("genome", help="genome file")
    p.add_argument("params", help="controller parameter file")
    p.add_argument("--per-mass", action="store_true", help="include every mass position")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("terrain", help="generate a rugged terrain file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--slope-min", type=float, default=-0.3)
    p.add_argument("--slope-max", type=float, default=0.3)
    p.add_argument("--length-min", type=float, default=0.1)
    p.add_argument("--length-max", type=float, default=0.3)
    p.add_argument("--span", type=float, default=1.25)
    p.add_argument("-o", "--out", required=True, help="segment file to write")
    p.set_defaults(func=cmd_terrain)

    p = sub.add_parser("stats", help="summarize a run CSV or a checkpoint")
    p.add_argument("path")
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(message)s",
    )
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, EmptyMorphology) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except evolution.ResumeMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except evolution.CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (RuntimeError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE


if __name__ == "__main__":
    sys.exit(main())
