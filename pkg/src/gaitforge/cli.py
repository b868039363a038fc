"""gaitforge command line: train, eval, sweep, rollout.

Exit codes: 0 success, 2 configuration or usage error, 3 numerical abort during
training, 4 corrupt policy file.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, ExperimentConfig, load_config, parse_config, parse_range
from .evaluation import (MetricsReport, RolloutLog, evaluate_policy, push_setup, push_test,
                         velocity_sweep, write_sweep_csv)
from .policy import CommandState, CorruptPolicy, load_policy
from .rollout import EpisodeRunner, EpisodeSetup
from .terrain import parse_terrain
from .trainer import NumericalAbort, train

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_POLICY = 0, 2, 3, 4


def _config(path) -> ExperimentConfig:
    return load_config(path) if path else parse_config("")


def _policy(path):
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"policy file not found: {p}")
    return load_policy(p)


def _runner(cfg: ExperimentConfig, episode_len: int) -> EpisodeRunner:
    t = cfg.train
    return EpisodeRunner(t.model, t.physics, t.gait, t.weights, episode_len=episode_len,
                         topple=t.topple, height_fraction=t.height_fraction)


def _terrain(text: str, cfg: ExperimentConfig):
    try:
        return parse_terrain(text, friction=cfg.train.friction)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    t = cfg.train
    overrides = {}
    if args.iterations is not None:
        overrides["iterations"] = args.iterations
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.task is not None:
        overrides["task"] = args.task
    try:
        t = replace(t, **overrides)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = Path(args.out or cfg.output_dir)

    def progress(s):
        if not args.quiet:
            print(f"iter {s.iteration:4d}  reward mean {s.reward_mean:12.3f}  "
                  f"max {s.reward_max:12.3f}  distance {s.distance_mean:7.3f}", flush=True)

    train(t, out_dir=out, progress=progress)
    print(f"wrote {out / 'policy.txt'}")
    return EXIT_OK


def _setup(args, cfg: ExperimentConfig) -> EpisodeSetup:
    terrain = _terrain(args.terrain or cfg.eval.terrain, cfg)
    v = cfg.eval.velocity if args.velocity is None else args.velocity
    try:
        command = CommandState(v, 0.0, 0.0)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return EpisodeSetup(terrain, (0.0,), (command,))


def cmd_eval(args) -> int:
    cfg = _config(args.config)
    policy = _policy(args.policy)
    trials = args.trials or cfg.eval.trials
    seed = cfg.seed if args.seed is None else args.seed
    runner = _runner(cfg, args.ticks or cfg.eval.episode_len)
    setup = _setup(args, cfg)
    out = Path(args.out or Path(cfg.output_dir) / "eval")
    out.mkdir(parents=True, exist_ok=True)
    blocks = []
    for k in range(trials):
        if args.push is not None:
            _, report = push_test(policy, args.push, args.push_dir, cfg.eval.push_time,
                                  seed=seed + k, runner=runner, terrain=setup.terrain,
                                  command=setup.commands[0])
        else:
            report, _ = evaluate_policy(policy, setup, runner, seed=seed + k)
        blocks.append(f"[trial {k}]\nseed = {seed + k}\n" + report.to_text())
        print(f"trial {k}: distance {report.distance:.3f} m, "
              f"{report.termination_cause}, stability {report.torso_stability:.3f}"
              + (f", recovered {report.recovered}" if report.recovered is not None else ""))
    (out / "metrics.txt").write_text("\n".join(blocks))
    # time series of the first trial
    logged = setup if args.push is None else push_setup(setup, args.push, args.push_dir,
                                                        cfg.eval.push_time)
    res = runner.run(policy, logged, seed=seed, log=True, log_every=cfg.eval.log_every)
    RolloutLog(res.log).to_csv(out / "rollout_log.csv")
    print(f"wrote {out / 'metrics.txt'} and {out / 'rollout_log.csv'}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args.config)
    velocities = parse_range(args.velocities)
    names = [s.strip() for s in (args.terrains or "").split(",") if s.strip()]
    if not names:
        raise ConfigError("empty terrain list")
    terrains = [_terrain(s, cfg) for s in names]
    policy = _policy(args.policy)
    seed = cfg.seed if args.seed is None else args.seed
    runner = _runner(cfg, args.ticks or cfg.eval.episode_len)
    rows = velocity_sweep(policy, terrains, velocities, trials=args.trials or 1, seed=seed,
                          runner=runner)
    out = Path(args.out or Path(cfg.output_dir) / "sweep.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(rows, out)
    print(f"wrote {len(rows)} rows to {out}")
    return EXIT_OK


def cmd_rollout(args) -> int:
    cfg = _config(args.config)
    policy = _policy(args.policy)
    seed = cfg.seed if args.seed is None else args.seed
    runner = _runner(cfg, args.ticks or cfg.eval.episode_len)
    setup = _setup(args, cfg)
    res = runner.run(policy, setup, seed=seed, log=True, log_every=args.log_every)
    out = Path(args.out or Path(cfg.output_dir) / "rollout_log.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    RolloutLog(res.log).to_csv(out)
    report = MetricsReport.from_result(res, runner.physics.dt, runner.model)
    out.with_suffix(".metrics.txt").write_text(report.to_text())
    print(f"{res.termination_cause} after {res.ticks_survived} ticks, "
          f"distance {res.distance:.3f} m; wrote {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gaitforge", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run ARS training from the warm start")
    t.add_argument("config")
    t.add_argument("--iterations", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--task", choices=("slope", "command", "stair"))
    t.add_argument("--out", help="output directory (default: experiment.output_dir)")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    def episode_args(q):
        q.add_argument("policy")
        q.add_argument("--config")
        q.add_argument("--terrain")
        q.add_argument("--velocity", type=float)
        q.add_argument("--seed", type=int)
        q.add_argument("--ticks", type=int, help="episode length in physics ticks")
        q.add_argument("--out")

    e = sub.add_parser("eval", help="evaluate a policy and write metrics and a log")
    episode_args(e)
    e.add_argument("--trials", type=int)
    e.add_argument("--push", type=float, help="impulse in N*s applied at eval.push_time")
    e.add_argument("--push-dir", default="lateral",
                   help="forward, backward, lateral, left, right or an angle in degrees")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="distance over terrains x target velocities")
    s.add_argument("policy")
    s.add_argument("--config")
    s.add_argument("--velocities", required=True, help="start:step:stop or a comma list")
    s.add_argument("--terrains", required=True, help="comma-separated terrain specs")
    s.add_argument("--trials", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--ticks", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    r = sub.add_parser("rollout", help="run one logged episode")
    episode_args(r)
    r.add_argument("--log-every", type=int, default=1)
    r.set_defaults(func=cmd_rollout)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except CorruptPolicy as exc:
        print(f"corrupt policy: {exc}", file=sys.stderr)
        return EXIT_POLICY
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        # ConfigError and any invalid parameter value
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
